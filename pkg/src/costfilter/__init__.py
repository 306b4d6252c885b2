"""Stereo matching by content-adaptive cost-volume filtering.

Four filtering operators over a shared correlation cost volume — embedding-
guided bilateral filtering, dynamic per-pixel filters, pixel-adaptive
convolution, and four-direction semi-global aggregation — inside a minimal
end-to-end pipeline with hand-written, finite-difference-certified backward
passes.
"""

from .cost_volume import CostVolume, build_concat, build_correlation, project_4d_to_3d
from .disparity import DisparityMap
from .errors import ConfigError, DataError, FormatError, TrainingError
from .metrics import MetricReport, bad_ratio, epe, evaluate
from .pipeline import PipelineConfig, init_params, run_backward, run_forward
from .regression import smooth_l1, soft_argmin, upsample_disparity, weighted_loss
from .tensor_ops import WindowSpec, conv2d, softmax, window_gather
from .training import TrainConfig, sgd_step, train_pipeline

__all__ = [
    "ConfigError", "CostVolume", "DataError", "DisparityMap", "FormatError",
    "MetricReport", "PipelineConfig", "TrainConfig", "TrainingError",
    "WindowSpec", "bad_ratio", "build_concat", "build_correlation", "conv2d",
    "epe", "evaluate", "init_params", "project_4d_to_3d", "run_backward",
    "run_forward", "sgd_step", "smooth_l1", "soft_argmin", "softmax",
    "train_pipeline", "upsample_disparity", "weighted_loss", "window_gather",
]

__version__ = "0.1.0"
