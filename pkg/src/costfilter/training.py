"""Desk-scale training: momentum-SGD over the matching pipeline on synthetic
stereograms, plus standalone contrastive training of the embedding network on
segmentation toys.

Loss per step: mean smooth-L1 between the upsampled prediction and the
stereogram ground truth; with the SABF filter, the mean contrastive embedding
loss over square/background labels joins at a small weight (weighted average,
weight-sum normalized). Runs are bit-deterministic per seed in single-threaded
mode.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .disparity import DisparityMap
from .errors import ConfigError, TrainingError
from .features import embed_forward, embed_vjp, embedding_loss, embedding_loss_vjp
from .metrics import epe
from .pipeline import (PipelineConfig, _embp, init_params, run_backward,
                       run_forward, standardize)
from .regression import smooth_l1, smooth_l1_grad, weighted_loss
from .synthetic import StereogramSpec, make_segmentation_toy, make_stereogram, \
    stereogram_labels
from .tensor_ops import WindowSpec


@dataclass
class TrainConfig:
    filter: str = "none"
    steps: int = 500
    lr: float = 1e-3
    momentum: float = 0.9
    max_disp: int = 16
    downsample: int = 1
    seed: int = 7
    height: int = 64
    width: int = 128
    square_disparity: int = 4
    noise: float = 0.0
    win: WindowSpec = field(default_factory=WindowSpec)
    sigma_s: float = 0.7
    sigma_r: float = 0.1
    embedding_loss_weight: float = 0.06
    loss_mode: str = "sum-normalized"
    threads: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.lr < 0:
            raise ConfigError("learning rate must be >= 0")

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(filter=self.filter, max_disp=self.max_disp,
                              downsample=self.downsample, win=self.win,
                              sigma_s=self.sigma_s, sigma_r=self.sigma_r,
                              threads=self.threads)


def sgd_step(params, grads, lr: float, momentum: float, velocity):
    """One momentum-SGD update: v' = momentum*v + g; p' = p - lr*v'.

    Accepts either bare arrays or dicts of arrays; returns (params', velocity').
    """
    if isinstance(params, np.ndarray):
        v = momentum * velocity + grads
        return params - lr * v, v
    new_p, new_v = {}, {}
    for name in params:
        v = momentum * velocity[name] + grads[name]
        new_v[name] = v
        new_p[name] = params[name] - lr * v
    return new_p, new_v


@dataclass
class TrainResult:
    params: dict
    losses: list  # loss before each update, plus the final loss: steps + 1 entries
    final_epe: float


def train_pipeline(cfg: TrainConfig) -> TrainResult:
    """Train end to end on one seeded stereogram; returns weights and loss curve."""
    spec = StereogramSpec(seed=cfg.seed, height=cfg.height, width=cfg.width,
                          square_disparity=cfg.square_disparity, noise=cfg.noise)
    left, right, gt = make_stereogram(spec)
    pcfg = cfg.pipeline_config()
    params = init_params(pcfg, seed=cfg.seed)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}

    joint = cfg.filter == "sabf" and cfg.embedding_loss_weight > 0
    labels = stereogram_labels(gt, cfg.square_disparity) if joint else None
    w_e = cfg.embedding_loss_weight
    if cfg.loss_mode == "sum-normalized":
        c_main, c_emb = 1.0 / (1.0 + w_e), w_e / (1.0 + w_e)
    else:
        c_main, c_emb = 1.0, w_e

    losses = []
    for step in range(cfg.steps + 1):
        st = run_forward(left, right, params, pcfg)
        main = smooth_l1(st.disp, gt)
        if joint:
            el_sum, cnt = embedding_loss(st.emb_full, labels)
            loss = weighted_loss([main, el_sum / cnt], [1.0, w_e], cfg.loss_mode)
        else:
            loss = main
        if not np.isfinite(loss):
            raise TrainingError(f"training diverged at step {step}: loss = {loss}")
        losses.append(float(loss))
        if step == cfg.steps or cfg.lr == 0.0:
            continue
        g_main = smooth_l1_grad(st.disp, gt, upstream=c_main)
        extra = None
        if joint:
            extra = embedding_loss_vjp(st.emb_full, labels, upstream=c_emb / cnt)
        grads = run_backward(st, params, g_main, emb_extra_grad=extra)
        params, velocity = sgd_step(params, grads, cfg.lr, cfg.momentum, velocity)

    final = run_forward(left, right, params, pcfg)
    return TrainResult(params, losses, epe(final.disp, gt))


def evaluate_on_training_pair(params: dict, cfg: TrainConfig) -> float:
    """EPE of the given weights on the config's own stereogram."""
    spec = StereogramSpec(seed=cfg.seed, height=cfg.height, width=cfg.width,
                          square_disparity=cfg.square_disparity, noise=cfg.noise)
    left, right, gt = make_stereogram(spec)
    st = run_forward(left, right, params, cfg.pipeline_config())
    return epe(st.disp, gt)


# ---------------------------------------------------------------------------
# standalone embedding training on segmentation toys

def init_embedding_params(seed: int = 0, dtype=np.float32) -> dict:
    pcfg = PipelineConfig(filter="sabf", max_disp=2, downsample=1)
    full = init_params(pcfg, seed=seed, dtype=dtype)
    return {k: v for k, v in full.items() if k.startswith("emb.")}


def train_embedding(steps: int = 500, train_seeds=tuple(range(8)), H: int = 32,
                    W: int = 48, lr: float = 0.01, momentum: float = 0.9,
                    noise: float = 0.05, init_seed: int = 0) -> dict:
    """Descend the mean contrastive loss over a small rotation of toy images."""
    params = init_embedding_params(init_seed)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    toys = [make_segmentation_toy(s, H, W, noise=noise) for s in train_seeds]
    for step in range(steps):
        image, labels = toys[step % len(toys)]
        emb, cache = embed_forward(standardize(image), _embp(params))
        loss_sum, count = embedding_loss(emb, labels)
        if not np.isfinite(loss_sum):
            raise TrainingError(f"embedding training diverged at step {step}")
        g_emb = embedding_loss_vjp(emb, labels, upstream=1.0 / count)
        grads = {}
        for i, (gw, gb) in enumerate(embed_vjp(_embp(params), cache, g_emb), 1):
            grads[f"emb.l{i}.w"] = gw
            grads[f"emb.l{i}.b"] = gb
        params, velocity = sgd_step(params, grads, lr, momentum, velocity)
    return params


def class_distance_ratio(params: dict, seed: int, H: int = 32, W: int = 48,
                         noise: float = 0.05, pairs: int = 4000) -> tuple:
    """(mean intra-class L1, mean inter-class L1) on a held-out toy image,
    estimated over seeded random pixel pairs."""
    image, labels = make_segmentation_toy(seed, H, W, noise=noise)
    emb, _ = embed_forward(standardize(image), _embp(params))
    flat = emb.reshape(emb.shape[0], -1).T
    lab = labels.reshape(-1)
    rng = np.random.default_rng(seed + 99)
    idx0 = np.flatnonzero(lab == 0)
    idx1 = np.flatnonzero(lab == 1)
    intra = []
    for idx in (idx0, idx1):
        if len(idx) < 2:
            continue
        a = rng.choice(idx, size=pairs)
        b = rng.choice(idx, size=pairs)
        intra.append(np.abs(flat[a] - flat[b]).sum(axis=1))
    a = rng.choice(idx0, size=pairs)
    b = rng.choice(idx1, size=pairs)
    inter = np.abs(flat[a] - flat[b]).sum(axis=1)
    return float(np.concatenate(intra).mean()), float(inter.mean())
