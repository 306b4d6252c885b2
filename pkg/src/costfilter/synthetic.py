"""Synthetic data at desk scale: random-dot stereograms with a single shifted
square, and two-region segmentation toys for embedding training.

Stereogram construction (textures are quantized to the 8-bit grid so that
PNG round trips are exact):
  * left  = seeded random dot texture with a centered square region,
  * right = left with the square's texture shifted LEFT by the disparity, so
    a left square pixel (u, v) matches right pixel (u - delta, v),
  * the band the square occludes in the right view makes the corresponding
    left background pixels unmatchable: marked invalid in the ground truth,
  * the band the square vacates in the right view ("revealed" background) is
    filled with fresh seeded texture.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .disparity import DisparityMap
from .errors import ConfigError


@dataclass
class StereogramSpec:
    seed: int = 0
    height: int = 64
    width: int = 128
    square_disparity: int = 4
    square_fraction: float = 0.4
    noise: float = 0.0

    def __post_init__(self):
        if not 0 < self.square_fraction < 1:
            raise ConfigError(f"square fraction must be in (0, 1), got {self.square_fraction}")
        if self.square_disparity < 0:
            raise ConfigError(f"square disparity must be >= 0, got {self.square_disparity}")
        side = self.square_side
        d = self.square_disparity
        if side + 2 * d >= min(self.height, self.width) or side < 1:
            raise ConfigError(
                f"square of side {side} with margin {d} does not fit in "
                f"{self.height}x{self.width}")
        if self.noise < 0:
            raise ConfigError("noise amplitude must be >= 0")

    @property
    def square_side(self) -> int:
        return int(round(self.square_fraction * min(self.height, self.width)))


def _texture(rng, shape):
    # draw straight from the 8-bit grid: writing these as PNG/PPM is lossless
    return rng.integers(0, 256, size=shape).astype(np.float32) / 255.0


def make_stereogram(spec: StereogramSpec):
    """Returns (left (3, H, W), right (3, H, W), gt DisparityMap)."""
    rng = np.random.default_rng(spec.seed)
    H, W, d = spec.height, spec.width, spec.square_disparity
    side = spec.square_side
    r0 = (H - side) // 2
    c0 = (W - side) // 2

    left = _texture(rng, (3, H, W))
    right = left.copy()
    rows = slice(r0, r0 + side)
    # square texture shifted left by the disparity
    right[:, rows, c0 - d:c0 + side - d] = left[:, rows, c0:c0 + side]
    # background revealed behind the square's old position: fresh texture
    if d > 0:
        right[:, rows, c0 + side - d:c0 + side] = _texture(rng, (3, side, d))
    if spec.noise > 0:
        jit = rng.uniform(-spec.noise, spec.noise, size=right.shape).astype(np.float32)
        right = np.clip(np.rint((right + jit) * 255.0), 0, 255).astype(np.float32) / 255.0

    gt = np.zeros((H, W), dtype=np.float32)
    gt[rows, c0:c0 + side] = d
    valid = np.ones((H, W), dtype=bool)
    if d > 0:
        # left background pixels whose right-view match is hidden by the square
        valid[rows, c0 - d:c0] = False
    return left, right, DisparityMap(gt, valid)


def stereogram_labels(gt: DisparityMap, square_disparity: int) -> np.ndarray:
    """Two-class label map for joint embedding training: 1 on the square, else 0."""
    return ((gt.values == square_disparity) & gt.valid).astype(np.int64) \
        if square_disparity > 0 else np.zeros(gt.values.shape, dtype=np.int64)


@dataclass
class SegToyParams:
    """Seeded parameters of a segmentation toy: region colors and the split line.

    The boundary is the zero set of (u - cx) * nx + (v - cy) * ny; label 1 is
    the positive side.
    """

    colors: np.ndarray  # (2, 3)
    nx: float
    ny: float
    cx: float
    cy: float


def segmentation_toy_params(seed: int, H: int, W: int):
    """Draw the toy's parameters; returns (params, generator for further draws)."""
    rng = np.random.default_rng(seed)
    colors = rng.uniform(0.0, 1.0, size=(2, 3)).astype(np.float32)
    while np.abs(colors[0] - colors[1]).sum() < 0.5:
        colors = rng.uniform(0.0, 1.0, size=(2, 3)).astype(np.float32)
    theta = rng.uniform(0, 2 * np.pi)
    cx = rng.uniform(0.3, 0.7) * W
    cy = rng.uniform(0.3, 0.7) * H
    return SegToyParams(colors, float(np.cos(theta)), float(np.sin(theta)),
                        float(cx), float(cy)), rng


def make_segmentation_toy(seed: int, H: int, W: int, noise: float = 0.05):
    """Two colored regions split by a seeded random straight line, plus noise.

    Returns (image (3, H, W), labels (H, W) in {0, 1}).
    """
    p, rng = segmentation_toy_params(seed, H, W)
    vv, uu = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    labels = ((uu - p.cx) * p.nx + (vv - p.cy) * p.ny > 0).astype(np.int64)
    image = p.colors[labels].transpose(2, 0, 1).copy()
    if noise > 0:
        image = image + rng.uniform(-noise, noise, size=image.shape).astype(np.float32)
    return np.clip(image, 0.0, 1.0).astype(np.float32), labels
