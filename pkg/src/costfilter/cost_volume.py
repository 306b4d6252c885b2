"""Cost volume construction: 3-D correlation volumes and 4-D concatenation
volumes over a disparity range, plus slice/fiber views and the learned 1x1
projection that reduces a 4-D volume back to 3-D.

Matching is row-aligned: entry (d, v, u) relates left pixel (u, v) to right
pixel (u - d, v); out-of-range positions (u - d < 0) are zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

CORRELATION_3D = "correlation3d"
CONCAT_4D = "concat4d"


@dataclass
class CostVolume:
    kind: str
    data: np.ndarray  # (D, H, W) or (2F, D, H, W)
    d_max: int

    def __post_init__(self):
        if self.kind == CORRELATION_3D and self.data.ndim != 3:
            raise ConfigError(f"correlation volume must be 3-D, got {self.data.shape}")
        if self.kind == CONCAT_4D and self.data.ndim != 4:
            raise ConfigError(f"concat volume must be 4-D, got {self.data.shape}")

    @property
    def shape(self):
        return self.data.shape

    def slice(self, d: int) -> np.ndarray:
        """Copy of the volume at disparity d, shaped (1, H, W) or (2F, H, W)."""
        D = self.d_max
        if not 0 <= d < D:
            raise IndexError(f"disparity {d} out of range [0, {D})")
        if self.kind == CORRELATION_3D:
            return self.data[d][None].copy()
        return self.data[:, d].copy()

    def fiber(self, u: int, v: int) -> np.ndarray:
        """Copy of the disparity fiber at pixel (u, v): (D,) or (D, 2F)."""
        H, W = self.data.shape[-2], self.data.shape[-1]
        if not (0 <= v < H and 0 <= u < W):
            raise IndexError(f"pixel ({u}, {v}) out of range {W}x{H}")
        if self.kind == CORRELATION_3D:
            return self.data[:, v, u].copy()
        return self.data[:, :, v, u].T.copy()


def build_correlation(fL: np.ndarray, fR: np.ndarray, D: int,
                      normalize: bool = False) -> CostVolume:
    """Inner products of left features with right features shifted by each disparity."""
    if fL.shape != fR.shape:
        raise ConfigError(f"feature shapes differ: {fL.shape} vs {fR.shape}")
    F, H, W = fL.shape
    if D < 1 or D > W:
        raise ConfigError(f"disparity range {D} invalid for width {W}")
    out = np.zeros((D, H, W), dtype=fL.dtype)
    for d in range(D):
        out[d, :, d:] = (fL[:, :, d:] * fR[:, :, :W - d]).sum(axis=0)
    if normalize:
        out /= F
    return CostVolume(CORRELATION_3D, out, D)


def build_correlation_vjp(fL: np.ndarray, fR: np.ndarray, upstream: np.ndarray,
                          normalize: bool = False):
    """Gradients of build_correlation w.r.t. both feature maps."""
    F, H, W = fL.shape
    D = upstream.shape[0]
    g = upstream / F if normalize else upstream
    gL = np.zeros_like(fL)
    gR = np.zeros_like(fR)
    for d in range(D):
        gd = g[d, :, d:][None]
        gL[:, :, d:] += gd * fR[:, :, :W - d]
        gR[:, :, :W - d] += gd * fL[:, :, d:]
    return gL, gR


def build_concat(fL: np.ndarray, fR: np.ndarray, D: int) -> CostVolume:
    """Stack fL(u, v) and fR(u - d, v) along channels; right half zero out of range."""
    if fL.shape != fR.shape:
        raise ConfigError(f"feature shapes differ: {fL.shape} vs {fR.shape}")
    F, H, W = fL.shape
    if D < 1 or D > W:
        raise ConfigError(f"disparity range {D} invalid for width {W}")
    out = np.zeros((2 * F, D, H, W), dtype=fL.dtype)
    for d in range(D):
        out[:F, d] = fL
        out[F:, d, :, d:] = fR[:, :, :W - d]
    return CostVolume(CONCAT_4D, out, D)


def project_4d_to_3d(cv: CostVolume, proj: np.ndarray, bias) -> CostVolume:
    """Learned 1x1 reduction of a concat volume: per-(d, v, u) inner product + bias."""
    data, w = _check_projection(cv, proj)
    out = np.einsum("c,cdhw->dhw", w, data) + float(np.asarray(bias).reshape(()))
    return CostVolume(CORRELATION_3D, out, cv.d_max)


def project_4d_to_3d_vjp(cv: CostVolume, proj: np.ndarray, upstream: np.ndarray):
    """Gradients w.r.t. (volume data, projection weights, bias)."""
    data, w = _check_projection(cv, proj)
    grad_data = w[:, None, None, None] * upstream[None]
    grad_w = np.einsum("dhw,cdhw->c", upstream, data).reshape(proj.shape)
    grad_b = upstream.sum()
    return grad_data, grad_w, grad_b


def _check_projection(cv: CostVolume, proj: np.ndarray):
    if cv.kind != CONCAT_4D:
        raise ConfigError("projection applies to concat4d volumes only")
    C = cv.data.shape[0]
    w = np.asarray(proj)
    if w.size != C:
        raise ConfigError(f"projection expects {C} weights, got shape {w.shape}")
    if w.ndim == 4 and w.shape != (1, C, 1, 1):
        raise ConfigError(f"projection kernel must be (1, {C}, 1, 1), got {w.shape}")
    return cv.data, w.reshape(C)
