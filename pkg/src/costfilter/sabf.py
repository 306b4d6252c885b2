"""Segmentation-aware bilateral filtering of cost-volume slices.

The filter weight between a pixel and a window neighbour is a product of two
Gaussians: one over squared pixel distance (std sigma_s), one over squared L2
distance of learned 64-d embeddings (std sigma_r). Each output is the
kernel-weighted mean over the dilated window, with out-of-image taps excluded
from both numerator and denominator, so constants are preserved everywhere
including borders.

The kernel field depends only on the embeddings, so it is computed once per
call and shared across every channel of the input stack; callers filter a
whole D-slice (or C x D) volume in one call by flattening it into channels.
All tap arithmetic runs on overlap-region views (pixels whose neighbour is
inside the image); out-of-image taps simply keep kernel weight zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .tensor_ops import WindowSpec

try:
    from . import _kernels
except ImportError:  # pragma: no cover - numba not installed
    _kernels = None


@dataclass(frozen=True)
class SabfConfig:
    sigma_s: float = 0.7
    sigma_r: float = 0.1
    win: WindowSpec = field(default_factory=WindowSpec)

    def __post_init__(self):
        if self.sigma_s <= 0 or self.sigma_r <= 0:
            raise ConfigError("sigma_s and sigma_r must be positive")


def sabf_kernel(pos_i, pos_j, e_i, e_j, cfg: SabfConfig) -> float:
    """Unnormalized filter weight between two pixels (symmetric in i, j)."""
    pd = (pos_i[0] - pos_j[0]) ** 2 + (pos_i[1] - pos_j[1]) ** 2
    ed = float(((np.asarray(e_i) - np.asarray(e_j)) ** 2).sum())
    return math.exp(-pd / (2 * cfg.sigma_s ** 2) - ed / (2 * cfg.sigma_r ** 2))


def _regions(H, W, dv, du):
    """Source/neighbour view bounds for one tap offset; None when fully outside."""
    a0, a1 = max(0, -dv), H - max(0, dv)
    b0, b1 = max(0, -du), W - max(0, du)
    if a0 >= a1 or b0 >= b1:
        return None
    src = (slice(a0, a1), slice(b0, b1))
    ngb = (slice(a0 + dv, a1 + dv), slice(b0 + du, b1 + du))
    return src, ngb


def _kernel_field(emb: np.ndarray, cfg: SabfConfig):
    """Per-tap kernel weights (s*s, H, W); zero at out-of-image taps."""
    _, H, W = emb.shape
    offsets = cfg.win.offsets()
    K = np.zeros((len(offsets), H, W), dtype=emb.dtype)
    inv2ss = 1.0 / (2 * cfg.sigma_s ** 2)
    inv2sr = 1.0 / (2 * cfg.sigma_r ** 2)
    if _kernels is not None:
        emb_hwc = np.ascontiguousarray(emb.transpose(1, 2, 0))
        _kernels.sabf_kernel_field(emb_hwc, offsets, inv2ss, inv2sr, K)
        return K
    for t, (dv, du) in enumerate(offsets):
        reg = _regions(H, W, dv, du)
        if reg is None:
            continue
        src, ngb = reg
        d = emb[:, src[0], src[1]] - emb[:, ngb[0], ngb[1]]
        s2 = np.einsum("chw,chw->hw", d, d)
        K[t, src[0], src[1]] = np.exp(-(dv * dv + du * du) * inv2ss - s2 * inv2sr)
    return K


def kernel_field(emb: np.ndarray, cfg: SabfConfig):
    """Precompute (K, den) once per embedding so many slices can share them."""
    K = _kernel_field(emb, cfg)
    return K, K.sum(axis=0)  # den >= 1: the self tap always contributes exactly 1


def filter_with_field(slice_: np.ndarray, K: np.ndarray, den: np.ndarray,
                      win: WindowSpec) -> np.ndarray:
    H, W = slice_.shape[-2:]
    num = np.zeros_like(slice_)
    for t, (dv, du) in enumerate(win.offsets()):
        reg = _regions(H, W, dv, du)
        if reg is None:
            continue
        src, ngb = reg
        num[:, src[0], src[1]] += K[t, src[0], src[1]] * slice_[:, ngb[0], ngb[1]]
    return num / den


def sabf_filter(slice_: np.ndarray, emb: np.ndarray, cfg: SabfConfig) -> np.ndarray:
    out, _ = sabf_forward(slice_, emb, cfg)
    return out


def sabf_forward(slice_: np.ndarray, emb: np.ndarray, cfg: SabfConfig, field=None):
    """Filter (C, H, W) channels with one shared kernel field; returns (out, cache)."""
    if slice_.shape[-2:] != emb.shape[-2:]:
        raise ConfigError(f"embedding extents {emb.shape[-2:]} do not match "
                          f"slice extents {slice_.shape[-2:]}")
    K, den = field if field is not None else kernel_field(emb, cfg)
    out = filter_with_field(slice_, K, den, cfg.win)
    return out, (K, den, out)


def sabf_vjp(slice_: np.ndarray, emb: np.ndarray, cfg: SabfConfig,
             upstream: np.ndarray, cache=None):
    """Analytic VJP of sabf_filter w.r.t. the slice and the embeddings."""
    if cache is None:
        _, cache = sabf_forward(slice_, emb, cfg)
    K, den, out = cache
    inv2sr = 1.0 / (2 * cfg.sigma_r ** 2)
    grad_slice = np.zeros_like(slice_)
    grad_emb = np.zeros_like(emb)
    if _kernels is not None:
        to_hwc = lambda a: np.ascontiguousarray(a.transpose(1, 2, 0))
        gs_hwc = np.zeros(slice_.shape[1:] + slice_.shape[:1], dtype=slice_.dtype)
        ge_hwc = np.zeros(emb.shape[1:] + emb.shape[:1], dtype=emb.dtype)
        _kernels.sabf_backward(to_hwc(slice_), to_hwc(emb), K, den, to_hwc(out),
                               to_hwc(upstream), cfg.win.offsets(), inv2sr,
                               gs_hwc, ge_hwc)
        return (np.ascontiguousarray(gs_hwc.transpose(2, 0, 1)),
                np.ascontiguousarray(ge_hwc.transpose(2, 0, 1)))
    up_over_den = upstream / den
    H, W = den.shape
    for t, (dv, du) in enumerate(cfg.win.offsets()):
        reg = _regions(H, W, dv, du)
        if reg is None:
            continue
        src, ngb = reg
        grad_slice[:, ngb[0], ngb[1]] += (up_over_den[:, src[0], src[1]]
                                          * K[t, src[0], src[1]])
        if dv == 0 and du == 0:
            continue  # self tap: K == 1 with zero derivative w.r.t. embeddings
        xs = slice_[:, ngb[0], ngb[1]]
        # d(out)/d(K) summed over channels, times the softmax-free quotient rule
        gK = np.einsum("chw,chw->hw", upstream[:, src[0], src[1]],
                       xs - out[:, src[0], src[1]]) / den[src[0], src[1]]
        gS = gK * K[t, src[0], src[1]] * (-inv2sr)
        diff = emb[:, src[0], src[1]] - emb[:, ngb[0], ngb[1]]
        contrib = (2.0 * gS) * diff
        grad_emb[:, src[0], src[1]] += contrib
        grad_emb[:, ngb[0], ngb[1]] -= contrib
    return grad_slice, grad_emb
