"""Pixel-adaptive convolution: a learned, spatially invariant kernel modulated
per pixel by a fixed Gaussian of adapting-feature differences.

With identical adapting features everywhere the Gaussian term is 1 and the
operator reduces exactly to a dilated conv2d with the same weights. The
adapting-kernel field depends only on the features, so one field is shared
across all disparity slices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor_ops import WindowSpec, inside_mask, shift2d


@dataclass
class PacParams:
    """Learned filter w (C_y, C_x, s, s) and bias b (C_y,)."""

    w: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.w.ndim != 4 or self.w.shape[2] != self.w.shape[3]:
            raise ConfigError(f"PAC weights must be (C_y, C_x, s, s), got {self.w.shape}")

    @property
    def size(self) -> int:
        return self.w.shape[2]


def pac_kernel(f_i, f_j) -> float:
    """Gaussian of adapting-feature distance: 1 at f_i == f_j, decaying with distance."""
    d2 = float(((np.asarray(f_i) - np.asarray(f_j)) ** 2).sum())
    return math.exp(-0.5 * d2)


def _adapting_field(adapt: np.ndarray, win: WindowSpec):
    """Per-tap Gaussian weights (s*s, H, W); zero at out-of-image taps."""
    _, H, W = adapt.shape
    offsets = win.offsets()
    K = np.empty((len(offsets), H, W), dtype=adapt.dtype)
    for t, (dv, du) in enumerate(offsets):
        m = inside_mask(H, W, dv, du, dtype=adapt.dtype)
        diff = (adapt - shift2d(adapt, dv, du)) * m
        K[t] = m * np.exp(-0.5 * (diff * diff).sum(axis=0))
    return K


def pac_filter(slice_: np.ndarray, adapt: np.ndarray, p: PacParams,
               win: WindowSpec) -> np.ndarray:
    out, _ = pac_forward(slice_, adapt, p, win)
    return out


def pac_forward(slice_: np.ndarray, adapt: np.ndarray, p: PacParams, win: WindowSpec):
    _check(slice_, adapt, p, win)
    K = _adapting_field(adapt, win)
    wflat = p.w.reshape(p.w.shape[0], p.w.shape[1], -1)  # (C_y, C_x, s*s), tap-major
    C_y = p.w.shape[0]
    H, W = slice_.shape[-2:]
    out = np.zeros((C_y, H, W), dtype=slice_.dtype)
    for t, (dv, du) in enumerate(win.offsets()):
        xs = shift2d(slice_, dv, du)
        out += K[t] * np.einsum("oc,chw->ohw", wflat[:, :, t], xs)
    out += p.b.reshape(C_y, 1, 1)
    return out, K


def pac_vjp(slice_: np.ndarray, adapt: np.ndarray, p: PacParams, win: WindowSpec,
            upstream: np.ndarray, K: np.ndarray | None = None):
    """Analytic VJP: returns (grad_slice, grad_adapt, grad_w, grad_b)."""
    _check(slice_, adapt, p, win)
    if K is None:
        K = _adapting_field(adapt, win)
    wflat = p.w.reshape(p.w.shape[0], p.w.shape[1], -1)
    H, W = slice_.shape[-2:]
    grad_slice = np.zeros_like(slice_)
    grad_adapt = np.zeros_like(adapt)
    grad_w = np.zeros_like(p.w).reshape(wflat.shape)
    grad_b = upstream.sum(axis=(1, 2))
    for t, (dv, du) in enumerate(win.offsets()):
        xs = shift2d(slice_, dv, du)
        gK_target = np.einsum("oc,chw->ohw", wflat[:, :, t], xs)
        grad_slice += shift2d(K[t] * np.einsum("oc,ohw->chw", wflat[:, :, t], upstream),
                              -dv, -du)
        grad_w[:, :, t] = np.einsum("ohw,chw->oc", upstream * K[t], xs)
        if dv == 0 and du == 0:
            continue  # center tap: K == 1, stationary in the features
        gK = (upstream * gK_target).sum(axis=0)
        m = inside_mask(H, W, dv, du, dtype=adapt.dtype)
        gS = gK * K[t] * (-0.5)
        diff = (adapt - shift2d(adapt, dv, du)) * m
        contrib = (2.0 * gS) * diff
        grad_adapt += contrib
        grad_adapt -= shift2d(contrib, -dv, -du)
    return grad_slice, grad_adapt, grad_w.reshape(p.w.shape), grad_b


def pac_volume_forward(vol: np.ndarray, adapt: np.ndarray, p: PacParams,
                       win: WindowSpec, K: np.ndarray | None = None):
    """Single-channel PAC applied to every (D, H, W) slice with a shared field.

    Requires C_y == C_x == 1; the disparity axis is treated as a batch.
    Returns (out, K).
    """
    _check_volume(vol, adapt, p, win)
    if K is None:
        K = _adapting_field(adapt, win)
    w = p.w.reshape(-1)
    out = np.zeros_like(vol)
    for t, (dv, du) in enumerate(win.offsets()):
        out += (K[t] * w[t]) * shift2d(vol, dv, du)
    out += p.b.reshape(())
    return out, K


def pac_volume_vjp(vol: np.ndarray, adapt: np.ndarray, p: PacParams, win: WindowSpec,
                   upstream: np.ndarray, K: np.ndarray | None = None):
    """VJP of pac_volume_forward: (grad_vol, grad_adapt, grad_w, grad_b)."""
    _check_volume(vol, adapt, p, win)
    if K is None:
        K = _adapting_field(adapt, win)
    w = p.w.reshape(-1)
    H, W = vol.shape[-2:]
    grad_vol = np.zeros_like(vol)
    grad_adapt = np.zeros_like(adapt)
    grad_w = np.zeros_like(w)
    grad_b = np.asarray([upstream.sum()], dtype=p.b.dtype).reshape(p.b.shape)
    for t, (dv, du) in enumerate(win.offsets()):
        xs = shift2d(vol, dv, du)
        grad_vol += shift2d((K[t] * w[t]) * upstream, -dv, -du)
        ux = (upstream * xs).sum(axis=0)
        grad_w[t] = (ux * K[t]).sum()
        if dv == 0 and du == 0:
            continue
        gK = ux * w[t]
        m = inside_mask(H, W, dv, du, dtype=adapt.dtype)
        gS = gK * K[t] * (-0.5)
        diff = (adapt - shift2d(adapt, dv, du)) * m
        contrib = (2.0 * gS) * diff
        grad_adapt += contrib
        grad_adapt -= shift2d(contrib, -dv, -du)
    return grad_vol, grad_adapt, grad_w.reshape(p.w.shape), grad_b


def _check_volume(vol, adapt, p, win):
    if p.w.shape[:2] != (1, 1):
        raise ConfigError(f"volume path needs 1x1-channel PAC weights, got {p.w.shape}")
    if p.size != win.size:
        raise ConfigError(f"PAC weights are {p.size}x{p.size} but window is {win.size}")
    if vol.shape[-2:] != adapt.shape[-2:]:
        raise ConfigError(f"adapting feature extents {adapt.shape[-2:]} do not match "
                          f"volume extents {vol.shape[-2:]}")


def _check(slice_, adapt, p, win):
    if p.size != win.size:
        raise ConfigError(f"PAC weights are {p.size}x{p.size} but window is {win.size}")
    if slice_.shape[0] != p.w.shape[1]:
        raise ConfigError(f"slice has {slice_.shape[0]} channels, weights expect "
                          f"{p.w.shape[1]}")
    if slice_.shape[-2:] != adapt.shape[-2:]:
        raise ConfigError(f"adapting feature extents {adapt.shape[-2:]} do not match "
                          f"slice extents {slice_.shape[-2:]}")


def delta_weights(c_out: int, c_in: int, size: int, dtype=np.float32) -> np.ndarray:
    """Identity initialization: center tap 1 on matching channels, else 0."""
    w = np.zeros((c_out, c_in, size, size), dtype=dtype)
    h = size // 2
    for c in range(min(c_out, c_in)):
        w[c, c, h, h] = 1.0
    return w
