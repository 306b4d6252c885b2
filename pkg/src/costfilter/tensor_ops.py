"""Shared dense-array primitives: 2-D convolution, softmax, dilated window access.

All operations are pure functions over contiguous row-major numpy arrays
(float32 on the production path, float64 inside gradient checks) and never
mutate their inputs. Layout is channels-first everywhere: feature maps are
(C, H, W), cost volumes (D, H, W) or (C, D, H, W).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class WindowSpec:
    """Square filtering window: side length ``size`` (odd), tap spacing ``dilation``.

    The effective receptive side is (size - 1) * dilation + 1.
    """

    size: int = 5
    dilation: int = 2

    def __post_init__(self):
        if self.size < 1 or self.size % 2 == 0:
            raise ConfigError(f"window size must be odd and positive, got {self.size}")
        if self.dilation < 1:
            raise ConfigError(f"dilation must be >= 1, got {self.dilation}")

    @property
    def half(self) -> int:
        return self.size // 2

    def offsets(self) -> np.ndarray:
        """All (dv, du) pixel offsets of the window in row-major order, shape (size**2, 2)."""
        h, r = self.half, self.dilation
        grid = np.arange(-h, h + 1) * r
        dv, du = np.meshgrid(grid, grid, indexing="ij")
        return np.stack([dv.ravel(), du.ravel()], axis=1)


def shift2d(x: np.ndarray, dv: int, du: int) -> np.ndarray:
    """Return y with y[..., v, u] = x[..., v+dv, u+du], zero outside the image."""
    out = np.zeros_like(x)
    H, W = x.shape[-2], x.shape[-1]
    vs_lo, vs_hi = max(0, dv), min(H, H + dv)
    us_lo, us_hi = max(0, du), min(W, W + du)
    if vs_lo >= vs_hi or us_lo >= us_hi:
        return out
    vd_lo, ud_lo = max(0, -dv), max(0, -du)
    out[..., vd_lo:vd_lo + (vs_hi - vs_lo), ud_lo:ud_lo + (us_hi - us_lo)] = \
        x[..., vs_lo:vs_hi, us_lo:us_hi]
    return out


def inside_mask(H: int, W: int, dv: int, du: int, dtype=np.float64) -> np.ndarray:
    """(H, W) indicator of pixels whose (dv, du)-neighbour lies inside the image."""
    m = np.zeros((H, W), dtype=dtype)
    vs_lo, vs_hi = max(0, -dv), min(H, H - dv)
    us_lo, us_hi = max(0, -du), min(W, W - du)
    if vs_lo < vs_hi and us_lo < us_hi:
        m[vs_lo:vs_hi, us_lo:us_hi] = 1
    return m


def conv_out_extent(n: int, k: int, stride: int, dilation: int, pad: int) -> int:
    return (n + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, dilation: int, pad: int) -> np.ndarray:
    """Gather k*k dilated patches; returns (C, k, k, H', W')."""
    C, H, W = x.shape
    Ho = conv_out_extent(H, k, stride, dilation, pad)
    Wo = conv_out_extent(W, k, stride, dilation, pad)
    xp = np.zeros((C, H + 2 * pad, W + 2 * pad), dtype=x.dtype)
    xp[:, pad:pad + H, pad:pad + W] = x
    cols = np.empty((C, k, k, Ho, Wo), dtype=x.dtype)
    for i in range(k):
        ri = slice(i * dilation, i * dilation + stride * (Ho - 1) + 1, stride)
        for j in range(k):
            cj = slice(j * dilation, j * dilation + stride * (Wo - 1) + 1, stride)
            cols[:, i, j] = xp[:, ri, cj]
    return cols


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None,
           stride: int = 1, dilation: int = 1, pad: int = 0) -> np.ndarray:
    """Cross-correlate (C_in, H, W) with (C_out, C_in, k, k); zero padding.

    Output extents follow (n + 2*pad - dilation*(k-1) - 1) // stride + 1.
    """
    out, _ = conv2d_forward(x, kernel, bias, stride, dilation, pad)
    return out


def conv2d_forward(x, kernel, bias=None, stride=1, dilation=1, pad=0):
    """conv2d returning (out, cols-cache) so the VJP can reuse the patch gather."""
    if x.ndim != 3 or kernel.ndim != 4:
        raise ConfigError(f"conv2d expects (C,H,W) input and (Co,Ci,k,k) kernel, "
                          f"got {x.shape} and {kernel.shape}")
    Co, Ci, kh, kw = kernel.shape
    if kh != kw or kh % 2 == 0:
        raise ConfigError(f"kernel must be square with odd side, got {kh}x{kw}")
    if Ci != x.shape[0]:
        raise ConfigError(f"kernel expects {Ci} input channels, input has {x.shape[0]}")
    if stride < 1 or dilation < 1 or pad < 0:
        raise ConfigError("stride/dilation must be >= 1 and pad >= 0")
    cols = _im2col(x, kh, stride, dilation, pad)
    _, _, _, Ho, Wo = cols.shape
    out = kernel.reshape(Co, -1) @ cols.reshape(Ci * kh * kw, Ho * Wo)
    out = out.reshape(Co, Ho, Wo)
    if bias is not None:
        out = out + np.asarray(bias).reshape(Co, 1, 1)
    return out, cols


def conv2d_vjp(x, kernel, upstream, cols=None, stride=1, dilation=1, pad=0,
               need_input_grad=True):
    """VJP of conv2d: returns (grad_x, grad_kernel, grad_bias).

    grad_x is None when need_input_grad is False (saves the col2im scatter for
    layers whose input is a leaf).
    """
    Co, Ci, k, _ = kernel.shape
    if cols is None:
        cols = _im2col(x, k, stride, dilation, pad)
    _, _, _, Ho, Wo = cols.shape
    g = upstream.reshape(Co, Ho * Wo)
    grad_kernel = (g @ cols.reshape(Ci * k * k, Ho * Wo).T).reshape(kernel.shape)
    grad_bias = upstream.sum(axis=(1, 2))
    grad_x = None
    if need_input_grad:
        gcols = (kernel.reshape(Co, -1).T @ g).reshape(Ci, k, k, Ho, Wo)
        C, H, W = x.shape
        xpg = np.zeros((C, H + 2 * pad, W + 2 * pad), dtype=upstream.dtype)
        for i in range(k):
            ri = slice(i * dilation, i * dilation + stride * (Ho - 1) + 1, stride)
            for j in range(k):
                cj = slice(j * dilation, j * dilation + stride * (Wo - 1) + 1, stride)
                xpg[:, ri, cj] += gcols[:, i, j]
        grad_x = xpg[:, pad:pad + H, pad:pad + W]
    return grad_x, grad_kernel, grad_bias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_vjp(pre: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    return upstream * (pre > 0)


def softmax(x: np.ndarray, axis: int) -> np.ndarray:
    """Shift-stabilized softmax along ``axis``; outputs sum to 1 there."""
    x = np.asarray(x)
    if not -x.ndim <= axis < x.ndim:
        raise DataError(f"axis {axis} invalid for shape {x.shape}")
    if x.shape[axis] == 0:
        raise DataError("softmax over an empty axis")
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_vjp(y: np.ndarray, upstream: np.ndarray, axis: int) -> np.ndarray:
    """Backward through softmax given its output y."""
    inner = (upstream * y).sum(axis=axis, keepdims=True)
    return y * (upstream - inner)


class Tap(NamedTuple):
    offset: tuple  # (dv, du) in pixels, dilation applied
    values: np.ndarray  # (C,) vector, zeros when padded
    padded: bool


def window_gather(x: np.ndarray, center: tuple, win: WindowSpec) -> list:
    """Taps of the dilated window around ``center`` = (u, v), row-major offset order.

    Out-of-image taps carry zero vectors and padded=True.
    """
    C, H, W = x.shape
    u, v = center
    if not (0 <= v < H and 0 <= u < W):
        raise ConfigError(f"center {center} outside {H}x{W} image")
    taps = []
    for dv, du in win.offsets():
        vv, uu = v + dv, u + du
        if 0 <= vv < H and 0 <= uu < W:
            taps.append(Tap((int(dv), int(du)), x[:, vv, uu].copy(), False))
        else:
            taps.append(Tap((int(dv), int(du)), np.zeros(C, dtype=x.dtype), True))
    return taps


def _resize_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Dense (n_out, n_in) bilinear interpolation matrix, half-pixel centers, edge clamp."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for o in range(n_out):
        c = (o + 0.5) * scale - 0.5
        i0 = int(np.floor(c))
        t = c - i0
        i0c = min(max(i0, 0), n_in - 1)
        i1c = min(max(i0 + 1, 0), n_in - 1)
        m[o, i0c] += 1.0 - t
        m[o, i1c] += t
    return m.astype(dtype)


def resize_bilinear(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of (..., H, W) to (..., out_h, out_w)."""
    H, W = x.shape[-2], x.shape[-1]
    if (H, W) == (out_h, out_w):
        return x.copy()
    Rv = _resize_matrix(H, out_h, x.dtype)
    Ru = _resize_matrix(W, out_w, x.dtype)
    y = np.einsum("oh,...hw->...ow", Rv, x)
    return np.einsum("pw,...ow->...op", Ru, y)


def resize_bilinear_vjp(upstream: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    """Transpose of resize_bilinear: scatter (..., out_h, out_w) back to (..., in_h, in_w)."""
    out_h, out_w = upstream.shape[-2], upstream.shape[-1]
    if (in_h, in_w) == (out_h, out_w):
        return upstream.copy()
    Rv = _resize_matrix(in_h, out_h, upstream.dtype)
    Ru = _resize_matrix(in_w, out_w, upstream.dtype)
    y = np.einsum("oh,...ow->...hw", Rv, upstream)
    return np.einsum("pw,...hp->...hw", Ru, y)


def resize_nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    """Source index per output position for nearest-neighbour resize (same centers)."""
    idx = np.floor((np.arange(n_out) + 0.5) * (n_in / n_out)).astype(np.int64)
    return np.clip(idx, 0, n_in - 1)
