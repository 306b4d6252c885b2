"""Disparity regression and training losses: soft argmin over negated costs,
smooth-L1 over valid pixels, weighted multi-output loss combination, and
bilinear disparity upsampling with value scaling.
"""
from __future__ import annotations

import numpy as np

from .disparity import DisparityMap
from .errors import ConfigError, DataError
from .tensor_ops import (resize_bilinear, resize_bilinear_vjp,
                         resize_nearest_indices, softmax)


def soft_argmin(cv: np.ndarray) -> DisparityMap:
    """Expected disparity under softmax(-cost) per pixel; all pixels valid."""
    disp, _ = soft_argmin_forward(cv)
    return DisparityMap.dense(disp)


def soft_argmin_forward(cv: np.ndarray):
    if cv.ndim != 3 or cv.shape[0] < 1:
        raise ConfigError(f"soft_argmin expects (D, H, W) with D >= 1, got {cv.shape}")
    p = softmax(-cv, axis=0)
    d = np.arange(cv.shape[0], dtype=cv.dtype).reshape(-1, 1, 1)
    disp = (d * p).sum(axis=0)
    return disp, (p, disp)


def soft_argmin_vjp(cv: np.ndarray, upstream: np.ndarray, cache=None) -> np.ndarray:
    """d(expectation)/d(cost) = -p_d * (d - expectation), contracted with upstream."""
    if cache is None:
        _, cache = soft_argmin_forward(cv)
    p, disp = cache
    d = np.arange(cv.shape[0], dtype=cv.dtype).reshape(-1, 1, 1)
    return -upstream[None] * p * (d - disp[None])


def smooth_l1(pred: DisparityMap, gt: DisparityMap) -> float:
    """Mean smooth-L1 over gt-valid pixels: 0.5 x^2 below 1 px, |x| - 0.5 above."""
    _check_shapes(pred, gt)
    n = int(gt.valid.sum())
    if n == 0:
        raise DataError("smooth_l1: no valid ground-truth pixels")
    err = np.abs(pred.values[gt.valid] - gt.values[gt.valid])
    loss = np.where(err < 1.0, 0.5 * err * err, err - 0.5)
    return float(loss.sum() / n)


def smooth_l1_grad(pred: DisparityMap, gt: DisparityMap,
                   upstream: float = 1.0) -> np.ndarray:
    """Gradient of smooth_l1 w.r.t. the predicted values (zero at invalid pixels)."""
    _check_shapes(pred, gt)
    n = int(gt.valid.sum())
    if n == 0:
        raise DataError("smooth_l1: no valid ground-truth pixels")
    diff = pred.values - gt.values
    g = np.where(np.abs(diff) < 1.0, diff, np.sign(diff))
    g = np.where(gt.valid, g, 0.0)
    return g.astype(pred.values.dtype) * (upstream / n)


def weighted_loss(losses, w, mode: str = "sum-normalized") -> float:
    """Combine per-output losses; default normalizes by the weight sum."""
    losses = list(losses)
    w = list(w)
    if len(losses) != len(w):
        raise ConfigError(f"{len(losses)} losses but {len(w)} weights")
    if not any(wi > 0 for wi in w):
        raise ConfigError("at least one loss weight must be positive")
    total = sum(wi * li for wi, li in zip(w, losses))
    if mode == "sum-normalized":
        return float(total / sum(w))
    if mode == "plain-weighted":
        return float(total)
    raise ConfigError(f"unknown weighted_loss mode {mode!r}")


def upsample_disparity(dmap: DisparityMap, factor: int) -> DisparityMap:
    """Bilinear upsampling with disparity values scaled by the factor.

    The validity mask is upsampled by nearest neighbour.
    """
    if factor < 1 or int(factor) != factor:
        raise ConfigError(f"upsample factor must be a positive integer, got {factor}")
    if factor == 1:
        return DisparityMap(dmap.values.copy(), dmap.valid.copy())
    H, W = dmap.values.shape
    values = resize_bilinear(dmap.values, H * factor, W * factor) * factor
    iv = resize_nearest_indices(H, H * factor)
    iu = resize_nearest_indices(W, W * factor)
    valid = dmap.valid[np.ix_(iv, iu)]
    return DisparityMap(values, valid)


def upsample_disparity_vjp(upstream: np.ndarray, in_h: int, in_w: int,
                           factor: int) -> np.ndarray:
    """Gradient w.r.t. the low-resolution values (value scaling included)."""
    if factor == 1:
        return upstream.copy()
    return resize_bilinear_vjp(upstream, in_h, in_w) * factor


def _check_shapes(pred: DisparityMap, gt: DisparityMap):
    if pred.values.shape != gt.values.shape:
        raise ConfigError(f"prediction {pred.values.shape} and ground truth "
                          f"{gt.values.shape} shapes differ")
