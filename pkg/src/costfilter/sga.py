"""Semi-global aggregation: four-direction scanline recursions over the cost
volume with learned, per-pixel, normalized 5-weight guidance, fused by an
elementwise maximum, plus the reverse-order scanline backward pass.

Recursion at a non-boundary pixel p with predecessor q = p - r:

    out(p, d) = w0*cost(p, d) + w1*out(q, d) + w2*out(q, d-1)
              + w3*out(q, d+1) + w4*max_i out(q, i)

with d-1/d+1 clamped into [0, D-1]; the first pixel of each scanline outputs
the raw cost. Since the five weights sum to one, a constant volume is a fixed
point of every direction. All max tie-breaks take the lowest index so the
backward pass is deterministic.

Direction order (index, name, unit vector r with p - r the predecessor):
    0 left (-1, 0) | 1 right (1, 0) | 2 up (0, 1) | 3 down (0, -1)
Rows never mix for the horizontal directions and columns never mix for the
vertical ones, so scanlines are independent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .features import stack_forward, stack_vjp
from .tensor_ops import softmax, softmax_vjp

DIRECTIONS = ((-1, 0), (1, 0), (0, 1), (0, -1))
DIRECTION_NAMES = ("left", "right", "up", "down")

# (scan axis in (D, H, W) arrays, reversed scan order) per direction
_SCAN = {0: (2, True), 1: (2, False), 2: (1, False), 3: (1, True)}


@dataclass
class SgaWeights:
    """Aggregation weights (4, 5, H, W): per direction and pixel, (w0..w4) with sum 1."""

    w: np.ndarray

    def __post_init__(self):
        if self.w.ndim != 4 or self.w.shape[:2] != (4, 5):
            raise ConfigError(f"SGA weights must be (4, 5, H, W), got {self.w.shape}")
        sums = self.w.sum(axis=1)
        if not np.allclose(sums, 1.0, atol=1e-4):
            raise ConfigError("SGA weights must be normalized to sum 1 per pixel")


@dataclass
class SgaGuidanceParams:
    """Conv stack F -> 32 -> 20 (ReLU between, linear logits reshaped to 4x5)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        if self.w2.shape[0] != 20:
            raise ConfigError(f"guidance stack must emit 20 channels, got {self.w2.shape[0]}")

    def layers(self):
        return [(self.w1, self.b1), (self.w2, self.b2)]


def sga_guidance(guidance: np.ndarray, p: SgaGuidanceParams) -> SgaWeights:
    weights, _ = sga_guidance_forward(guidance, p)
    return weights


def sga_guidance_forward(guidance: np.ndarray, p: SgaGuidanceParams):
    logits, cache = stack_forward(guidance, p.layers())
    _, H, W = logits.shape
    w = softmax(logits.reshape(4, 5, H, W), axis=1)
    return SgaWeights(w), cache


def sga_guidance_vjp(p: SgaGuidanceParams, cache, grad_logits: np.ndarray):
    """Backward through the guidance conv stack, given (4, 5, H, W) logit
    gradients as produced by sga_vjp (the softmax step is already inside it).

    Returns ([(gw1, gb1), (gw2, gb2)], grad_guidance).
    """
    H, W = grad_logits.shape[-2:]
    return stack_vjp(p.layers(), cache, grad_logits.reshape(20, H, W),
                     need_input_grad=True)


def _step_slice(arr, axis, pos):
    if axis == 2:
        return arr[..., pos]
    return arr[..., pos, :]


def sga_direction(cv: np.ndarray, weights: SgaWeights | np.ndarray,
                  direction) -> np.ndarray:
    """One direction's scanline recursion; ``direction`` is a unit vector or index."""
    d_idx = _direction_index(direction)
    w = weights.w if isinstance(weights, SgaWeights) else weights
    return _scan_forward(cv, w[d_idx], *_SCAN[d_idx])


def _direction_index(direction) -> int:
    if isinstance(direction, int):
        if not 0 <= direction < 4:
            raise ConfigError(f"direction index {direction} out of range")
        return direction
    try:
        return DIRECTIONS.index(tuple(direction))
    except ValueError:
        raise ConfigError(f"direction {direction!r} not one of {DIRECTIONS}") from None


def _scan_forward(cv: np.ndarray, w5: np.ndarray, axis: int, reverse: bool) -> np.ndarray:
    n = cv.shape[axis]
    out = np.empty_like(cv)
    order = range(n - 1, -1, -1) if reverse else range(n)
    first = True
    prev = None
    for pos in order:
        cur = _step_slice(cv, axis, pos)
        if first:
            res = cur.copy()
            first = False
        else:
            w0, w1, w2, w3, w4 = (_step_slice(w5[j][None], axis, pos)[0] for j in range(5))
            dm = np.concatenate([prev[:1], prev[:-1]], axis=0)
            dp = np.concatenate([prev[1:], prev[-1:]], axis=0)
            res = w0 * cur + w1 * prev + w2 * dm + w3 * dp + w4 * prev.max(axis=0)
        if axis == 2:
            out[..., pos] = res
        else:
            out[..., pos, :] = res
        prev = res
    return out


def sga_aggregate(cv: np.ndarray, weights: SgaWeights):
    """Max-fuse the four directional aggregations.

    Returns (aggregated (D, H, W), argdir (D, H, W) int8 of the selected
    direction, lowest index on ties).
    """
    out, argdir, _ = sga_forward(cv, weights)
    return out, argdir


def sga_forward(cv: np.ndarray, weights: SgaWeights):
    """sga_aggregate that also returns the per-direction volumes for the backward."""
    w = weights.w
    if cv.ndim != 3:
        raise ConfigError(f"SGA expects a (D, H, W) volume, got {cv.shape}")
    if w.shape[-2:] != cv.shape[-2:]:
        raise ConfigError(f"weights extents {w.shape[-2:]} do not match volume "
                          f"{cv.shape[-2:]}")
    per_dir = np.stack([_scan_forward(cv, w[r], *_SCAN[r]) for r in range(4)])
    argdir = per_dir.argmax(axis=0).astype(np.int8)
    out = np.take_along_axis(per_dir, argdir[None].astype(np.int64), axis=0)[0]
    return out, argdir, per_dir


def sga_vjp(cv: np.ndarray, weights: SgaWeights, upstream: np.ndarray, cache=None):
    """Reverse scanline backprop through Eq. of sga_aggregate.

    Returns (grad_cv, grad_w_logits) where grad_w_logits is the gradient with
    respect to pre-softmax guidance logits, shaped (4, 5, H, W).
    """
    w = weights.w
    if cache is None:
        _, argdir, per_dir = sga_forward(cv, weights)
    else:
        argdir, per_dir = cache
    grad_cv = np.zeros_like(cv)
    grad_w = np.zeros_like(w)
    for r in range(4):
        routed = np.where(argdir == r, upstream, 0.0)
        if not routed.any():
            continue
        _scan_backward(cv, w[r], per_dir[r], routed, grad_cv, grad_w[r], *_SCAN[r])
    grad_logits = softmax_vjp(w, grad_w, axis=1)
    return grad_cv, grad_logits


def _scan_backward(cv, w5, out_r, routed, grad_cv, grad_w5, axis, reverse):
    n = cv.shape[axis]
    midx = out_r.argmax(axis=0)  # predecessor max index per pixel, lowest on ties
    order = list(range(n - 1, -1, -1) if reverse else range(n))
    G = routed.copy()
    # walk from the end of the scan back toward the boundary pixel; G at a
    # position is complete once its successor has been processed
    for i in range(len(order) - 1, 0, -1):
        pos, prev_pos = order[i], order[i - 1]
        g = _step_slice(G, axis, pos)
        prev = _step_slice(out_r, axis, prev_pos)
        cur = _step_slice(cv, axis, pos)
        w0, w1, w2, w3, w4 = (_step_slice(w5[j][None], axis, pos)[0] for j in range(5))
        dm = np.concatenate([prev[:1], prev[:-1]], axis=0)
        dp = np.concatenate([prev[1:], prev[-1:]], axis=0)
        gsum = g.sum(axis=0)
        gw = _step_slice(grad_w5, axis, pos)
        gw[0] += (g * cur).sum(axis=0)
        gw[1] += (g * prev).sum(axis=0)
        gw[2] += (g * dm).sum(axis=0)
        gw[3] += (g * dp).sum(axis=0)
        gw[4] += gsum * prev.max(axis=0)
        gc = _step_slice(grad_cv, axis, pos)
        gc += w0 * g
        # push into the predecessor: transpose of the clamped d-shifts plus the
        # max term routed to the recorded argmax index
        gprev = _step_slice(G, axis, prev_pos)
        gprev += w1 * g
        gdm = w2 * g
        gprev[:-1] += gdm[1:]
        gprev[0] += gdm[0]
        gdp = w3 * g
        gprev[1:] += gdp[:-1]
        gprev[-1] += gdp[-1]
        mi = _step_slice(midx[None], axis, prev_pos)[0]
        gprev[mi, np.arange(mi.shape[0])] += w4 * gsum
    # boundary pixel of every scanline: output was the raw cost
    first = order[0]
    gc0 = _step_slice(grad_cv, axis, first)
    gc0 += _step_slice(G, axis, first)


def apply_to_4d(cv4d: np.ndarray, weights: SgaWeights):
    """sga_aggregate applied independently per feature channel with shared weights.

    Returns (aggregated (C, D, H, W), argdir (C, D, H, W)).
    """
    if cv4d.ndim != 4:
        raise ConfigError(f"expected (C, D, H, W) volume, got {cv4d.shape}")
    outs, dirs = [], []
    for c in range(cv4d.shape[0]):
        o, a = sga_aggregate(cv4d[c], weights)
        outs.append(o)
        dirs.append(a)
    return np.stack(outs), np.stack(dirs)
