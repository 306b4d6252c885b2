"""Dynamic local filtering: a filter-generating network conditioned on left-image
features emits one s*s filter per pixel (per channel group), which is applied
to every cost-volume slice.

Generated filters are softmax-normalized over the window taps so filtering is
a convex combination of (zero-padded) neighbours; the filters depend only on
the guidance input and are therefore shared across all disparity slices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .features import stack_forward, stack_vjp
from .tensor_ops import WindowSpec, shift2d, softmax, softmax_vjp


@dataclass
class DfnGeneratorParams:
    """Conv stack F -> 32 -> s*s*C_B (ReLU between, linear logits)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def layers(self):
        return [(self.w1, self.b1), (self.w2, self.b2)]

    @property
    def out_channels(self) -> int:
        return self.w2.shape[0]


@dataclass
class DynamicFilters:
    """Per-pixel filters theta (C_B, s*s, H, W), normalized over the tap axis.

    Channel group g corresponds to logits channels [g*s*s, (g+1)*s*s).
    """

    theta: np.ndarray
    size: int

    def __post_init__(self):
        if self.theta.ndim != 4 or self.theta.shape[1] != self.size ** 2:
            raise ConfigError(f"filters must be (C_B, {self.size ** 2}, H, W), "
                              f"got {self.theta.shape}")

    @property
    def groups(self) -> int:
        return self.theta.shape[0]


def dfn_generate(guidance: np.ndarray, p: DfnGeneratorParams,
                 win: WindowSpec) -> DynamicFilters:
    filters, _ = dfn_generate_forward(guidance, p, win)
    return filters


def dfn_generate_forward(guidance: np.ndarray, p: DfnGeneratorParams, win: WindowSpec):
    s2 = win.size ** 2
    if p.out_channels % s2:
        raise ConfigError(f"generator emits {p.out_channels} channels, "
                          f"not a multiple of window size^2 = {s2}")
    logits, cache = stack_forward(guidance, p.layers())
    _, H, W = logits.shape
    theta = softmax(logits.reshape(-1, s2, H, W), axis=1)
    return DynamicFilters(theta, win.size), cache


def dfn_apply(slice_: np.ndarray, filters: DynamicFilters, win: WindowSpec) -> np.ndarray:
    """Apply per-pixel filters to (C_B, H, W) or, broadcast over d, (C_B, D, H, W)."""
    theta = _check_apply(slice_, filters, win)
    out = np.zeros_like(slice_)
    for t, (dv, du) in enumerate(win.offsets()):
        wt = theta[:, t] if slice_.ndim == 3 else theta[:, t][:, None]
        out += wt * shift2d(slice_, dv, du)
    return out


def dfn_apply_vjp(slice_: np.ndarray, filters: DynamicFilters, win: WindowSpec,
                  upstream: np.ndarray):
    """VJP of dfn_apply: returns (grad_slice, grad_theta)."""
    theta = _check_apply(slice_, filters, win)
    grad_slice = np.zeros_like(slice_)
    grad_theta = np.zeros_like(theta)
    for t, (dv, du) in enumerate(win.offsets()):
        wt = theta[:, t] if slice_.ndim == 3 else theta[:, t][:, None]
        grad_slice += shift2d(upstream * wt, -dv, -du)
        prod = upstream * shift2d(slice_, dv, du)
        grad_theta[:, t] = prod if slice_.ndim == 3 else prod.sum(axis=1)
    return grad_slice, grad_theta


def dfn_vjp(slice_: np.ndarray, filters: DynamicFilters, win: WindowSpec,
            upstream: np.ndarray):
    """VJP through the dynamic filtering layer and the softmax normalization.

    Returns (grad_slice, grad_logits) with grad_logits shaped like the
    generator's output (s*s*C_B, H, W); chaining into the generator conv stack
    is done with stack_vjp.
    """
    grad_slice, grad_theta = dfn_apply_vjp(slice_, filters, win, upstream)
    grad_logits = softmax_vjp(filters.theta, grad_theta, axis=1)
    C_B, s2, H, W = filters.theta.shape
    return grad_slice, grad_logits.reshape(C_B * s2, H, W)


def dfn_generator_vjp(p: DfnGeneratorParams, gen_cache, grad_logits: np.ndarray):
    """Backward through the filter-generating network.

    Returns ([(gw1, gb1), (gw2, gb2)], grad_guidance).
    """
    return stack_vjp(p.layers(), gen_cache, grad_logits, need_input_grad=True)


def _check_apply(slice_, filters, win):
    if filters.size != win.size:
        raise ConfigError(f"filters were generated for window {filters.size}, "
                          f"applied with {win.size}")
    if slice_.ndim not in (3, 4) or slice_.shape[0] != filters.groups:
        raise ConfigError(f"slice shape {slice_.shape} does not match "
                          f"{filters.groups} filter groups")
    if slice_.shape[-2:] != filters.theta.shape[-2:]:
        raise ConfigError(f"slice extents {slice_.shape[-2:]} do not match "
                          f"filter extents {filters.theta.shape[-2:]}")
    return filters.theta
