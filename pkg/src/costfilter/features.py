"""Per-view feature networks: unary matching features, guidance features, and the
64-d pixel embedding trained with a contrastive pairwise loss over dilated
neighbourhood rings.

All networks are small plain conv stacks (3x3 kernels, ReLU between layers,
linear last layer) evaluated with hand-written forward/backward passes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor_ops import conv2d_forward, conv2d_vjp, relu, relu_vjp

try:
    from . import _kernels
except ImportError:  # pragma: no cover - numba not installed
    _kernels = None

EMBED_DIM = 64

# 3x3 rings at these dilations define the pixel-pair neighbourhood of the
# embedding loss; ordered pairs, so each unordered pair is counted twice.
PAIR_DILATIONS = (1, 2, 5)

PAIR_ALPHA = 0.5
PAIR_BETA = 2.0


def stack_forward(x: np.ndarray, layers, stride_first: int = 1):
    """Run a conv stack (ReLU between layers, linear last); returns (out, cache)."""
    cache = []
    h = x
    for i, (w, b) in enumerate(layers):
        s = stride_first if i == 0 else 1
        pre, cols = conv2d_forward(h, w, b, stride=s, pad=1)
        cache.append((h, cols, pre, s))
        h = relu(pre) if i < len(layers) - 1 else pre
    return h, cache


def stack_vjp(layers, cache, upstream, need_input_grad: bool = False):
    """Backward through stack_forward; returns ([(gw, gb), ...], grad_input)."""
    grads = [None] * len(layers)
    g = upstream
    for i in reversed(range(len(layers))):
        h_in, cols, pre, s = cache[i]
        need = need_input_grad or i > 0
        gx, gw, gb = conv2d_vjp(h_in, layers[i][0], g, cols, stride=s, pad=1,
                                need_input_grad=need)
        grads[i] = (gw, gb)
        if i > 0:
            g = relu_vjp(cache[i - 1][2], gx)
        else:
            g = gx
    return grads, g


@dataclass
class FeatureExtractorParams:
    """Two-layer extractor 3 -> 16 -> F; ``downsample`` is the stride of layer 1."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    downsample: int = 1

    def __post_init__(self):
        if self.downsample not in (1, 2):
            raise ConfigError(f"downsample must be 1 or 2, got {self.downsample}")

    def layers(self):
        return [(self.w1, self.b1), (self.w2, self.b2)]

    @property
    def out_channels(self) -> int:
        return self.w2.shape[0]


@dataclass
class EmbeddingParams:
    """Three-layer stack mapping RGB to the 64-d embedding space, full resolution."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def __post_init__(self):
        if self.w3.shape[0] != EMBED_DIM:
            raise ConfigError(f"embedding output must have {EMBED_DIM} channels, "
                              f"got {self.w3.shape[0]}")

    def layers(self):
        return [(self.w1, self.b1), (self.w2, self.b2), (self.w3, self.b3)]


def extract_features(image: np.ndarray, p: FeatureExtractorParams) -> np.ndarray:
    out, _ = extract_features_forward(image, p)
    return out


def extract_features_forward(image: np.ndarray, p: FeatureExtractorParams):
    _, H, W = image.shape
    k = p.downsample
    if H % k or W % k:
        raise ConfigError(f"image extents {H}x{W} not divisible by downsample {k}")
    return stack_forward(image, p.layers(), stride_first=k)


def extract_features_vjp(p: FeatureExtractorParams, cache, upstream):
    """Parameter gradients [(gw1, gb1), (gw2, gb2)]; image gradient is not needed."""
    grads, _ = stack_vjp(p.layers(), cache, upstream, need_input_grad=False)
    return grads


def embed(image: np.ndarray, p: EmbeddingParams) -> np.ndarray:
    out, _ = embed_forward(image, p)
    return out


def embed_forward(image: np.ndarray, p: EmbeddingParams):
    return stack_forward(image, p.layers(), stride_first=1)


def embed_vjp(p: EmbeddingParams, cache, upstream):
    grads, _ = stack_vjp(p.layers(), cache, upstream, need_input_grad=False)
    return grads


# ---------------------------------------------------------------------------
# contrastive embedding loss

def pair_loss(e_i: np.ndarray, e_j: np.ndarray, same_label: bool,
              alpha: float = PAIR_ALPHA, beta: float = PAIR_BETA) -> float:
    """Hinged L1 contrast: pull same-label pairs within alpha, push others past beta."""
    dist = float(np.abs(np.asarray(e_i) - np.asarray(e_j)).sum())
    if same_label:
        return max(dist - alpha, 0.0)
    return max(beta - dist, 0.0)


def _ring_offsets():
    offs = []
    for d in PAIR_DILATIONS:
        for dv in (-d, 0, d):
            for du in (-d, 0, d):
                if dv or du:
                    offs.append((dv, du))
    return offs


def _ring_offsets_array():
    return np.asarray(_ring_offsets(), dtype=np.int64)


def embedding_loss(emb: np.ndarray, labels: np.ndarray,
                   alpha: float = PAIR_ALPHA, beta: float = PAIR_BETA):
    """Sum of pair_loss over ordered pixel pairs in the dilated rings.

    Returns (loss_sum, pair_count); out-of-image neighbours are skipped.
    """
    _, H, W = emb.shape
    if labels.shape != (H, W):
        raise ConfigError(f"labels shape {labels.shape} does not match embedding {H}x{W}")
    if _kernels is not None:
        total, count = _kernels.embedding_loss_fwd(
            np.ascontiguousarray(emb.transpose(1, 2, 0)),
            np.ascontiguousarray(labels), _ring_offsets_array(), alpha, beta)
        return float(total), int(count)
    total = 0.0
    count = 0
    for dv, du in _ring_offsets():
        a0, a1 = max(0, -dv), H - max(0, dv)
        b0, b1 = max(0, -du), W - max(0, du)
        if a0 >= a1 or b0 >= b1:
            continue
        d = emb[:, a0:a1, b0:b1] - emb[:, a0 + dv:a1 + dv, b0 + du:b1 + du]
        np.abs(d, out=d)
        dist = d.sum(axis=0)
        same = labels[a0:a1, b0:b1] == labels[a0 + dv:a1 + dv, b0 + du:b1 + du]
        term = np.where(same, np.maximum(dist - alpha, 0.0), np.maximum(beta - dist, 0.0))
        total += float(term.sum())
        count += dist.size
    return total, count


def embedding_loss_vjp(emb: np.ndarray, labels: np.ndarray, upstream: float = 1.0,
                       alpha: float = PAIR_ALPHA, beta: float = PAIR_BETA) -> np.ndarray:
    """Gradient of the loss sum w.r.t. the embedding map."""
    _, H, W = emb.shape
    grad = np.zeros_like(emb)
    if _kernels is not None:
        grad_hwc = np.zeros(emb.shape[1:] + emb.shape[:1], dtype=emb.dtype)
        _kernels.embedding_loss_bwd(
            np.ascontiguousarray(emb.transpose(1, 2, 0)),
            np.ascontiguousarray(labels), _ring_offsets_array(), alpha, beta,
            float(upstream), grad_hwc)
        return np.ascontiguousarray(grad_hwc.transpose(2, 0, 1))
    for dv, du in _ring_offsets():
        a0, a1 = max(0, -dv), H - max(0, dv)
        b0, b1 = max(0, -du), W - max(0, du)
        if a0 >= a1 or b0 >= b1:
            continue
        diff = emb[:, a0:a1, b0:b1] - emb[:, a0 + dv:a1 + dv, b0 + du:b1 + du]
        dist = np.abs(diff).sum(axis=0)
        same = labels[a0:a1, b0:b1] == labels[a0 + dv:a1 + dv, b0 + du:b1 + du]
        # d(loss)/d(dist): +1 on the active same-label hinge, -1 on the active
        # different-label hinge, 0 when the hinge is slack
        ddist = np.where(same, (dist > alpha).astype(emb.dtype),
                         -(dist < beta).astype(emb.dtype)) * upstream
        g = np.sign(diff)
        g *= ddist[None]
        grad[:, a0:a1, b0:b1] += g
        grad[:, a0 + dv:a1 + dv, b0 + du:b1 + du] -= g
    return grad
