"""Numba-compiled inner loops for the embedding-heavy hot paths (SABF kernel
field and backward pass, contrastive embedding loss).

Everything here has a pure-numpy twin in its home module; these exist only to
keep desk-scale training inside its wall-clock budget. Channel data arrives
channels-last so the innermost loops run over contiguous memory; the callers
transpose at the boundary. Import failures (no numba) are tolerated: callers
fall back to the numpy path.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def sabf_kernel_field(emb_hwc, offsets, inv2ss, inv2sr, K):
    """Fill K (T, H, W) with per-tap bilateral weights; K must arrive zeroed."""
    H, W, E = emb_hwc.shape
    T = offsets.shape[0]
    for t in range(T):
        dv, du = offsets[t, 0], offsets[t, 1]
        spat = -(dv * dv + du * du) * inv2ss
        v0, v1 = max(0, -dv), H - max(0, dv)
        u0, u1 = max(0, -du), W - max(0, du)
        for v in range(v0, v1):
            vv = v + dv
            for u in range(u0, u1):
                uu = u + du
                s2 = 0.0
                for e in range(E):
                    d = emb_hwc[v, u, e] - emb_hwc[vv, uu, e]
                    s2 += d * d
                K[t, v, u] = np.exp(spat - s2 * inv2sr)


@njit(cache=True)
def sabf_backward(slice_hwc, emb_hwc, K, den, out_hwc, up_hwc, offsets, inv2sr,
                  grad_slice_hwc, grad_emb_hwc):
    """Accumulate SABF gradients w.r.t. the slice stack and the embeddings."""
    H, W, C = slice_hwc.shape
    E = emb_hwc.shape[2]
    T = offsets.shape[0]
    for t in range(T):
        dv, du = offsets[t, 0], offsets[t, 1]
        v0, v1 = max(0, -dv), H - max(0, dv)
        u0, u1 = max(0, -du), W - max(0, du)
        selftap = dv == 0 and du == 0
        for v in range(v0, v1):
            vv = v + dv
            for u in range(u0, u1):
                uu = u + du
                k = K[t, v, u]
                d_inv = 1.0 / den[v, u]
                gK = 0.0
                for c in range(C):
                    upc = up_hwc[v, u, c] * d_inv
                    grad_slice_hwc[vv, uu, c] += upc * k
                    gK += upc * (slice_hwc[vv, uu, c] - out_hwc[v, u, c])
                if selftap:
                    continue
                gS2 = 2.0 * gK * k * (-inv2sr)
                for e in range(E):
                    contrib = gS2 * (emb_hwc[v, u, e] - emb_hwc[vv, uu, e])
                    grad_emb_hwc[v, u, e] += contrib
                    grad_emb_hwc[vv, uu, e] -= contrib


@njit(cache=True)
def embedding_loss_fwd(emb_hwc, labels, offsets, alpha, beta):
    """Hinged L1 contrast summed over ordered in-image pairs; returns (sum, count)."""
    H, W, E = emb_hwc.shape
    total = 0.0
    count = 0
    for t in range(offsets.shape[0]):
        dv, du = offsets[t, 0], offsets[t, 1]
        v0, v1 = max(0, -dv), H - max(0, dv)
        u0, u1 = max(0, -du), W - max(0, du)
        for v in range(v0, v1):
            vv = v + dv
            for u in range(u0, u1):
                uu = u + du
                dist = 0.0
                for e in range(E):
                    dist += abs(emb_hwc[v, u, e] - emb_hwc[vv, uu, e])
                if labels[v, u] == labels[vv, uu]:
                    if dist > alpha:
                        total += dist - alpha
                else:
                    if dist < beta:
                        total += beta - dist
                count += 1
    return total, count


@njit(cache=True)
def embedding_loss_bwd(emb_hwc, labels, offsets, alpha, beta, upstream, grad_hwc):
    """Accumulate the gradient of embedding_loss_fwd into grad_hwc."""
    H, W, E = emb_hwc.shape
    for t in range(offsets.shape[0]):
        dv, du = offsets[t, 0], offsets[t, 1]
        v0, v1 = max(0, -dv), H - max(0, dv)
        u0, u1 = max(0, -du), W - max(0, du)
        for v in range(v0, v1):
            vv = v + dv
            for u in range(u0, u1):
                uu = u + du
                dist = 0.0
                for e in range(E):
                    dist += abs(emb_hwc[v, u, e] - emb_hwc[vv, uu, e])
                if labels[v, u] == labels[vv, uu]:
                    ddist = upstream if dist > alpha else 0.0
                else:
                    ddist = -upstream if dist < beta else 0.0
                if ddist == 0.0:
                    continue
                for e in range(E):
                    d = emb_hwc[v, u, e] - emb_hwc[vv, uu, e]
                    if d > 0.0:
                        g = ddist
                    elif d < 0.0:
                        g = -ddist
                    else:
                        g = 0.0
                    grad_hwc[v, u, e] += g
                    grad_hwc[vv, uu, e] -= g
