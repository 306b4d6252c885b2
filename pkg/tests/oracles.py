"""Independent brute-force reference implementations used as test oracles.

Everything here is written as plain nested loops straight from the operator
definitions, deliberately sharing no code with the production paths.
"""
import math

import numpy as np


def conv2d_loops(x, kernel, bias=None, stride=1, dilation=1, pad=0):
    Ci, H, W = x.shape
    Co, _, k, _ = kernel.shape
    Ho = (H + 2 * pad - dilation * (k - 1) - 1) // stride + 1
    Wo = (W + 2 * pad - dilation * (k - 1) - 1) // stride + 1
    out = np.zeros((Co, Ho, Wo), dtype=x.dtype)
    for o in range(Co):
        for i in range(Ho):
            for j in range(Wo):
                acc = 0.0 if bias is None else float(bias[o])
                for c in range(Ci):
                    for p in range(k):
                        for q in range(k):
                            vi = i * stride + p * dilation - pad
                            vj = j * stride + q * dilation - pad
                            if 0 <= vi < H and 0 <= vj < W:
                                acc += kernel[o, c, p, q] * x[c, vi, vj]
                out[o, i, j] = acc
    return out


def correlation_loops(fL, fR, D, normalize=False):
    F, H, W = fL.shape
    out = np.zeros((D, H, W), dtype=fL.dtype)
    for d in range(D):
        for v in range(H):
            for u in range(W):
                if u - d < 0:
                    continue
                acc = 0.0
                for c in range(F):
                    acc += fL[c, v, u] * fR[c, v, u - d]
                out[d, v, u] = acc / F if normalize else acc
    return out


def window_taps(H, W, u, v, size, dilation):
    """(offsets, padded flags) of the dilated window, row-major."""
    h = size // 2
    taps = []
    for i in range(-h, h + 1):
        for j in range(-h, h + 1):
            dv, du = i * dilation, j * dilation
            inside = 0 <= v + dv < H and 0 <= u + du < W
            taps.append(((dv, du), not inside))
    return taps


def sabf_loops(slice_, emb, sigma_s, sigma_r, size, dilation):
    C, H, W = slice_.shape
    out = np.zeros_like(slice_)
    for v in range(H):
        for u in range(W):
            num = np.zeros(C, dtype=slice_.dtype)
            den = 0.0
            for (dv, du), padded in window_taps(H, W, u, v, size, dilation):
                if padded:
                    continue
                vv, uu = v + dv, u + du
                ed = float(((emb[:, v, u] - emb[:, vv, uu]) ** 2).sum())
                k = math.exp(-(dv * dv + du * du) / (2 * sigma_s ** 2)
                             - ed / (2 * sigma_r ** 2))
                num += k * slice_[:, vv, uu]
                den += k
            out[:, v, u] = num / den
    return out


def spatial_gaussian_blur_loops(slice_, sigma_s, size, dilation):
    """Pure spatial Gaussian window mean, padded taps excluded (SABF limit)."""
    C, H, W = slice_.shape
    out = np.zeros_like(slice_)
    for v in range(H):
        for u in range(W):
            num = np.zeros(C, dtype=slice_.dtype)
            den = 0.0
            for (dv, du), padded in window_taps(H, W, u, v, size, dilation):
                if padded:
                    continue
                k = math.exp(-(dv * dv + du * du) / (2 * sigma_s ** 2))
                num += k * slice_[:, v + dv, u + du]
                den += k
            out[:, v, u] = num / den
    return out


def dfn_apply_loops(slice_, theta, size, dilation):
    """theta: (C_B, size*size, H, W), tap index row-major over the window."""
    C, H, W = slice_.shape
    out = np.zeros_like(slice_)
    for c in range(C):
        for v in range(H):
            for u in range(W):
                acc = 0.0
                for t, ((dv, du), padded) in enumerate(
                        window_taps(H, W, u, v, size, dilation)):
                    if padded:
                        continue
                    acc += theta[c, t, v, u] * slice_[c, v + dv, u + du]
                out[c, v, u] = acc
    return out


def pac_loops(slice_, adapt, w, b, size, dilation):
    Cx, H, W = slice_.shape
    Cy = w.shape[0]
    out = np.zeros((Cy, H, W), dtype=slice_.dtype)
    for v in range(H):
        for u in range(W):
            for o in range(Cy):
                acc = float(b[o])
                for t, ((dv, du), padded) in enumerate(
                        window_taps(H, W, u, v, size, dilation)):
                    if padded:
                        continue
                    vv, uu = v + dv, u + du
                    kf = math.exp(-0.5 * float(((adapt[:, v, u] - adapt[:, vv, uu]) ** 2).sum()))
                    i, j = t // size, t % size
                    for c in range(Cx):
                        acc += kf * w[o, c, i, j] * slice_[c, vv, uu]
                out[o, v, u] = acc
    return out


def sga_direction_loops(cv, w5, direction):
    """Naive scanline recursion; direction is the paper's unit vector (dx, dy)."""
    D, H, W = cv.shape
    out = np.zeros_like(cv)
    dx, dy = direction
    # predecessor p - r; scan so the predecessor is always already computed
    if dx != 0:
        cols = range(W) if dx > 0 else range(W - 1, -1, -1)
        for v in range(H):
            for idx, u in enumerate(cols):
                pu = u - dx
                for d in range(D):
                    if idx == 0:
                        out[d, v, u] = cv[d, v, u]
                    else:
                        dm = max(d - 1, 0)
                        dp = min(d + 1, D - 1)
                        best = out[:, v, pu].max()
                        out[d, v, u] = (w5[0, v, u] * cv[d, v, u]
                                        + w5[1, v, u] * out[d, v, pu]
                                        + w5[2, v, u] * out[dm, v, pu]
                                        + w5[3, v, u] * out[dp, v, pu]
                                        + w5[4, v, u] * best)
    else:
        rows = range(H) if dy > 0 else range(H - 1, -1, -1)
        for u in range(W):
            for idx, v in enumerate(rows):
                pv = v - dy
                for d in range(D):
                    if idx == 0:
                        out[d, v, u] = cv[d, v, u]
                    else:
                        dm = max(d - 1, 0)
                        dp = min(d + 1, D - 1)
                        best = out[:, pv, u].max()
                        out[d, v, u] = (w5[0, v, u] * cv[d, v, u]
                                        + w5[1, v, u] * out[d, pv, u]
                                        + w5[2, v, u] * out[dm, pv, u]
                                        + w5[3, v, u] * out[dp, pv, u]
                                        + w5[4, v, u] * best)
    return out


def embedding_loss_loops(emb, labels, alpha=0.5, beta=2.0, dilations=(1, 2, 5)):
    _, H, W = emb.shape
    total = 0.0
    count = 0
    for v in range(H):
        for u in range(W):
            for d in dilations:
                for dv in (-d, 0, d):
                    for du in (-d, 0, d):
                        if dv == 0 and du == 0:
                            continue
                        vv, uu = v + dv, u + du
                        if not (0 <= vv < H and 0 <= uu < W):
                            continue
                        dist = float(np.abs(emb[:, v, u] - emb[:, vv, uu]).sum())
                        if labels[v, u] == labels[vv, uu]:
                            total += max(dist - alpha, 0.0)
                        else:
                            total += max(beta - dist, 0.0)
                        count += 1
    return total, count


def bilinear_upsample_loops(values, factor):
    """Half-pixel-center bilinear with edge clamping, for small hand checks."""
    H, W = values.shape
    Ho, Wo = H * factor, W * factor
    out = np.zeros((Ho, Wo), dtype=np.float64)
    for i in range(Ho):
        for j in range(Wo):
            ci = (i + 0.5) / factor - 0.5
            cj = (j + 0.5) / factor - 0.5
            i0, j0 = math.floor(ci), math.floor(cj)
            ti, tj = ci - i0, cj - j0
            i0c, i1c = min(max(i0, 0), H - 1), min(max(i0 + 1, 0), H - 1)
            j0c, j1c = min(max(j0, 0), W - 1), min(max(j0 + 1, 0), W - 1)
            out[i, j] = ((1 - ti) * (1 - tj) * values[i0c, j0c]
                         + (1 - ti) * tj * values[i0c, j1c]
                         + ti * (1 - tj) * values[i1c, j0c]
                         + ti * tj * values[i1c, j1c])
    return out
