"""End-to-end matching pipeline shared by training and the match command:
feature extraction -> correlation cost volume -> content-adaptive filtering ->
soft argmin -> disparity upsampling, with the chained backward pass.

The correlation similarity is negated before filtering so that lower values
mean better matches, matching the soft-argmin convention; learned filters see
and shape this cost volume end to end.

Parameters live in a flat dict keyed by the weights-file tensor names
("feat.l1.w", "emb.l2.b", ...). Filters consume the left view's unary
features as guidance/adapting features; SABF consumes the 64-d embedding of
the left image, bilinearly resized to the volume resolution when the feature
stride is 2.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dfn as dfn_mod
from . import pac as pac_mod
from . import sabf as sabf_mod
from . import sga as sga_mod
from .cost_volume import build_correlation, build_correlation_vjp
from .disparity import DisparityMap
from .errors import ConfigError
from .features import (EMBED_DIM, EmbeddingParams, FeatureExtractorParams,
                       embed_forward, embed_vjp, extract_features_forward,
                       extract_features_vjp)
from .regression import (soft_argmin_forward, soft_argmin_vjp,
                         upsample_disparity, upsample_disparity_vjp)
from .tensor_ops import WindowSpec, resize_bilinear, resize_bilinear_vjp

FILTERS = ("none", "sabf", "dfn", "pac", "sga")

FEATURE_HIDDEN = 16   # first extractor layer width (3 -> 16 -> F)
EMBED_HIDDEN = (8, 8)  # hidden widths of the embedding stack (3 -> . -> . -> 64)
GUIDANCE_HIDDEN = 32  # hidden width of the DFN generator and SGA guidance stacks


@dataclass
class PipelineConfig:
    filter: str = "sga"
    max_disp: int = 192
    downsample: int = 2
    win: WindowSpec = field(default_factory=WindowSpec)
    sigma_s: float = 0.7
    sigma_r: float = 0.1
    feature_channels: int = 16
    threads: int = 1

    def __post_init__(self):
        if self.filter not in FILTERS:
            raise ConfigError(f"unknown filter {self.filter!r}; choose from {FILTERS}")
        if self.max_disp < 1:
            raise ConfigError("max_disp must be >= 1")
        if self.downsample not in (1, 2):
            raise ConfigError("downsample must be 1 or 2")

    @property
    def volume_disp(self) -> int:
        """Disparity range at feature resolution."""
        return max(1, self.max_disp // self.downsample)

    def sabf_config(self) -> sabf_mod.SabfConfig:
        return sabf_mod.SabfConfig(self.sigma_s, self.sigma_r, self.win)


def parallel_map(fn, items, threads: int):
    """Order-preserving map; threads > 1 runs items in a thread pool.

    Items must write disjoint outputs (or be pure) so the result is
    bit-identical to the serial evaluation.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _chunks(n: int, parts: int):
    parts = max(1, min(parts, n))
    edges = np.linspace(0, n, parts + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if a < b]


# ---------------------------------------------------------------------------
# parameters

def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_params(cfg: PipelineConfig, seed: int = 0, dtype=np.float32) -> dict:
    """Seeded 1/sqrt(fan-in) uniform init for the networks the filter needs."""
    rng = np.random.default_rng(seed)
    F = cfg.feature_channels
    s2 = cfg.win.size ** 2
    params: dict[str, np.ndarray] = {}

    def conv(name, c_out, c_in, k=3):
        fan = c_in * k * k
        params[f"{name}.w"] = _uniform(rng, (c_out, c_in, k, k), fan, dtype)
        params[f"{name}.b"] = _uniform(rng, (c_out,), fan, dtype)

    conv("feat.l1", FEATURE_HIDDEN, 3)
    conv("feat.l2", F, FEATURE_HIDDEN)
    if cfg.filter == "sabf":
        h1, h2 = EMBED_HIDDEN
        conv("emb.l1", h1, 3)
        conv("emb.l2", h2, h1)
        conv("emb.l3", EMBED_DIM, h2)
    elif cfg.filter == "dfn":
        conv("dfn.l1", GUIDANCE_HIDDEN, F)
        conv("dfn.l2", s2, GUIDANCE_HIDDEN)  # C_B = 1 on the correlation volume
    elif cfg.filter == "sga":
        conv("sga.l1", GUIDANCE_HIDDEN, F)
        conv("sga.l2", 20, GUIDANCE_HIDDEN)
    elif cfg.filter == "pac":
        params["pac.w"] = pac_mod.delta_weights(1, 1, cfg.win.size, dtype)
        params["pac.b"] = np.zeros((1,), dtype=dtype)
    return params


def required_names(filter_name: str) -> list:
    names = ["feat.l1.w", "feat.l1.b", "feat.l2.w", "feat.l2.b"]
    extra = {
        "none": [],
        "sabf": [f"emb.l{i}.{s}" for i in (1, 2, 3) for s in ("w", "b")],
        "dfn": [f"dfn.l{i}.{s}" for i in (1, 2) for s in ("w", "b")],
        "pac": ["pac.w", "pac.b"],
        "sga": [f"sga.l{i}.{s}" for i in (1, 2) for s in ("w", "b")],
    }
    return names + extra[filter_name]


def check_params(params: dict, cfg: PipelineConfig):
    missing = [n for n in required_names(cfg.filter) if n not in params]
    if missing:
        raise ConfigError(f"weights missing tensors for filter {cfg.filter!r}: "
                          f"{', '.join(missing)}")


def _feat(params, cfg) -> FeatureExtractorParams:
    return FeatureExtractorParams(params["feat.l1.w"], params["feat.l1.b"],
                                  params["feat.l2.w"], params["feat.l2.b"],
                                  downsample=cfg.downsample)


def _embp(params) -> EmbeddingParams:
    return EmbeddingParams(*(params[f"emb.l{i}.{s}"] for i in (1, 2, 3)
                             for s in ("w", "b")))


def _dfnp(params) -> dfn_mod.DfnGeneratorParams:
    return dfn_mod.DfnGeneratorParams(params["dfn.l1.w"], params["dfn.l1.b"],
                                      params["dfn.l2.w"], params["dfn.l2.b"])


def _sgap(params) -> sga_mod.SgaGuidanceParams:
    return sga_mod.SgaGuidanceParams(params["sga.l1.w"], params["sga.l1.b"],
                                     params["sga.l2.w"], params["sga.l2.b"])


def _pacp(params) -> pac_mod.PacParams:
    return pac_mod.PacParams(params["pac.w"], params["pac.b"])


# ---------------------------------------------------------------------------
# forward / backward

def standardize(image: np.ndarray) -> np.ndarray:
    """Per-channel zero-mean unit-std normalization of one image."""
    mean = image.mean(axis=(1, 2), keepdims=True)
    std = image.std(axis=(1, 2), keepdims=True)
    return (image - mean) / np.maximum(std, 1e-6)


@dataclass
class ForwardState:
    cfg: PipelineConfig
    disp: DisparityMap = None
    disp_feat: np.ndarray = None
    left_std: np.ndarray = None
    fL: np.ndarray = None
    fR: np.ndarray = None
    featL_cache: object = None
    featR_cache: object = None
    cost: np.ndarray = None
    filtered: np.ndarray = None
    sa_cache: object = None
    emb_full: np.ndarray = None
    emb: np.ndarray = None
    emb_cache: object = None
    sabf_cache: object = None
    filters: object = None
    gen_cache: object = None
    pac_K: np.ndarray = None
    sga_weights: object = None
    sga_cache: object = None
    guide_cache: object = None


def run_forward(left: np.ndarray, right: np.ndarray, params: dict,
                cfg: PipelineConfig) -> ForwardState:
    if left.shape != right.shape:
        raise ConfigError(f"stereo pair dimensions differ: {left.shape} vs {right.shape}")
    check_params(params, cfg)
    st = ForwardState(cfg=cfg)
    st.left_std = standardize(left)
    right_std = standardize(right)
    fp = _feat(params, cfg)
    st.fL, st.featL_cache = extract_features_forward(st.left_std, fp)
    st.fR, st.featR_cache = extract_features_forward(right_std, fp)
    sim = build_correlation(st.fL, st.fR, cfg.volume_disp)
    st.cost = -sim.data
    st.filtered = _filter_forward(st, params, cfg)
    st.disp_feat, st.sa_cache = soft_argmin_forward(st.filtered)
    st.disp = upsample_disparity(DisparityMap.dense(st.disp_feat), cfg.downsample)
    return st


def _filter_forward(st: ForwardState, params: dict, cfg: PipelineConfig) -> np.ndarray:
    cost = st.cost
    D = cost.shape[0]
    threads = cfg.threads
    if cfg.filter == "none":
        return cost
    if cfg.filter == "sabf":
        st.emb_full, st.emb_cache = embed_forward(st.left_std, _embp(params))
        hw = cost.shape[-2:]
        st.emb = (st.emb_full if st.emb_full.shape[-2:] == hw
                  else resize_bilinear(st.emb_full, *hw))
        sc = cfg.sabf_config()
        K, den = sabf_mod.kernel_field(st.emb, sc)
        out = np.empty_like(cost)

        def _run(chunk):
            a, b = chunk
            out[a:b] = sabf_mod.filter_with_field(cost[a:b], K, den, sc.win)

        parallel_map(_run, _chunks(D, threads), threads)
        st.sabf_cache = (K, den, out)
        return out
    if cfg.filter == "dfn":
        st.filters, st.gen_cache = dfn_mod.dfn_generate_forward(st.fL, _dfnp(params),
                                                                cfg.win)
        out = np.empty_like(cost)

        def _run(chunk):
            a, b = chunk
            out[a:b] = dfn_mod.dfn_apply(cost[None, a:b], st.filters, cfg.win)[0]

        parallel_map(_run, _chunks(D, threads), threads)
        return out
    if cfg.filter == "pac":
        pp = _pacp(params)
        K = pac_mod._adapting_field(st.fL, cfg.win)
        out = np.empty_like(cost)

        def _run(chunk):
            a, b = chunk
            out[a:b] = pac_mod.pac_volume_forward(cost[a:b], st.fL, pp, cfg.win, K=K)[0]

        parallel_map(_run, _chunks(D, threads), threads)
        st.pac_K = K
        return out
    # sga
    st.sga_weights, st.guide_cache = sga_mod.sga_guidance_forward(st.fL, _sgap(params))
    w = st.sga_weights.w
    per_dir_list = parallel_map(
        lambda r: sga_mod._scan_forward(cost, w[r], *sga_mod._SCAN[r]),
        range(4), min(threads, 4))
    per_dir = np.stack(per_dir_list)
    argdir = per_dir.argmax(axis=0).astype(np.int8)
    out = np.take_along_axis(per_dir, argdir[None].astype(np.int64), axis=0)[0]
    st.sga_cache = (argdir, per_dir)
    return out


def run_backward(st: ForwardState, params: dict, grad_disp_values: np.ndarray,
                 emb_extra_grad: np.ndarray | None = None) -> dict:
    """Chain all VJPs; returns gradients keyed like ``params``.

    ``grad_disp_values`` is d(loss)/d(full-resolution disparity values);
    ``emb_extra_grad`` (full resolution) adds an embedding-loss contribution
    on the SABF path.
    """
    cfg = st.cfg
    grads: dict[str, np.ndarray] = {}
    fh, fw = st.disp_feat.shape
    g = upsample_disparity_vjp(grad_disp_values, fh, fw, cfg.downsample)
    g_filtered = soft_argmin_vjp(st.filtered, g, st.sa_cache)
    g_fL_extra = None

    if cfg.filter == "none":
        g_cost = g_filtered
    elif cfg.filter == "sabf":
        sc = cfg.sabf_config()
        g_cost, g_emb = sabf_mod.sabf_vjp(st.cost, st.emb, sc, g_filtered,
                                          cache=st.sabf_cache)
        if st.emb_full.shape != st.emb.shape:
            g_emb = resize_bilinear_vjp(g_emb, *st.emb_full.shape[-2:])
        if emb_extra_grad is not None:
            g_emb = g_emb + emb_extra_grad
        for i, (gw, gb) in enumerate(embed_vjp(_embp(params), st.emb_cache, g_emb), 1):
            grads[f"emb.l{i}.w"] = gw
            grads[f"emb.l{i}.b"] = gb
    elif cfg.filter == "dfn":
        g_cost4, g_logits = dfn_mod.dfn_vjp(st.cost[None], st.filters, cfg.win,
                                            g_filtered[None])
        g_cost = g_cost4[0]
        pgrads, g_fL_extra = dfn_mod.dfn_generator_vjp(_dfnp(params), st.gen_cache,
                                                       g_logits)
        for i, (gw, gb) in enumerate(pgrads, 1):
            grads[f"dfn.l{i}.w"] = gw
            grads[f"dfn.l{i}.b"] = gb
    elif cfg.filter == "pac":
        g_cost, g_fL_extra, gw, gb = pac_mod.pac_volume_vjp(
            st.cost, st.fL, _pacp(params), cfg.win, g_filtered, K=st.pac_K)
        grads["pac.w"] = gw
        grads["pac.b"] = gb
    else:  # sga
        g_cost, g_logits = sga_mod.sga_vjp(st.cost, st.sga_weights, g_filtered,
                                           cache=st.sga_cache)
        pgrads, g_fL_extra = sga_mod.sga_guidance_vjp(_sgap(params), st.guide_cache,
                                                      g_logits)
        for i, (gw, gb) in enumerate(pgrads, 1):
            grads[f"sga.l{i}.w"] = gw
            grads[f"sga.l{i}.b"] = gb

    g_sim = -g_cost
    gL, gR = build_correlation_vjp(st.fL, st.fR, g_sim)
    if g_fL_extra is not None:
        gL = gL + g_fL_extra
    fp = _feat(params, cfg)
    left_grads = extract_features_vjp(fp, st.featL_cache, gL)
    right_grads = extract_features_vjp(fp, st.featR_cache, gR)
    for i, ((lw, lb), (rw, rb)) in enumerate(zip(left_grads, right_grads), 1):
        grads[f"feat.l{i}.w"] = lw + rw
        grads[f"feat.l{i}.b"] = lb + rb
    return grads
