import math

import numpy as np
import pytest

from costfilter.sabf import SabfConfig, sabf_filter, sabf_kernel, sabf_vjp
from costfilter.tensor_ops import WindowSpec

from oracles import sabf_loops, spatial_gaussian_blur_loops


def _cfg(sigma_s=0.7, sigma_r=0.1, size=3, dilation=1):
    return SabfConfig(sigma_s, sigma_r, WindowSpec(size, dilation))


def test_kernel_self_is_one():
    e = np.random.default_rng(0).standard_normal(64)
    assert sabf_kernel((3, 4), (3, 4), e, e, _cfg()) == pytest.approx(1.0)


def test_kernel_spatial_offset_value():
    # identical embeddings, offset (1, 0), sigma_s = 0.7: exp(-1 / 0.98)
    e = np.zeros(64)
    got = sabf_kernel((1, 0), (0, 0), e, e, _cfg(sigma_s=0.7))
    assert got == pytest.approx(math.exp(-1 / 0.98), rel=1e-12)
    assert got == pytest.approx(0.3604477885978, rel=1e-10)


def test_kernel_decreasing_to_zero_in_embedding_distance():
    e0 = np.zeros(64)
    cfg = _cfg(sigma_r=2.0)
    prev = 1.0
    for scale in (0.1, 0.3, 0.6, 1.5):
        k = sabf_kernel((0, 0), (0, 0), e0, np.full(64, scale), cfg)
        assert k < prev
        prev = k
    far = sabf_kernel((0, 0), (0, 0), e0, np.full(64, 100.0), cfg)
    assert far == pytest.approx(0.0, abs=1e-30)


def test_kernel_symmetry():
    rng = np.random.default_rng(1)
    e1, e2 = rng.standard_normal(64), rng.standard_normal(64)
    cfg = _cfg(sigma_r=1.0)
    assert sabf_kernel((0, 0), (2, 1), e1, e2, cfg) == pytest.approx(
        sabf_kernel((2, 1), (0, 0), e2, e1, cfg))


def test_filter_preserves_constants_including_borders():
    rng = np.random.default_rng(2)
    emb = rng.standard_normal((64, 6, 7)) * 0.2
    const = np.full((3, 6, 7), 4.25)
    out = sabf_filter(const, emb, _cfg(sigma_r=0.5, size=5, dilation=2))
    np.testing.assert_allclose(out, 4.25, atol=1e-6)


def test_filter_sigma_r_to_zero_keeps_input():
    rng = np.random.default_rng(3)
    emb = rng.standard_normal((8, 5, 5))  # all embeddings distinct
    x = rng.standard_normal((1, 5, 5))
    out = sabf_filter(x, emb, _cfg(sigma_r=1e-4))
    np.testing.assert_allclose(out, x, atol=1e-8)


@pytest.mark.parametrize("size", [3, 5])
@pytest.mark.parametrize("dilation", [1, 2])
def test_filter_matches_brute_force(size, dilation):
    rng = np.random.default_rng(size * 10 + dilation)
    x = rng.standard_normal((1, 6, 6))
    emb = rng.standard_normal((16, 6, 6)) * 0.3
    cfg = _cfg(sigma_s=0.9, sigma_r=0.4, size=size, dilation=dilation)
    got = sabf_filter(x, emb, cfg)
    ref = sabf_loops(x, emb, 0.9, 0.4, size, dilation)
    np.testing.assert_allclose(got, ref, atol=1e-6)


def test_filter_output_within_window_hull():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((1, 7, 7))
    emb = rng.standard_normal((8, 7, 7)) * 0.5
    out = sabf_filter(x, emb, _cfg(sigma_r=0.7))
    assert out.min() >= x.min() - 1e-9
    assert out.max() <= x.max() + 1e-9


def test_filter_large_sigma_r_matches_spatial_gaussian():
    rng = np.random.default_rng(6)
    for seed in range(20):
        r = np.random.default_rng(seed)
        x = r.standard_normal((1, 6, 6))
        emb = r.standard_normal((16, 6, 6))
        got = sabf_filter(x, emb, _cfg(sigma_s=0.8, sigma_r=1e6))
        blur = spatial_gaussian_blur_loops(x, 0.8, 3, 1)
        np.testing.assert_allclose(got, blur, atol=1e-4)


def test_vjp_zero_upstream():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 5, 5))
    emb = rng.standard_normal((8, 5, 5)) * 0.4
    gs, ge = sabf_vjp(x, emb, _cfg(sigma_r=0.6), np.zeros_like(x))
    np.testing.assert_allclose(gs, 0.0)
    np.testing.assert_allclose(ge, 0.0)


def test_vjp_constant_slice_embedding_gradient_vanishes():
    rng = np.random.default_rng(8)
    emb = rng.standard_normal((8, 5, 5)) * 0.4
    const = np.full((2, 5, 5), 3.0)
    up = rng.standard_normal((2, 5, 5))
    _, ge = sabf_vjp(const, emb, _cfg(sigma_r=0.6), up)
    np.testing.assert_allclose(ge, 0.0, atol=1e-12)


def test_vjp_matches_finite_differences():
    rng = np.random.default_rng(9)
    cfg = _cfg(sigma_s=1.0, sigma_r=0.8)
    x = rng.standard_normal((1, 5, 5))
    emb = rng.standard_normal((6, 5, 5)) * 0.5
    up = rng.standard_normal((1, 5, 5))
    gs, ge = sabf_vjp(x, emb, cfg, up)
    h = 1e-4
    for _ in range(40):
        which = rng.integers(0, 2)
        arr = x if which == 0 else emb
        i = rng.integers(0, arr.size)
        p = arr.copy()
        p.reshape(-1)[i] += h
        m = arr.copy()
        m.reshape(-1)[i] -= h
        fp = sabf_filter(p if which == 0 else x, emb if which == 0 else p, cfg)
        fm = sabf_filter(m if which == 0 else x, emb if which == 0 else m, cfg)
        num = ((fp - fm) * up).sum() / (2 * h)
        ana = (gs if which == 0 else ge).reshape(-1)[i]
        assert ana == pytest.approx(num, rel=1e-5, abs=1e-8)


def test_shared_kernel_over_channels_equals_per_slice():
    # filtering a D-channel stack equals filtering each slice independently
    rng = np.random.default_rng(10)
    vol = rng.standard_normal((4, 6, 6))
    emb = rng.standard_normal((8, 6, 6)) * 0.4
    cfg = _cfg(sigma_r=0.5)
    stacked = sabf_filter(vol, emb, cfg)
    for d in range(4):
        single = sabf_filter(vol[d][None], emb, cfg)
        np.testing.assert_allclose(stacked[d], single[0], atol=1e-7)


def test_mismatched_extents_raise():
    from costfilter.errors import ConfigError
    with pytest.raises(ConfigError):
        sabf_filter(np.zeros((1, 4, 4)), np.zeros((8, 5, 5)), _cfg())
