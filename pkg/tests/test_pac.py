import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from costfilter.errors import ConfigError
from costfilter.pac import (PacParams, delta_weights, pac_filter, pac_kernel,
                            pac_vjp, pac_volume_forward, pac_volume_vjp)
from costfilter.tensor_ops import WindowSpec, conv2d

from oracles import pac_loops

WIN3 = WindowSpec(3, 1)


def test_kernel_identical_features():
    f = np.random.default_rng(0).standard_normal(8)
    assert pac_kernel(f, f) == pytest.approx(1.0)


def test_kernel_distance_two_squared():
    f0 = np.zeros(2)
    f1 = np.array([1.0, 1.0])  # squared distance 2
    assert pac_kernel(f0, f1) == pytest.approx(math.exp(-1.0), rel=1e-12)
    assert pac_kernel(f0, f1) == pytest.approx(0.367879, abs=1e-6)


def test_kernel_vanishes_for_far_features():
    assert pac_kernel(np.zeros(4), np.full(4, 100.0)) == pytest.approx(0.0, abs=1e-30)


def test_kernel_symmetry():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal(5), rng.standard_normal(5)
    assert pac_kernel(a, b) == pytest.approx(pac_kernel(b, a))


def test_constant_adapting_features_reduce_to_conv2d():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 6, 7))
    adapt = np.full((3, 6, 7), 1.7)
    w = rng.standard_normal((2, 2, 3, 3))
    b = rng.standard_normal(2)
    got = pac_filter(x, adapt, PacParams(w, b), WIN3)
    ref = conv2d(x, w, b, dilation=1, pad=1)
    # identical up to float64 summation order (the two paths accumulate taps
    # in different orders); far inside the 1e-6 acceptance tolerance
    np.testing.assert_allclose(got, ref, atol=1e-12)


def test_constant_adapt_dilated_matches_conv2d():
    rng = np.random.default_rng(3)
    win = WindowSpec(3, 2)
    x = rng.standard_normal((1, 7, 8))
    adapt = np.zeros((2, 7, 8))
    w = rng.standard_normal((1, 1, 3, 3))
    b = rng.standard_normal(1)
    got = pac_filter(x, adapt, PacParams(w, b), win)
    ref = conv2d(x, w, b, dilation=2, pad=2)
    np.testing.assert_allclose(got, ref, atol=1e-12)


def test_delta_kernel_identity_for_any_adapt():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 5, 6))
    adapt = rng.standard_normal((3, 5, 6))
    p = PacParams(delta_weights(2, 2, 3, dtype=np.float64), np.zeros(2))
    np.testing.assert_allclose(pac_filter(x, adapt, p, WIN3), x, atol=1e-12)


@pytest.mark.parametrize("size,dilation", [(3, 1), (3, 2), (5, 1), (5, 2)])
def test_filter_matches_loop_oracle(size, dilation):
    rng = np.random.default_rng(size * 7 + dilation)
    win = WindowSpec(size, dilation)
    x = rng.standard_normal((2, 6, 6))
    adapt = rng.standard_normal((3, 6, 6)) * 0.6
    w = rng.standard_normal((2, 2, size, size)) * 0.4
    b = rng.standard_normal(2)
    got = pac_filter(x, adapt, PacParams(w, b), win)
    ref = pac_loops(x, adapt, w, b, size, dilation)
    np.testing.assert_allclose(got, ref, atol=1e-6)


@given(a=st.floats(min_value=-3, max_value=3), seed=st.integers(0, 60))
@settings(max_examples=20, deadline=None)
def test_filter_linear_in_slice_and_weights(a, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 5, 5))
    y = rng.standard_normal((1, 5, 5))
    adapt = rng.standard_normal((2, 5, 5)) * 0.5
    w = rng.standard_normal((1, 1, 3, 3))
    p0 = PacParams(w, np.zeros(1))
    lhs = pac_filter(a * x + y, adapt, p0, WIN3)
    rhs = a * pac_filter(x, adapt, p0, WIN3) + pac_filter(y, adapt, p0, WIN3)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-5, atol=1e-8)
    pw = PacParams(a * w, np.zeros(1))
    np.testing.assert_allclose(pac_filter(x, adapt, pw, WIN3),
                               a * pac_filter(x, adapt, p0, WIN3),
                               rtol=1e-5, atol=1e-8)


def test_vjp_zero_upstream():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 5, 6))
    adapt = rng.standard_normal((3, 5, 6))
    p = PacParams(rng.standard_normal((2, 2, 3, 3)), rng.standard_normal(2))
    gx, ga, gw, gb = pac_vjp(x, adapt, p, WIN3, np.zeros((2, 5, 6)))
    for g in (gx, ga, gw, gb):
        np.testing.assert_allclose(g, 0.0)


def test_vjp_constant_adapt_zero_feature_grad():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((2, 5, 6))
    adapt = np.full((3, 5, 6), 0.8)
    p = PacParams(rng.standard_normal((2, 2, 3, 3)), rng.standard_normal(2))
    _, ga, _, _ = pac_vjp(x, adapt, p, WIN3, rng.standard_normal((2, 5, 6)))
    np.testing.assert_allclose(ga, 0.0, atol=1e-6)


def test_vjp_matches_finite_differences():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 5, 6))
    adapt = rng.standard_normal((3, 5, 6)) * 0.5
    w = rng.standard_normal((2, 2, 3, 3)) * 0.5
    b = rng.standard_normal(2) * 0.2
    up = rng.standard_normal((2, 5, 6))
    p = PacParams(w, b)
    grads = pac_vjp(x, adapt, p, WIN3, up)
    arrays = [x, adapt, w, b]
    h = 1e-4
    for which in range(4):
        arr = arrays[which]
        for _ in range(12):
            i = rng.integers(0, arr.size)
            plus = [a.copy() for a in arrays]
            plus[which].reshape(-1)[i] += h
            minus = [a.copy() for a in arrays]
            minus[which].reshape(-1)[i] -= h
            fp = pac_filter(plus[0], plus[1], PacParams(plus[2], plus[3]), WIN3)
            fm = pac_filter(minus[0], minus[1], PacParams(minus[2], minus[3]), WIN3)
            num = ((fp - fm) * up).sum() / (2 * h)
            assert grads[which].reshape(-1)[i] == pytest.approx(num, rel=1e-5, abs=1e-8)


def test_volume_path_matches_per_slice():
    rng = np.random.default_rng(8)
    vol = rng.standard_normal((4, 5, 6))
    adapt = rng.standard_normal((3, 5, 6)) * 0.5
    p = PacParams(rng.standard_normal((1, 1, 3, 3)), rng.standard_normal(1))
    out, K = pac_volume_forward(vol, adapt, p, WIN3)
    for d in range(4):
        ref = pac_filter(vol[d][None], adapt, p, WIN3)
        np.testing.assert_allclose(out[d], ref[0], atol=1e-9)


def test_volume_vjp_matches_slice_vjp():
    rng = np.random.default_rng(9)
    vol = rng.standard_normal((3, 5, 6))
    adapt = rng.standard_normal((2, 5, 6)) * 0.5
    p = PacParams(rng.standard_normal((1, 1, 3, 3)), rng.standard_normal(1))
    up = rng.standard_normal((3, 5, 6))
    gv, ga, gw, gb = pac_volume_vjp(vol, adapt, p, WIN3, up)
    ga_ref = np.zeros_like(ga)
    gw_ref = np.zeros_like(gw)
    gb_ref = np.zeros_like(gb)
    for d in range(3):
        gx_d, ga_d, gw_d, gb_d = pac_vjp(vol[d][None], adapt, p, WIN3, up[d][None])
        np.testing.assert_allclose(gv[d], gx_d[0], atol=1e-9)
        ga_ref += ga_d
        gw_ref += gw_d
        gb_ref += gb_d
    np.testing.assert_allclose(ga, ga_ref, atol=1e-9)
    np.testing.assert_allclose(gw, gw_ref, atol=1e-9)
    np.testing.assert_allclose(gb, gb_ref, atol=1e-9)


def test_extent_mismatch_raises():
    with pytest.raises(ConfigError):
        pac_filter(np.zeros((1, 4, 4)), np.zeros((2, 5, 5)),
                   PacParams(np.zeros((1, 1, 3, 3)), np.zeros(1)), WIN3)
    with pytest.raises(ConfigError):
        pac_filter(np.zeros((2, 4, 4)), np.zeros((2, 4, 4)),
                   PacParams(np.zeros((1, 1, 3, 3)), np.zeros(1)), WIN3)
