import numpy as np
import pytest

from costfilter.errors import ConfigError
from costfilter.synthetic import (StereogramSpec, make_segmentation_toy,
                                  make_stereogram, segmentation_toy_params,
                                  stereogram_labels)


def test_zero_disparity_gives_identical_views():
    left, right, gt = make_stereogram(StereogramSpec(seed=3, square_disparity=0))
    np.testing.assert_array_equal(left, right)
    np.testing.assert_allclose(gt.values, 0.0)
    assert gt.valid.all()


def test_gt_histogram_two_values():
    spec = StereogramSpec(seed=5, square_disparity=4)
    _, _, gt = make_stereogram(spec)
    vals = np.unique(gt.values[gt.valid])
    np.testing.assert_array_equal(vals, [0.0, 4.0])


def test_warping_right_by_gt_reproduces_left():
    spec = StereogramSpec(seed=7, height=48, width=96, square_disparity=5)
    left, right, gt = make_stereogram(spec)
    H, W = gt.values.shape
    for v in range(H):
        for u in range(W):
            if not gt.valid[v, u]:
                continue
            d = int(gt.values[v, u])
            assert u - d >= 0
            np.testing.assert_array_equal(left[:, v, u], right[:, v, u - d])


def test_occlusion_band_marked_invalid():
    spec = StereogramSpec(seed=1, height=32, width=64, square_disparity=4)
    _, _, gt = make_stereogram(spec)
    side = spec.square_side
    r0 = (32 - side) // 2
    c0 = (64 - side) // 2
    assert not gt.valid[r0:r0 + side, c0 - 4:c0].any()
    # everything else is valid
    expected_invalid = side * 4
    assert (~gt.valid).sum() == expected_invalid


def test_stereogram_deterministic_per_seed():
    a = make_stereogram(StereogramSpec(seed=11))
    b = make_stereogram(StereogramSpec(seed=11))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    np.testing.assert_array_equal(a[2].values, b[2].values)


def test_textures_live_on_the_8bit_grid():
    left, right, _ = make_stereogram(StereogramSpec(seed=2))
    codes = left * 255.0
    np.testing.assert_allclose(codes, np.rint(codes), atol=1e-5)
    codes = right * 255.0
    np.testing.assert_allclose(codes, np.rint(codes), atol=1e-5)


def test_spec_validation():
    with pytest.raises(ConfigError):
        StereogramSpec(square_fraction=0.0)
    with pytest.raises(ConfigError):
        StereogramSpec(height=16, width=16, square_fraction=0.9,
                       square_disparity=4)
    with pytest.raises(ConfigError):
        StereogramSpec(noise=-0.1)


def test_stereogram_labels_mark_square():
    spec = StereogramSpec(seed=4, square_disparity=3)
    _, _, gt = make_stereogram(spec)
    labels = stereogram_labels(gt, 3)
    assert set(np.unique(labels)) == {0, 1}
    assert labels.sum() == (gt.values == 3).sum()


def test_segmentation_toy_two_labels():
    _, labels = make_segmentation_toy(0, 24, 32)
    assert set(np.unique(labels)) == {0, 1}


def test_segmentation_toy_noise_free_regions_constant():
    image, labels = make_segmentation_toy(1, 16, 20, noise=0.0)
    for lab in (0, 1):
        region = image[:, labels == lab]
        assert np.ptp(region, axis=1).max() == pytest.approx(0.0)


def test_segmentation_toy_deterministic():
    a = make_segmentation_toy(9, 16, 20)
    b = make_segmentation_toy(9, 16, 20)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


@pytest.mark.parametrize("seed", [0, 3, 17, 42])
def test_boundary_count_matches_line_rasterization(seed):
    # oracle: rasterize the seeded line independently by solving, per row pair
    # and per column pair, whether the signed distance crosses zero
    H, W = 24, 30
    _, labels = make_segmentation_toy(seed, H, W)
    p, _ = segmentation_toy_params(seed, H, W)

    def signed(u, v):
        return (u - p.cx) * p.nx + (v - p.cy) * p.ny

    expected_transitions = 0
    for v in range(H):
        for u in range(W - 1):
            if (signed(u, v) > 0) != (signed(u + 1, v) > 0):
                expected_transitions += 1
    for v in range(H - 1):
        for u in range(W):
            if (signed(u, v) > 0) != (signed(u, v + 1) > 0):
                expected_transitions += 1

    got = (labels[:, :-1] != labels[:, 1:]).sum() + (labels[:-1] != labels[1:]).sum()
    assert got == expected_transitions
    assert got > 0
