import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from editmask.imagecore import BinaryMask, ImageBuffer, Rect, SynthSpec, synth_pair
from editmask.maskgen import (
    EditStats,
    MaskGenConfig,
    PairMismatchError,
    dilate,
    filter_components,
    generate_mask,
    maxpool,
    pixel_diff,
    run_steps,
)

import oracles
from conftest import masks


def _img(array):
    return ImageBuffer(np.asarray(array, dtype=np.uint8))


# -- pixel_diff -----------------------------------------------------------------


def test_identical_images_give_empty_mask():
    img = _img(np.random.default_rng(0).integers(0, 256, (9, 11, 3)))
    for tol in (0, 12, 255):
        assert pixel_diff(img, img, tol).count() == 0


def test_difference_equal_to_tolerance_is_not_edited():
    ref = np.zeros((3, 3, 3), dtype=np.uint8)
    tgt = ref.copy()
    tgt[1, 1, 2] = 12
    tgt[0, 0, 0] = 13
    mask = pixel_diff(_img(ref), _img(tgt), 12).values
    assert not mask[1, 1]
    assert mask[0, 0]
    assert mask.sum() == 1


def test_difference_uses_max_channel_magnitude():
    ref = np.full((1, 2, 3), 100, dtype=np.uint8)
    tgt = ref.copy()
    tgt[0, 0] = (95, 100, 100)  # -5 only
    tgt[0, 1] = (90, 110, 100)  # max 10
    assert pixel_diff(_img(ref), _img(tgt), 6).values.tolist() == [[False, True]]


def test_pixel_diff_matches_scan():
    rng = np.random.default_rng(1)
    ref = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    tgt = np.clip(ref.astype(int) + rng.integers(-20, 21, ref.shape), 0, 255).astype(np.uint8)
    got = pixel_diff(_img(ref), _img(tgt), 10)
    assert got.cell_scale == 1
    assert np.array_equal(got.values, oracles.pixel_diff_scan(ref, tgt, 10))


def test_pixel_diff_grayscale():
    ref = np.zeros((4, 4), dtype=np.uint8)
    tgt = ref.copy()
    tgt[2, 3] = 200
    assert pixel_diff(_img(ref), _img(tgt), 12).count() == 1


@pytest.mark.parametrize(
    "shape_a, shape_b",
    [((4, 4, 3), (4, 5, 3)), ((4, 4, 3), (5, 4, 3)), ((4, 4, 3), (4, 4, 1))],
)
def test_pixel_diff_mismatch(shape_a, shape_b):
    with pytest.raises(PairMismatchError):
        pixel_diff(_img(np.zeros(shape_a)), _img(np.zeros(shape_b)), 12)


# -- dilate ---------------------------------------------------------------------


def test_dilate_radius_zero_is_identity():
    m = BinaryMask(np.random.default_rng(2).random((10, 7)) < 0.3)
    assert dilate(m, 0) == m


def test_dilate_single_cell_gives_square():
    values = np.zeros((9, 9), dtype=bool)
    values[4, 4] = True
    out = dilate(BinaryMask(values), 1).values
    expected = np.zeros((9, 9), dtype=bool)
    expected[3:6, 3:6] = True
    assert np.array_equal(out, expected)


def test_dilate_clips_at_border():
    values = np.zeros((5, 5), dtype=bool)
    values[0, 0] = True
    assert dilate(BinaryMask(values), 2).count() == 9


def test_dilate_matches_neighborhood_bruteforce():
    values = np.random.default_rng(3).random((64, 64)) < 0.05
    out = dilate(BinaryMask(values), 2).values
    assert np.array_equal(out, oracles.dilate_neighborhood(values, 2))


def test_dilate_rejects_pooled_mask():
    with pytest.raises(ValueError):
        dilate(BinaryMask(np.zeros((2, 2), bool), 4), 1)


@settings(max_examples=60, deadline=None)
@given(masks(), st.integers(0, 4))
def test_dilate_property_superset_and_oracle(mask, radius):
    out = dilate(mask, radius).values
    assert np.all(out[mask.values])
    assert np.array_equal(out, oracles.dilate_paint(mask.values, radius))


# -- filter_components ----------------------------------------------------------


@pytest.mark.parametrize("threshold", [0, 1])
def test_filter_small_threshold_is_identity(threshold):
    m = BinaryMask(np.random.default_rng(4).random((16, 16)) < 0.4)
    assert filter_components(m, threshold, 8) == m


def test_filter_keeps_only_large_component():
    values = np.zeros((20, 20), dtype=bool)
    values[0, 0:2] = True  # 2 cells
    values[5:10, 5:15] = True  # 50 cells
    out = filter_components(BinaryMask(values), 10, 8).values
    assert out.sum() == 50
    assert not out[0, :2].any()


def test_filter_connectivity_matters():
    diag = np.eye(6, dtype=bool)
    assert filter_components(BinaryMask(diag), 6, 8).count() == 6
    assert filter_components(BinaryMask(diag), 6, 4).count() == 0


def test_filter_matches_flood_fill():
    values = np.random.default_rng(5).random((64, 64)) < 0.25
    out = filter_components(BinaryMask(values), 8, 8).values
    assert np.array_equal(out, oracles.filter_flood_fill(values, 8, 8))


@settings(max_examples=60, deadline=None)
@given(masks(), st.integers(0, 30), st.sampled_from([4, 8]))
def test_filter_properties(mask, threshold, conn):
    once = filter_components(mask, threshold, conn)
    assert not np.any(once.values & ~mask.values)
    assert filter_components(once, threshold, conn) == once
    assert np.array_equal(once.values, oracles.filter_flood_fill(mask.values, threshold, conn))


# -- maxpool --------------------------------------------------------------------


def test_maxpool_k1_identity():
    m = BinaryMask(np.random.default_rng(6).random((13, 9)) < 0.5)
    assert maxpool(m, 1) == m


def test_maxpool_single_cell_16():
    values = np.zeros((16, 16), dtype=bool)
    values[11, 3] = True
    out = maxpool(BinaryMask(values), 16)
    assert out.values.shape == (1, 1)
    assert out.values.all()
    assert out.cell_scale == 16


def test_maxpool_ragged_matches_scan():
    values = np.random.default_rng(7).random((53, 67)) < 0.01
    out = maxpool(BinaryMask(values), 16)
    assert out.values.shape == (4, 5)
    assert np.array_equal(out.values, oracles.maxpool_scan(values, 16))


@settings(max_examples=60, deadline=None)
@given(masks(max_side=50), st.integers(1, 20))
def test_maxpool_property(mask, k):
    out = maxpool(mask, k)
    assert out.values.shape == (-(-mask.height // k), -(-mask.width // k))
    assert np.array_equal(out.values, oracles.maxpool_scan(mask.values, k))
    ys, xs = np.nonzero(mask.values)
    assert np.all(out.values[ys // k, xs // k])


# -- generate_mask --------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        MaskGenConfig(tolerance=256)
    with pytest.raises(ValueError):
        MaskGenConfig(connectivity=6)
    with pytest.raises(ValueError):
        MaskGenConfig(pool_kernel=0)
    with pytest.raises(ValueError):
        MaskGenConfig(dilation_radius=-1)


def test_identical_pair_is_no_edit():
    img = _img(np.random.default_rng(8).integers(0, 256, (64, 64, 3)))
    pooled, stats = generate_mask(img, img)
    assert pooled.count() == 0
    assert stats.a_edit == 0 and stats.x is None
    assert stats.degenerate_no_edit and not stats.degenerate_full_edit


def test_full_recolor_is_full_edit():
    ref, tgt, _ = synth_pair(SynthSpec(100, 70, Rect(0, 0, 100, 70)), 1)
    pooled, stats = generate_mask(ref, tgt)
    assert pooled.values.all()
    assert stats.a_edit == stats.a_total == 7000
    assert stats.x == 1.0
    assert stats.degenerate_full_edit and not stats.degenerate_no_edit


def test_rect_recovery_iou():
    region = Rect(200, 136, 264, 200)
    ref, tgt, truth = synth_pair(SynthSpec(512, 512, region, noise_amplitude=6), 11)
    cfg = MaskGenConfig()
    pooled, stats = generate_mask(ref, tgt, cfg)
    expected = maxpool(dilate(truth, cfg.dilation_radius), cfg.pool_kernel)
    assert oracles.iou(pooled.values, expected.values) >= 0.95
    assert stats.a_edit == pooled.count() * 256


def test_pipeline_is_composition_of_oracles():
    rng = np.random.default_rng(9)
    ref = rng.integers(0, 256, (45, 61, 3), dtype=np.uint8)
    tgt = ref.copy()
    tgt[10:30, 5:40] ^= 0x80
    speck = rng.random((45, 61)) < 0.01
    tgt[speck] ^= 0x40
    cfg = MaskGenConfig(tolerance=12, dilation_radius=1, min_component_area=20, connectivity=8, pool_kernel=8)
    step1 = oracles.pixel_diff_scan(ref, tgt, 12)
    step2 = oracles.dilate_neighborhood(step1, 1)
    step3 = oracles.filter_flood_fill(step2, 20, 8)
    step4 = oracles.maxpool_scan(step3, 8)
    steps = run_steps(_img(ref), _img(tgt), cfg)
    assert np.array_equal(steps.diff.values, step1)
    assert np.array_equal(steps.dilated.values, step2)
    assert np.array_equal(steps.filtered.values, step3)
    assert np.array_equal(steps.pooled.values, step4)
    _, stats = generate_mask(_img(ref), _img(tgt), cfg)
    assert stats.a_edit == min(step4.sum() * 64, 45 * 61)


def test_a_edit_clamped_on_ragged_grid():
    ref = np.zeros((20, 20, 3), dtype=np.uint8)
    tgt = np.full_like(ref, 200)
    _, stats = generate_mask(_img(ref), _img(tgt), MaskGenConfig(pool_kernel=16))
    # 4 pooled cells * 256 = 1024 > 400 px
    assert stats.a_edit == 400
    assert stats.x == 1.0 and stats.degenerate_full_edit


def test_generate_mask_is_pure():
    ref, tgt, _ = synth_pair(SynthSpec(128, 96, Rect(30, 20, 90, 70), noise_amplitude=5), 2)
    a = generate_mask(ref, tgt)
    b = generate_mask(ref, tgt)
    assert a[0] == b[0] and a[1] == b[1]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 5000), st.integers(1, 5000))
def test_edit_stats_invariants(a_edit, a_total):
    if a_edit > a_total:
        with pytest.raises(ValueError):
            EditStats.from_area(a_edit, a_total)
        return
    s = EditStats.from_area(a_edit, a_total)
    assert s.degenerate_no_edit == (a_edit == 0)
    assert s.degenerate_full_edit == (a_edit == a_total)
    if a_edit:
        assert s.x >= 1
    if a_edit == a_total:
        assert s.x == 1.0
