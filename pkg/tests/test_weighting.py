import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from editmask.imagecore import BinaryMask
from editmask.maskgen import EditStats
from editmask.weighting import (
    DEFAULT_KIND,
    StatsMismatchError,
    WeightFunctionKind as K,
    WeightMap,
    WeightSpec,
    build_weight_map,
    evaluate,
    reconstruct_weight_map,
    weight_summary,
)

KINDS = list(K)


def test_default_is_logarithmic():
    assert DEFAULT_KIND is K.LOGARITHMIC
    assert len(KINDS) == 4


@pytest.mark.parametrize("kind", KINDS)
def test_unit_ratio_gives_unit_weight(kind):
    assert evaluate(kind, 1.0) == 1.0


@pytest.mark.parametrize(
    "kind, x, expected",
    [
        (K.LOGARITHMIC, 4, 3.0),
        (K.LOGARITHMIC, 1024, 11.0),
        (K.EXPONENTIAL_ROOT, 4, 2.0),
        (K.QUADRATIC_ROOT, 9, 5.0),
        (K.LINEAR, 7.5, 7.5),
    ],
)
def test_known_values(kind, x, expected):
    assert evaluate(kind, x) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("x", [0.999, 0.0, -3.0, float("nan")])
def test_ratio_below_one_rejected(kind, x):
    with pytest.raises(ValueError):
        evaluate(kind, x)


def test_kind_parsing():
    assert K.parse("exp-root") is K.EXPONENTIAL_ROOT
    with pytest.raises(ValueError, match="unknown weight function"):
        K.parse("cubic")


@settings(max_examples=200)
@given(st.sampled_from(KINDS), st.floats(1.0, 1e6), st.floats(1.0, 1e6))
def test_monotone(kind, a, b):
    lo, hi = min(a, b), max(a, b)
    assert evaluate(kind, hi) >= evaluate(kind, lo) >= 1.0


def test_growth_ordering_at_1e4():
    x = 1e4
    w = {k: evaluate(k, x) for k in KINDS}
    assert w[K.LOGARITHMIC] < w[K.QUADRATIC_ROOT] < w[K.LINEAR] < w[K.EXPONENTIAL_ROOT]


def test_weight_spec_applies_cap():
    spec = WeightSpec.for_ratio(K.LOGARITHMIC, 1e6, x_cap=4096)
    assert spec.w == pytest.approx(13.0, abs=1e-12)
    assert spec.x == 1e6
    assert WeightSpec.for_ratio(K.LOGARITHMIC, 1e6, x_cap=None).w == pytest.approx(math.log2(1e6) + 1)


def _pooled(values, k=16):
    return BinaryMask(np.asarray(values, dtype=bool), k)


def _stats_for(mask, a_total):
    return EditStats.from_area(min(mask.count() * mask.cell_scale**2, a_total), a_total)


def test_full_edit_gives_uniform_map():
    mask = _pooled(np.ones((32, 32)))
    wmap, spec = build_weight_map(mask, _stats_for(mask, 512 * 512), K.LOGARITHMIC)
    assert spec.w == 1.0
    assert np.all(wmap.values == 1.0)


def test_no_edit_gives_uniform_map_and_flag():
    mask = _pooled(np.zeros((32, 32)))
    wmap, spec = build_weight_map(mask, _stats_for(mask, 512 * 512))
    assert spec.degenerate_no_edit and spec.w == 1.0 and spec.x is None
    assert np.all(wmap.values == 1.0)


def test_single_cell_of_32x32_grid():
    values = np.zeros((32, 32), dtype=bool)
    values[7, 19] = True
    mask = _pooled(values)
    stats = _stats_for(mask, 512 * 512)
    assert stats.x == 1024.0
    wmap, spec = build_weight_map(mask, stats, K.LOGARITHMIC, x_cap=None)
    assert wmap.values[7, 19] == pytest.approx(11.0)
    assert spec.w == pytest.approx(11.0, abs=1e-12)
    assert np.count_nonzero(wmap.values == 1.0) == 1023
    assert wmap.values.dtype == np.float32


def test_inconsistent_stats_rejected():
    mask = _pooled(np.eye(4))
    with pytest.raises(StatsMismatchError):
        build_weight_map(mask, EditStats.from_area(256, 64 * 64))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32), st.sampled_from(KINDS))
def test_map_has_two_values_and_reconstructs(h, w, seed, kind):
    values = np.random.default_rng(seed).random((h, w)) < 0.3
    mask = _pooled(values, 8)
    stats = _stats_for(mask, h * 8 * w * 8)
    wmap, spec = build_weight_map(mask, stats, kind)
    distinct = set(np.unique(wmap.values).tolist())
    assert distinct <= {1.0, float(np.float32(spec.w))}
    assert wmap.values.mean() >= 1.0
    assert np.array_equal(reconstruct_weight_map(mask, spec.w), wmap.values)


def test_summary_all_ones():
    s = weight_summary(WeightMap(np.ones((4, 4), np.float32), np.zeros((4, 4), bool)))
    assert s == {"mean": 1.0, "max": 1.0, "edited_fraction": 0.0}
    s = weight_summary(WeightMap(np.ones((4, 4), np.float32), np.ones((4, 4), bool)))
    assert s["edited_fraction"] == 1.0


def test_summary_half_edited():
    edited = np.zeros((2, 2), bool)
    edited[0] = True
    s = weight_summary(WeightMap(np.where(edited, 3.0, 1.0).astype(np.float32), edited))
    assert s["mean"] == 2.0 and s["max"] == 3.0 and s["edited_fraction"] == 0.5


def test_summary_matches_direct_sum():
    rng = np.random.default_rng(10)
    edited = rng.random((17, 23)) < 0.4
    values = np.where(edited, np.float32(6.5), np.float32(1.0))
    s = weight_summary(WeightMap(values, edited))
    total = 0.0
    for v in values.ravel().tolist():
        total += v
    assert s["mean"] == pytest.approx(total / values.size, rel=1e-12)
    assert s["max"] == 6.5
    assert s["edited_fraction"] == pytest.approx(edited.sum() / edited.size)
