import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from jsnpoc.segmentation import (
    GeometryError,
    depth_map,
    dump_debug,
    gully_range,
    integral_map,
    region_masks,
    segment,
    segmentation_curve,
)


def depth_oracle(f, i_values):
    """Direct block means with clamped (edge-replicated) indices."""
    rows, cols = f.shape
    out = np.zeros_like(f)

    def block_mean(y0, y1, x):
        acc = 0.0
        for yy in range(y0, y1 + 1):
            for xx in range(x - 1, x + 2):
                acc += f[min(max(yy, 0), rows - 1), min(max(xx, 0), cols - 1)]
        return acc / (3 * (y1 - y0 + 1))

    for i in i_values:
        h = (i - 1) // 2
        for y in range(rows):
            for x in range(cols):
                c = block_mean(y - h, y + h, x)
                a = block_mean(y + h + 1, y + h + i, x) - c
                b = block_mean(y - h - i, y - h - 1, x) - c
                out[y, x] = max(out[y, x], max(0.0, min(a, b)))
    return out


def all_paths(rows, cols):
    for start in range(rows):
        stack = [[start]]
        while stack:
            p = stack.pop()
            if len(p) == cols:
                yield p
                continue
            for d in (-1, 0, 1):
                r = p[-1] + d
                if 0 <= r < rows:
                    stack.append(p + [r])


def best_path_sum(d):
    rows, cols = d.shape
    return max(sum(d[r, x] for x, r in enumerate(p)) for p in all_paths(rows, cols))


def path_sum(d, c):
    return sum(d[r, x] for x, r in enumerate(c))


# -- depth_map -----------------------------------------------------------------

def test_constant_window_zero_depth():
    assert np.all(depth_map(np.full((40, 20), 0.6)) == 0)


def test_dark_band():
    f = np.ones((40, 16))
    f[19:22] = 0.0
    d = depth_map(f, 3, 3)
    assert d[20, 8] == pytest.approx(1.0)
    assert np.all(d[:10] == 0) and np.all(d[31:] == 0)


@pytest.mark.parametrize("seed", range(3))
def test_depth_matches_block_oracle(seed):
    f = np.random.default_rng(seed).random((12, 20))
    assert np.abs(depth_map(f, 1, 3) - depth_oracle(f, [1, 3])).max() < 1e-12


def test_depth_is_max_over_widths(rng):
    f = rng.random((40, 10))
    stacked = np.max([depth_map(f, i, i) for i in (1, 3, 5)], axis=0)
    np.testing.assert_allclose(depth_map(f, 1, 5), stacked, atol=1e-15)


def test_depth_non_negative(rng):
    assert depth_map(rng.random((50, 30))).min() >= 0


@pytest.mark.parametrize("lo,hi,rows", [(2, 5, 40), (3, 1, 40), (1, 9, 27)])
def test_depth_geometry_errors(lo, hi, rows):
    with pytest.raises(GeometryError):
        depth_map(np.zeros((rows, 10)), lo, hi)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (20, 8), elements=st.floats(0, 1)), st.floats(-5, 5))
def test_depth_offset_invariance(f, c):
    assert np.abs(depth_map(f + c, 1, 5) - depth_map(f, 1, 5)).max() < 1e-12


# -- integral map and curve ------------------------------------------------------

def test_integral_single_column(rng):
    d = rng.random((7, 1))
    assert np.array_equal(integral_map(d), d)


def test_integral_all_ones():
    acc = integral_map(np.ones((4, 4)))
    assert np.array_equal(acc, np.tile(np.arange(1, 5.0), (4, 1)))


@pytest.mark.parametrize("seed", range(3))
def test_integral_matches_exhaustive(seed):
    d = np.random.default_rng(seed).random((10, 10))
    assert integral_map(d)[:, -1].max() == pytest.approx(best_path_sum(d), abs=1e-12)


def test_integral_lower_bound(rng):
    d = rng.random((9, 12))
    acc = integral_map(d)
    assert np.all(acc[:, 1:] >= d[:, 1:])
    assert np.array_equal(acc[:, 0], d[:, 0])


def test_curve_dominant_row():
    d = np.zeros((9, 12))
    d[5] = 1.0
    assert np.all(segmentation_curve(integral_map(d)) == 5)


def test_curve_zero_map_ties_to_top():
    assert np.all(segmentation_curve(integral_map(np.zeros((6, 8)))) == 0)


@pytest.mark.parametrize("seed", range(5))
def test_curve_attains_exhaustive_optimum_8x8(seed):
    d = np.random.default_rng(100 + seed).random((8, 8))
    c = segmentation_curve(integral_map(d))
    assert path_sum(d, c) == pytest.approx(best_path_sum(d), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 7), st.integers(0, 2**31 - 1))
def test_curve_optimal_small_maps(rows, cols, seed):
    # coarse values make ties common
    d = np.random.default_rng(seed).integers(0, 3, (rows, cols)).astype(float)
    c = segmentation_curve(integral_map(d))
    assert np.all(np.abs(np.diff(c)) <= 1)
    assert c.min() >= 0 and c.max() < rows
    assert path_sum(d, c) == best_path_sum(d)


def test_curve_deterministic(rng):
    d = rng.integers(0, 2, (10, 10)).astype(float)
    a = segmentation_curve(integral_map(d))
    b = segmentation_curve(integral_map(d.copy()))
    assert np.array_equal(a, b)


def test_curve_tie_prefers_smaller_row():
    d = np.zeros((5, 3))
    d[1] = d[3] = 1.0
    assert np.all(segmentation_curve(integral_map(d)) == 1)


# -- region masks --------------------------------------------------------------

def test_masks_curve_at_top():
    m = region_masks(np.zeros(6, int), (5, 6))
    assert not m.s0.any()
    assert m.s1[1:].all() and not m.s1[0].any()


def test_masks_curve_at_bottom():
    m = region_masks(np.full(6, 4), (5, 6))
    assert not m.s1.any()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=1, max_size=15))
def test_masks_partition(curve):
    c = np.array(curve)
    m = region_masks(c, (10, len(curve)))
    on_curve = np.arange(10)[:, None] == c[None, :]
    assert np.array_equal(m.s0.astype(int) + m.s1 + on_curve, np.ones((10, len(curve)), int))


def test_masks_validation():
    with pytest.raises(ValueError):
        region_masks(np.zeros(4, int), (5, 6))
    with pytest.raises(ValueError):
        region_masks(np.full(6, 5), (5, 6))


def test_swapped_and_eroded():
    m = region_masks(np.full(4, 5), (12, 4))
    assert np.array_equal(m.swapped().s0, m.s1)
    e = m.eroded(2)
    assert e.s0[:3].all() and not e.s0[3:].any()
    assert e.s1[8:].all() and not e.s1[:8].any()
    assert m.eroded(0) is m


# -- end to end ----------------------------------------------------------------

def test_segment_finds_tilted_gap():
    rows, cols = 64, 48
    y, x = np.mgrid[0:rows, 0:cols]
    centre = 30 + 0.1 * (x - cols / 2)
    f = np.where(np.abs(y - centre) < 2.5, 0.2, 0.8)
    m = segment(f, 1, 9)
    assert np.abs(m.curve - np.round(centre[0])).max() <= 1


def test_gully_range_scaling():
    assert gully_range(0.175) == (1, 9)
    assert gully_range(0.15) == (1, 11)
    assert gully_range(0.35) == (1, 5)


def test_dump_debug(tmp_path, rng):
    paths = dump_debug(tmp_path, rng.random((40, 16)), 1, 5)
    assert [p.name for p in paths] == ["segmentation_depth.pgm", "segmentation_curve.csv"]
    lines = paths[1].read_text().splitlines()
    assert lines[0] == "column,row" and len(lines) == 17
