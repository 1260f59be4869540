import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cointrack.errors import DegenerateRect, DimensionMismatch, EmptyMask
from cointrack.geometry import Point2
from cointrack.mask import (
    RotatedRect,
    aspect_ratio,
    aspect_ratio_change,
    boundary_distance,
    connected_components,
    holes,
    iou,
    min_rotated_rect,
)
from oracles import (
    border_flood_holes,
    brute_boundary_distance,
    flood_components,
    random_blob_mask,
    sweep_min_rect_area,
)

masks = arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12)))


def rect(a, b):
    return RotatedRect(Point2(0, 0), max(a, b), min(a, b), 0.0)


def test_iou_examples():
    a = np.zeros((4, 4), bool)
    a[:, :2] = True
    b = np.zeros((4, 4), bool)
    b[:2, :] = True
    assert iou(a, a) == 1.0
    assert iou(a, ~a) == 0.0
    assert iou(a, b) == pytest.approx(4 / 12)


def test_iou_empty_conventions():
    z = np.zeros((3, 3), bool)
    one = z.copy()
    one[1, 1] = True
    assert iou(z, z) == 1.0
    assert iou(z, one) == 0.0
    with pytest.raises(DimensionMismatch):
        iou(z, np.zeros((3, 4), bool))


@given(masks, st.data())
def test_iou_symmetric_and_monotone(a, data):
    b = data.draw(arrays(bool, a.shape))
    assert iou(a, b) == iou(b, a)
    if a.any():
        assert iou(a, a) == 1.0
    shared = data.draw(arrays(bool, a.shape))
    assert iou(a | shared, b | shared) >= iou(a, b) - 1e-12


def test_components_examples():
    assert connected_components(np.zeros((5, 5), bool)) == []
    m = np.zeros((3, 3), bool)
    m[0, 0] = m[1, 1] = True
    assert len(connected_components(m)) == 1


def test_component_ordering():
    m = np.zeros((6, 6), bool)
    m[0, 4] = True
    m[4, 0] = True
    m[2:4, 2:4] = True
    comps = connected_components(m)
    assert [c.sum() for c in comps] == [4, 1, 1]
    assert comps[1][0, 4] and comps[2][4, 0]


@given(masks)
def test_components_partition(m):
    comps = connected_components(m)
    total = np.zeros_like(m)
    for c in comps:
        assert not (total & c).any()
        total |= c
    assert np.array_equal(total, m)


def test_holes_examples():
    assert not holes(np.ones((5, 5), bool)).any()
    yy, xx = np.mgrid[0:21, 0:21]
    r = np.hypot(yy - 10, xx - 10)
    ring = (r <= 8) & (r > 4)
    assert np.array_equal(holes(ring), r <= 4)


def test_holes_two_cavities():
    yy, xx = np.mgrid[0:40, 0:40]
    blob = np.hypot(yy - 20, xx - 20) < 15
    blob[12:15, 12:16] = False
    blob[25:28, 22:27] = False
    expect = np.zeros_like(blob)
    expect[12:15, 12:16] = True
    expect[25:28, 22:27] = True
    assert np.array_equal(holes(blob), expect)
    assert np.array_equal(holes(blob), border_flood_holes(blob))


@given(masks)
def test_holes_properties(m):
    hl = holes(m)
    assert not (hl & m).any()
    padded = np.pad(m, 2)
    assert np.array_equal(holes(padded)[2:-2, 2:-2], hl)


def test_boundary_distance_examples():
    sq = np.zeros((31, 31), bool)
    sq[5:26, 5:26] = True
    d = boundary_distance(sq)
    assert d[5, 5] == 0 and d[5, 15] == 0
    assert d[15, 15] == pytest.approx(10, abs=0.1)
    assert np.all(np.isinf(boundary_distance(np.ones((4, 4), bool))))
    assert np.all(np.isinf(boundary_distance(np.zeros((4, 4), bool))))


def test_min_rect_examples():
    m = np.zeros((20, 20), bool)
    m[7, 3] = True
    r = min_rotated_rect(m)
    assert (r.side_a, r.side_b) == (0, 0) and r.center == (3, 7)

    m = np.zeros((20, 20), bool)
    m[5:9, 2:12] = True
    r = min_rotated_rect(m)
    assert r.side_a == pytest.approx(9) and r.side_b == pytest.approx(3)
    assert min(r.angle % (math.pi / 2), math.pi / 2 - r.angle % (math.pi / 2)) < 1e-9
    with pytest.raises(EmptyMask):
        min_rotated_rect(np.zeros((3, 3), bool))


def test_min_rect_random_blob_vs_sweep():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m = np.zeros((40, 40), bool)
        idx = rng.choice(40 * 40, size=50, replace=False)
        ys, xs = np.unravel_index(idx, m.shape)
        m[ys // 2 + 10, xs // 2 + 10] = True
        r = min_rotated_rect(m)
        ref = sweep_min_rect_area(m)
        assert r.area <= ref * (1 + 1e-9)
        assert r.area >= ref * (1 - 0.005)


@given(masks)
def test_min_rect_not_above_aabb(m):
    if not m.any():
        return
    r = min_rotated_rect(m)
    ys, xs = np.nonzero(m)
    assert r.area <= np.ptp(xs) * np.ptp(ys) + 1e-9


def test_aspect_ratio_examples():
    assert aspect_ratio(rect(4, 2)) == 2.0
    assert aspect_ratio(rect(3, 3)) == 1.0
    assert aspect_ratio((2, 5)) == 2.5
    with pytest.raises(DegenerateRect):
        aspect_ratio(rect(3, 0))


def test_aspect_ratio_change_examples():
    a = rect(2, 1)
    assert aspect_ratio_change(a, a) == 1.0
    assert aspect_ratio_change(rect(2, 1), rect(4, 1)) == 2.0
    assert aspect_ratio_change(rect(3, 1), rect(1.5, 1)) == 2.0
    assert aspect_ratio_change(rect(1.5, 1), rect(3, 1)) == 2.0


@given(st.floats(0.1, 100), st.floats(0.1, 100), st.floats(0.1, 100), st.floats(0.1, 100))
def test_aspect_ratio_properties(a, b, c, d):
    assert aspect_ratio((a, b)) >= 1
    x, y = rect(a, b), rect(c, d)
    assert aspect_ratio_change(x, y) == aspect_ratio_change(y, x) >= 1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_mask_oracles_on_random_masks(seed):
    rng = np.random.default_rng(seed)
    m = random_blob_mask(rng, (32, 32), fill=rng.uniform(0.2, 0.7), smooth=rng.uniform(1, 3))
    comps = connected_components(m)
    assert sorted(map(frozenset, (set(zip(*np.nonzero(c))) for c in comps)), key=sorted) == sorted(
        map(frozenset, flood_components(m)), key=sorted
    )
    assert np.array_equal(holes(m), border_flood_holes(m))
    np.testing.assert_allclose(boundary_distance(m), brute_boundary_distance(m))
