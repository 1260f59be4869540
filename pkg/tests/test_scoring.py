import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cointrack.errors import DimensionMismatch
from cointrack.geometry import Homography
from cointrack.scoring import (
    FrameScorer,
    ScoreBreakdown,
    s_appearance,
    s_cover,
    s_obj,
    s_occl,
    score,
    to_gray,
    visibility_mask,
)
from cointrack.synth import render
from oracles import random_blob_mask
from scenes import perturb_corners, template_of, tilted_scene


def line_mask(n_on, n_total, shape=(4, 10)):
    m = np.zeros(shape, bool)
    m.flat[:n_on] = True
    return m


def test_s_obj_examples():
    seg = line_mask(10, 10)
    contour = np.zeros((4, 10), bool)
    assert s_obj(seg, seg | contour) == 1.0
    assert s_obj(seg, ~seg) == 0.0
    contour.flat[:6] = True
    assert s_obj(seg, contour) == pytest.approx(0.6)
    assert s_obj(np.zeros((4, 10), bool), contour) == 0.0


def test_s_cover_examples():
    contour = line_mask(40, 40, (5, 10))
    seg = np.zeros((5, 10), bool)
    seg.flat[:30] = True
    assert s_cover(seg, contour) == 0.75
    assert s_cover(contour, contour) == 1.0
    assert s_cover(~contour, contour) == 0.0
    assert s_cover(seg, np.zeros_like(seg)) == 0.0


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        s_obj(np.zeros((3, 3), bool), np.zeros((3, 4), bool))
    with pytest.raises(DimensionMismatch):
        visibility_mask(np.zeros((3, 3), bool), np.zeros((4, 3), bool))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_obj_cover_duality_and_bounds(seed):
    rng = np.random.default_rng(seed)
    a, b = random_blob_mask(rng, (32, 32)), random_blob_mask(rng, (32, 32))
    assert s_obj(a, b) == s_cover(b, a)
    for v in (s_obj(a, b), s_cover(a, b)):
        assert 0.0 <= v <= 1.0


def test_visibility_exact_intersection():
    rng = np.random.default_rng(0)
    seg, warped = random_blob_mask(rng), random_blob_mask(rng)
    vis = visibility_mask(seg, warped)
    assert vis.sum() == sum(1 for y in range(64) for x in range(64) if seg[y, x] and warped[y, x])
    assert np.array_equal(visibility_mask(warped, warped), warped)


def test_s_occl_examples():
    blob = np.zeros((40, 40), bool)
    blob[10:20, 12:22] = True
    assert s_occl(blob, blob, Homography.identity()) == 1.0
    assert s_occl(blob, np.zeros_like(blob), Homography.identity()) == 0.0
    shifted = np.roll(blob, 3, axis=1)
    assert s_occl(shifted, blob, Homography.translation(3, 0)) == 1.0


def textured(rng, shape=(48, 64)):
    from scipy import ndimage

    img = ndimage.gaussian_filter(rng.normal(size=shape), 2.0)
    return 128 + 40 * img / img.std()


def test_appearance_self_and_inverse():
    rng = np.random.default_rng(1)
    tpl = textured(rng)
    support = np.zeros(tpl.shape, bool)
    support[8:40, 8:56] = True
    assert s_appearance(tpl, tpl, Homography.identity(), support) == pytest.approx(1.0, abs=1e-12)
    assert s_appearance(255 - tpl, tpl, Homography.identity(), support) < 1e-6


@pytest.mark.parametrize("a", [0.5, 2.0])
@pytest.mark.parametrize("b", [-20.0, 30.0])
def test_appearance_affine_invariance(a, b):
    rng = np.random.default_rng(2)
    tpl = textured(rng)
    support = np.ones(tpl.shape, bool)
    assert abs(s_appearance(a * tpl + b, tpl, Homography.identity(), support) - 1.0) < 1e-6
    assert abs(s_appearance(tpl, a * tpl + b, Homography.identity(), support) - 1.0) < 1e-6


def test_appearance_neutral_cases():
    flat = np.full((20, 20), 90.0)
    sup = np.ones((20, 20), bool)
    assert s_appearance(flat, flat, Homography.identity(), sup) == 0.5
    rng = np.random.default_rng(3)
    tpl = textured(rng, (20, 20))
    small = np.zeros((20, 20), bool)
    small[:3, :5] = True  # 15 px < 16
    assert s_appearance(tpl, tpl, Homography.identity(), small) == 0.5


def test_breakdown_products():
    assert ScoreBreakdown.of(1, 1, 1, 1).total == 1
    assert ScoreBreakdown.of(1, 1, 1, 0).total == 0
    assert ScoreBreakdown.of(0.9, 0.8, 1.0, 0.5).total == pytest.approx(0.36)


@settings(max_examples=50)
@given(st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4))
def test_product_below_min(comps):
    b = ScoreBreakdown.of(*comps)
    assert 0 <= b.total <= 1
    lo = min(comps)
    others_one = sorted(comps)[1:] == [1.0, 1.0, 1.0]
    assert b.total < lo or others_one or b.total == pytest.approx(lo)


# ---------------------------------------------------------------- synthetic frames

@pytest.fixture(scope="module")
def synth_seq():
    return render(tilted_scene())


def test_perfect_synthetic_scores_high(synth_seq):
    tpl = template_of(synth_seq)
    for f in synth_seq.frames[::3]:
        b = score(f.image, f.mask, tpl, f.homography)
        assert b.total >= 0.98, (f.index, b)


def test_perturbation_lowers_score(synth_seq):
    tpl = template_of(synth_seq)
    f = synth_seq.frames[6]
    scorer = FrameScorer(to_gray(f.image), f.mask, tpl)
    base = scorer(f.homography).total
    rng = np.random.default_rng(0)
    lower = sum(scorer(perturb_corners(tpl, f.homography, rng, 10.0)).total < base for _ in range(100))
    assert lower >= 95


def test_fast_scorer_matches_reference(synth_seq):
    tpl = template_of(synth_seq)
    rng = np.random.default_rng(4)
    prev, f = synth_seq.frames[5], synth_seq.frames[6]
    for prev_vis in (None, prev.mask):
        scorer = FrameScorer(to_gray(f.image), f.mask, tpl, prev_vis, prev.homography)
        for _ in range(15):
            h = perturb_corners(tpl, f.homography, rng, rng.uniform(0, 30))
            fast = scorer(h)
            ref = score(f.image, f.mask, tpl, h, prev_vis, prev.homography)
            assert np.allclose(list(fast.to_dict().values()), list(ref.to_dict().values()), atol=1e-9)


def test_fast_scorer_offscreen_and_behind(synth_seq):
    tpl = template_of(synth_seq)
    f = synth_seq.frames[0]
    scorer = FrameScorer(to_gray(f.image), f.mask, tpl)
    assert scorer(Homography.translation(5000, 0)).total == 0.0
    # a perspective map sending part of the box behind the camera
    m = np.eye(3)
    m[2, 0] = -1.0 / 400
    assert scorer(Homography(m)).total == 0.0
