import math

import cv2
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cointrack.errors import ConfigError, NoInitializationSource
from cointrack.flow import FlowField
from cointrack.geometry import Homography, Rect, compose, corner_error, warp_points
from cointrack.optimizer import (
    AnnealSchedule,
    accept,
    acceptance_probability,
    anneal,
    init_hypotheses,
    redetect,
)
from cointrack.scoring import FrameScorer, ScoreBreakdown, to_gray
from cointrack.synth import render
from scenes import perturb_corners, template_of, tilted_scene


@pytest.fixture(scope="module")
def seq():
    return render(tilted_scene())


class ConstScorer:
    def __init__(self, value, bbox):
        self.value = value
        self.template = type("T", (), {"bbox": bbox})()

    def __call__(self, h):
        return ScoreBreakdown.of(self.value, 1.0, 1.0, 1.0)


class DistanceScorer:
    """Smooth landscape peaking at ``target``: exp(-corner error / 20)."""

    def __init__(self, target, bbox):
        self.target = target
        self.template = type("T", (), {"bbox": bbox})()
        self.corners = bbox.corners()

    def __call__(self, h):
        return ScoreBreakdown.of(math.exp(-corner_error(h, self.target, self.corners) / 20), 1.0, 1.0, 1.0)


BOX = Rect(0, 0, 99, 79)


def test_acceptance_probability_closed_form():
    assert acceptance_probability(0.6, 0.5, 0.1) == 1.0
    assert acceptance_probability(0.5, 0.5, 0.1) == 1.0
    assert acceptance_probability(0.4, 0.5, 0.1) == pytest.approx(math.exp(-1))


@pytest.mark.parametrize("ratio", [0.25, 1.0, 4.0])
def test_acceptance_frequency_within_3_sigma(ratio):
    T, n = 0.05, 100_000
    s_star = 0.8
    s = s_star - ratio * T
    rng = np.random.default_rng(int(ratio * 100))
    hits = sum(accept(s, s_star, T, rng) for _ in range(n))
    p = math.exp(-ratio)
    sigma = math.sqrt(p * (1 - p) / n)
    assert abs(hits / n - p) <= 3 * sigma
    if ratio == 1.0:
        assert abs(hits / n - 0.3679) < 0.01


def test_constant_scorer_accepts_everything():
    rng = np.random.default_rng(0)
    sched = AnnealSchedule(iterations=100)
    res = anneal(Homography.identity(), sched, ConstScorer(0.7, BOX), rng)
    assert res.accepted_count == sched.iterations
    assert res.total == 0.7
    assert not res.h.allclose(Homography.identity())


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(2, 40))
def test_anneal_never_below_initial(seed, offset):
    target = Homography.translation(offset, -offset / 2)
    scorer = DistanceScorer(target, BOX)
    h0 = Homography.identity()
    res = anneal(h0, AnnealSchedule(iterations=60, T0=0.2), scorer, np.random.default_rng(seed))
    assert res.total >= scorer(h0).total
    assert res.total == scorer(res.h).total


def test_schedules_strictly_decrease():
    s = AnnealSchedule()
    assert np.all(np.diff(s.temperatures()) < 0)
    assert np.all(np.diff(s.sigmas(BOX)) < 0)
    assert s.initial_sigma(BOX) == pytest.approx(0.05 * BOX.width)
    assert len(s.temperatures()) == 350


@pytest.mark.parametrize("kw", [dict(iterations=0), dict(T_decay=0.0), dict(sigma_decay=1.5), dict(T0=-1.0),
                                dict(sigma0=0.0)])
def test_schedule_validation(kw):
    with pytest.raises(ConfigError):
        AnnealSchedule(**kw)


def test_anneal_deterministic():
    scorer = DistanceScorer(Homography.translation(12, 3), BOX)
    a = anneal(Homography.identity(), AnnealSchedule(iterations=80), scorer, np.random.default_rng(42))
    b = anneal(Homography.identity(), AnnealSchedule(iterations=80), scorer, np.random.default_rng(42))
    assert np.array_equal(a.h.m, b.h.m)
    assert (a.accepted_count, a.evaluation_count, a.total) == (b.accepted_count, b.evaluation_count, b.total)


def test_anneal_recovers_8px_displacement(seq):
    tpl = template_of(seq)
    f = seq.frames[6]
    scorer = FrameScorer(to_gray(f.image), f.mask, tpl)
    corners = tpl.bbox.corners()
    good = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        h0 = perturb_corners(tpl, f.homography, rng, 8.0)
        res = anneal(h0, AnnealSchedule(), scorer, rng)
        good += corner_error(res.h, f.homography, corners) < 2.0
    assert good >= 95


# ---------------------------------------------------------------- initialization

def test_init_identity_flow_returns_prev(seq):
    tpl = template_of(seq)
    f = seq.frames[4]
    scorer = FrameScorer(to_gray(f.image), f.mask, tpl)
    flow = FlowField.constant(f.mask.shape, 0.0, 0.0)
    h, s, evals = init_hypotheses(f.homography, flow, f.mask, scorer, 50, np.random.default_rng(0))
    assert corner_error(h, f.homography, tpl.bbox.corners()) < 1e-6
    assert evals == 50


def test_init_translation_flow(seq):
    tpl = template_of(seq)
    f = seq.frames[4]
    shifted_img = np.zeros_like(f.image)
    shifted_img[:, 5:] = f.image[:, :-5]
    shifted_mask = np.zeros_like(f.mask)
    shifted_mask[:, 5:] = f.mask[:, :-5]
    scorer = FrameScorer(to_gray(shifted_img), shifted_mask, tpl)
    flow = FlowField.constant(f.mask.shape, 5.0, 0.0)
    h, _, _ = init_hypotheses(f.homography, flow, f.mask, scorer, 50, np.random.default_rng(1))
    want = compose(Homography.translation(5, 0), f.homography)
    assert corner_error(h, want, tpl.bbox.corners()) < 0.5


def test_init_single_candidate_is_prev():
    h = Homography.similarity(1.1, 0.2, 4, 5)
    got, _, evals = init_hypotheses(h, None, None, ConstScorer(0.5, BOX), 1)
    assert got is h and evals == 1


def test_init_needs_a_source():
    with pytest.raises(NoInitializationSource):
        init_hypotheses(None, None, None, ConstScorer(0.5, BOX))


def test_init_flow_only(seq):
    tpl = template_of(seq)
    f = seq.frames[0]
    scorer = FrameScorer(to_gray(f.image), f.mask, tpl)
    flow = FlowField.constant(f.mask.shape, 0.0, 0.0)
    h, s, _ = init_hypotheses(None, flow, f.mask, scorer, 10, np.random.default_rng(2))
    # frame 0 is the template frame, so a zero flow maps it onto itself
    assert corner_error(h, Homography.identity(), tpl.bbox.corners()) < 1e-6


# ---------------------------------------------------------------- re-detection

def test_redetect_recovers_pose(seq):
    tpl = template_of(seq)
    corners = tpl.bbox.corners()
    good = runs = 0
    for i in (2, 5, 8, 11):
        f = seq.frames[i]
        scorer = FrameScorer(to_gray(f.image), f.mask, tpl)
        for seed in range(3):
            res = redetect(tpl.mask, scorer, AnnealSchedule(), np.random.default_rng(100 * i + seed))
            good += corner_error(res.h, f.homography, corners) < 3.0
            runs += 1
    assert good >= 0.8 * runs


def test_redetect_empty_segmentation(seq):
    tpl = template_of(seq)
    f = seq.frames[3]
    scorer = FrameScorer(to_gray(f.image), np.zeros_like(f.mask), tpl)
    res = redetect(tpl.mask, scorer, AnnealSchedule(), np.random.default_rng(0))
    assert res.total == 0.0


def test_redetect_self_detection(seq):
    tpl = template_of(seq)
    f = seq.frames[seq.obverse_frame]
    scorer = FrameScorer(to_gray(f.image), f.mask, tpl)
    res = redetect(tpl.mask, scorer, AnnealSchedule(), np.random.default_rng(5))
    assert res.total >= 0.95
    assert res.evaluation_count >= 400


def test_redetect_finds_small_distant_copy(seq):
    # a shrunken, rotated, displaced view still gets a candidate near the truth
    tpl = template_of(seq)
    f = seq.frames[0]
    truth = Homography.similarity(0.6, 1.0, 150, -40)
    img = cv2.warpPerspective(f.image, truth.m, (f.image.shape[1], f.image.shape[0]), flags=cv2.INTER_LINEAR)
    mask = cv2.warpPerspective(f.mask.astype(np.uint8), truth.m, (f.mask.shape[1], f.mask.shape[0]),
                               flags=cv2.INTER_NEAREST) > 0
    scorer = FrameScorer(to_gray(img), mask, tpl)
    res = redetect(tpl.mask, scorer, AnnealSchedule(), np.random.default_rng(9))
    err = np.max(np.linalg.norm(warp_points(res.h, tpl.bbox.corners()) - warp_points(truth, tpl.bbox.corners()),
                                axis=1))
    assert err < 3.0
