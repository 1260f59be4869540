"""Simulated-annealing pose search over homographies.

A pose is a homography from the canonical (template) frame to the current
frame. Hypotheses are perturbed by jittering the four corners of the
template bounding box in the canonical frame and composing the resulting
homography onto the current estimate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, DegenerateConfiguration, NoInitializationSource, SingularMatrix
from .flow import FlowField
from .geometry import (
    PERTURB_RETRIES,
    Homography,
    Rect,
    compose,
    homography_from_correspondences,
    perturb_control_points,
)
from .mask import connected_components
from .scoring import ScoreBreakdown

Scorer = Callable[[Homography], ScoreBreakdown]


@dataclass
class AnnealSchedule:
    iterations: int = 350
    T0: float = 0.02
    T_decay: float = 0.985
    sigma0: float | None = None  # pixels; None means sigma_frac * longest template bbox side
    sigma_frac: float = 0.05
    sigma_decay: float = 0.99

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("anneal iterations must be >= 1")
        if not (0 < self.T_decay <= 1 and 0 < self.sigma_decay <= 1):
            raise ConfigError("decay factors must lie in (0, 1]")
        if self.T0 <= 0 or (self.sigma0 is not None and self.sigma0 <= 0) or self.sigma_frac <= 0:
            raise ConfigError("T0 and sigma0 must be positive")

    def initial_sigma(self, bbox: Rect) -> float:
        if self.sigma0 is not None:
            return self.sigma0
        return self.sigma_frac * max(bbox.width, bbox.height)

    def temperatures(self) -> np.ndarray:
        return self.T0 * self.T_decay ** np.arange(self.iterations)

    def sigmas(self, bbox: Rect) -> np.ndarray:
        return self.initial_sigma(bbox) * self.sigma_decay ** np.arange(self.iterations)


@dataclass
class OptimizationResult:
    h: Homography
    breakdown: ScoreBreakdown
    accepted_count: int = 0
    evaluation_count: int = 0
    seed: object = None  # generator state the search started from

    @property
    def total(self) -> float:
        return self.breakdown.total


def acceptance_probability(s: float, s_star: float, T: float) -> float:
    """Probability of moving from an estimate scoring ``s_star`` to one scoring ``s``."""
    if s > s_star:
        return 1.0
    return math.exp(-(s_star - s) / T)


def accept(s: float, s_star: float, T: float, rng: np.random.Generator) -> bool:
    p = acceptance_probability(s, s_star, T)
    return p >= 1.0 or rng.random() < p


def _state(rng: np.random.Generator):
    return rng.bit_generator.state


def anneal(h0: Homography, schedule: AnnealSchedule, scorer: Scorer, rng: np.random.Generator,
           bbox: Rect | None = None, initial: ScoreBreakdown | None = None) -> OptimizationResult:
    """Run the annealing chain from ``h0`` and return the best estimate ever held.

    ``bbox`` is the canonical rectangle whose corners are perturbed; by default
    the scorer's template bbox. ``initial`` skips re-scoring ``h0``.
    """
    seed = _state(rng)
    if bbox is None:
        bbox = scorer.template.bbox
    evals = 0
    if initial is None:
        initial = scorer(h0)
        evals += 1
    cur, cur_s = h0, initial
    best, best_s = h0, initial
    accepted = 0
    T = schedule.T0
    sigma = schedule.initial_sigma(bbox)
    for _ in range(schedule.iterations):
        cand = None
        for _ in range(PERTURB_RETRIES):
            try:
                cand = compose(cur, perturb_control_points(bbox, sigma, rng, max_retries=1))
                break
            except (DegenerateConfiguration, SingularMatrix):
                evals += 1
        if cand is not None:
            s = scorer(cand)
            evals += 1
            if accept(s.total, cur_s.total, T, rng):
                cur, cur_s = cand, s
                accepted += 1
                if s.total >= best_s.total:  # ties move to the newer estimate
                    best, best_s = cand, s
        T *= schedule.T_decay
        sigma *= schedule.sigma_decay
    return OptimizationResult(best, best_s, accepted, evals, seed)


def flow_candidate(prev_h: Homography | None, flow: FlowField, pts: np.ndarray) -> Homography:
    """Pose carried from t-1 to t by the homography that moves ``pts`` along the flow."""
    inter = homography_from_correspondences(pts, pts + flow.at(pts))
    return inter if prev_h is None else compose(inter, prev_h)


def init_hypotheses(prev_h: Homography | None, flow: FlowField | None, prev_seg: np.ndarray | None,
                    scorer: Scorer, n: int = 50, rng: np.random.Generator | None = None
                    ) -> tuple[Homography, ScoreBreakdown, int]:
    """Best of ``prev_h`` and up to ``n - 1`` flow-propagated candidates.

    Each flow candidate maps four points drawn uniformly from the previous
    object mask through the flow. Returns (pose, score, evaluations); ties
    keep the earliest candidate, so ``prev_h`` wins ties.
    """
    if prev_h is None and flow is None:
        raise NoInitializationSource("neither a previous pose nor a flow field is available")
    rng = rng if rng is not None else np.random.default_rng()
    best_h, best_s, evals = None, None, 0
    if prev_h is not None:
        best_h, best_s = prev_h, scorer(prev_h)
        evals += 1
    if flow is not None and prev_seg is not None:
        ys, xs = np.nonzero(prev_seg)
        pool = np.stack([xs, ys], axis=1).astype(float)
        budget = n - 1 if prev_h is not None else n
        if len(pool) >= 4:
            for _ in range(budget):
                pts = pool[rng.choice(len(pool), 4, replace=False)]
                try:
                    h = flow_candidate(prev_h, flow, pts)
                except (DegenerateConfiguration, SingularMatrix):
                    evals += 1
                    continue
                s = scorer(h)
                evals += 1
                if best_s is None or s.total > best_s.total:
                    best_h, best_s = h, s
    if best_h is None:
        raise NoInitializationSource("no usable candidate pose")
    return best_h, best_s, evals


def _sqrtm_sym(c: np.ndarray, inverse: bool = False) -> np.ndarray:
    w, v = np.linalg.eigh(c)
    w = np.maximum(w, 1e-9)
    return (v * (w ** (-0.5 if inverse else 0.5))) @ v.T


def _moments(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.nonzero(mask)
    pts = np.stack([xs, ys], axis=1).astype(float)
    mu = pts.mean(axis=0)
    d = pts - mu
    return mu, d.T @ d / len(pts) + np.eye(2) / 12  # pixel-area correction


def _rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _affine(a: np.ndarray, t: np.ndarray) -> Homography:
    m = np.eye(3)
    m[:2, :2], m[:2, 2] = a, t
    return Homography(m)


def redetection_candidates(template_mask: np.ndarray, seg: np.ndarray, n: int, rng: np.random.Generator
                           ) -> list[Homography]:
    """Global pose proposals from the segmentation alone.

    Even draws place the template bbox center at a jittered centroid of a
    component with a random similarity (scale 0.5-2, any rotation). Odd draws
    match the second moments of the template mask to those of the component
    up to a random rotation, which lands at the right scale and elongation.
    Components are picked with probability proportional to their size.
    """
    comps = [c for c in connected_components(seg) if c.sum() >= 4]
    if not comps:
        return []
    sizes = np.array([c.sum() for c in comps], float)
    mu_t, cov_t = _moments(template_mask)
    inv_sqrt_t = _sqrtm_sym(cov_t, inverse=True)
    stats = []
    for c in comps:
        mu_b, cov_b = _moments(c)
        ys, xs = np.nonzero(c)
        stats.append((mu_b, _sqrtm_sym(cov_b), np.array([np.ptp(xs) + 1, np.ptp(ys) + 1], float)))
    center_t = Rect.from_mask(template_mask).center
    out = []
    for i in range(n):
        mu_b, sqrt_b, extent = stats[rng.choice(len(comps), p=sizes / sizes.sum())]
        theta = rng.uniform(0, 2 * math.pi)
        try:
            if i % 2 == 0:
                scale = rng.uniform(0.5, 2.0)
                target = mu_b + rng.uniform(-0.25, 0.25, 2) * extent
                a = scale * _rotation(theta)
                out.append(_affine(a, target - a @ np.asarray(center_t)))
            else:
                a = sqrt_b @ _rotation(theta) @ inv_sqrt_t
                out.append(_affine(a, mu_b - a @ mu_t))
        except SingularMatrix:
            continue
    return out


def redetect(template_mask: np.ndarray, scorer: Scorer, schedule: AnnealSchedule, rng: np.random.Generator,
             samples: int = 400) -> OptimizationResult:
    """Pose search that ignores the previous frame: best of ``samples`` global
    proposals, refined by a full annealing run. The scorer should compare
    visibility against the full template mask (``prev_vis=None``)."""
    seed = _state(rng)
    cands = redetection_candidates(template_mask, scorer.seg, samples, rng)
    if not cands:
        return OptimizationResult(Homography.identity(), ScoreBreakdown.zero(), 0, 0, seed)
    best_h, best_s = None, None
    for h in cands:
        s = scorer(h)
        if best_s is None or s.total > best_s.total:
            best_h, best_s = h, s
    res = anneal(best_h, schedule, scorer, rng, initial=best_s)
    return OptimizationResult(res.h, res.breakdown, res.accepted_count, res.evaluation_count + len(cands), seed)
