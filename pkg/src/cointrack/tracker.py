"""Per-frame tracking pipeline: segment, pick the visible side, estimate the
pose (or re-detect when lost), update the state machine, adapt the index."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adaptation import AdaptationConfig, AdaptationReport, adapt
from .dataset import SequenceRecord
from .errors import InvalidTemplate, MissingFrame
from .flow import FlowField, read_flow, translational_flow
from .geometry import Homography, warp_mask
from .optimizer import AnnealSchedule, anneal, init_hypotheses, redetect
from .scoring import FrameScorer, ScoreBreakdown, SideTemplate, to_gray
from .segmenter import (
    EmbeddingBackend,
    ExampleIndex,
    Label,
    LabelMask,
    classify,
    extract,
    initial_examples,
    labels_to_grid,
    upsample_labels,
)

TRACKING = "tracking"
LOST = "lost"
BEFORE_INIT = "before-init"


@dataclass
class TrackerConfig:
    k: int = 5
    lost_threshold: float = 0.30
    redetect_threshold: float = 0.45
    init_candidates: int = 50
    redetect_samples: int = 400
    min_support: int = 16
    flow: str = "auto"  # auto | file | builtin | none
    flow_window: int = 32
    initial_cap_per_label: int = 20000
    max_index_entries: int = 1_000_000
    strict_causal: bool = False
    schedule: AnnealSchedule = field(default_factory=AnnealSchedule)
    adaptation: AdaptationConfig = field(default_factory=AdaptationConfig)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 <= self.lost_threshold <= 1 or not 0 <= self.redetect_threshold <= 1:
            raise ValueError("thresholds must lie in [0, 1]")
        if self.flow not in ("auto", "file", "builtin", "none"):
            raise ValueError(f"unknown flow provider {self.flow!r}")


@dataclass
class Templates:
    """Ground-truth frames of both sides; poses are relative to these frames."""

    images: dict[Label, np.ndarray]
    sides: dict[Label, SideTemplate]

    @classmethod
    def build(cls, obverse: tuple[np.ndarray, np.ndarray, int],
              reverse: tuple[np.ndarray, np.ndarray, int] | None = None) -> "Templates":
        """From (image, mask, frame index) triples; the reverse side is optional."""
        images, sides = {}, {}
        for side, item in ((Label.OBVERSE, obverse), (Label.REVERSE, reverse)):
            if item is None:
                continue
            image, mask, idx = item
            mask = np.asarray(mask, dtype=bool)
            if image.shape[:2] != mask.shape:
                raise InvalidTemplate(f"{side.name.lower()} image {image.shape} does not match mask {mask.shape}")
            if not mask.any():
                raise InvalidTemplate(f"empty {side.name.lower()} template mask")
            images[side] = image
            sides[side] = SideTemplate(side, to_gray(image), mask, idx)
        return cls(images, sides)

    @classmethod
    def from_sequence(cls, seq: SequenceRecord) -> "Templates":
        def load(i):
            return seq.load_frame(i), seq.load_gt(i) > 0, i
        rev = None if seq.reverse_frame is None else load(seq.reverse_frame)
        return cls.build(load(seq.obverse_frame), rev)

    def has(self, side: Label) -> bool:
        return side in self.sides


@dataclass
class TrackerState:
    mode: str
    side: Label
    pose: Homography | None
    prev_visibility: np.ndarray | None  # None: full template on the next frame
    frame_index: int
    last_breakdown: ScoreBreakdown
    prev_seg: np.ndarray | None = None
    prev_gray: np.ndarray | None = None

    def check(self, lost_threshold: float) -> None:
        if self.mode == TRACKING:
            assert self.pose is not None and self.last_breakdown.total >= lost_threshold
        else:
            assert self.pose is None


@dataclass
class FrameResult:
    frame_index: int
    mask: LabelMask
    pose: Homography | None
    side: Label
    mode: str
    breakdown: ScoreBreakdown
    adaptation: AdaptationReport
    index_size: int = 0
    segmentation: LabelMask | None = None  # raw k-NN labels on the embedding grid

    def record(self, mask_path: str | None = None) -> dict:
        return {
            "frame": self.frame_index,
            "mode": self.mode,
            "side": self.side.name.lower(),
            "score": self.breakdown.to_dict(),
            "homography": None if self.pose is None else self.pose.to_list(),
            "adaptation": self.adaptation.to_dict(),
            "mask_path": mask_path,
        }


def _frame_rng(seed: int, frame_index: int | None) -> np.random.Generator:
    key = [seed, 0] if frame_index is None else [seed, 1, frame_index]
    return np.random.default_rng(np.random.SeedSequence(key))


class Tracker:
    def __init__(self, templates: Templates, backend: EmbeddingBackend, config: TrackerConfig | None = None,
                 seed: int = 0):
        self.templates = templates
        self.backend = backend
        self.config = config or TrackerConfig()
        self.seed = seed
        self.index: ExampleIndex | None = None
        self._deferred: tuple[int, np.ndarray, np.ndarray] | None = None

    def _template_examples(self, side: Label, rng) -> tuple[np.ndarray, np.ndarray]:
        tpl = self.templates.sides[side]
        grid = extract(self.templates.images[side], self.backend, tpl.frame_index)
        labels = labels_to_grid(np.where(tpl.mask, int(side), 0).astype(np.uint8), grid.stride)
        return grid, labels

    def initialize(self) -> TrackerState:
        """Build the example index from the ground-truth frames; start tracking
        at the obverse frame with the identity pose."""
        cfg = self.config
        self.backend.fit([self.templates.images[s] for s in sorted(self.templates.sides)])
        rng = _frame_rng(self.seed, None)
        pairs = {s: self._template_examples(s, rng) for s in sorted(self.templates.sides)}
        obv = self.templates.sides[Label.OBVERSE]
        dim = pairs[Label.OBVERSE][0].dim
        self.index = ExampleIndex(dim, cfg.max_index_entries)
        now = [pairs[Label.OBVERSE]]
        if Label.REVERSE in pairs:
            if cfg.strict_causal and self.templates.sides[Label.REVERSE].frame_index > obv.frame_index:
                vecs, labs = initial_examples([pairs[Label.REVERSE]], cfg.initial_cap_per_label, rng)
                self._deferred = (self.templates.sides[Label.REVERSE].frame_index, vecs, labs)
            else:
                now.append(pairs[Label.REVERSE])
        vecs, labs = initial_examples(now, cfg.initial_cap_per_label, rng)
        self.index.add(vecs, labs, initial=True)
        return TrackerState(TRACKING, Label.OBVERSE, Homography.identity(), None, obv.frame_index - 1,
                            ScoreBreakdown.of(1.0, 1.0, 1.0, 1.0))

    def _flow(self, state: TrackerState, gray: np.ndarray, flow: FlowField | None) -> FlowField | None:
        mode = self.config.flow
        if flow is not None and mode in ("auto", "file"):
            return flow
        if mode in ("auto", "builtin") and state.prev_gray is not None and state.prev_seg is not None \
                and state.prev_seg.any():
            return translational_flow(state.prev_gray, gray, state.prev_seg, self.config.flow_window)
        return None

    def _choose_side(self, labels: np.ndarray, previous: Label) -> Label:
        if not self.templates.has(Label.REVERSE):
            return Label.OBVERSE
        n_obv = int(np.count_nonzero(labels == Label.OBVERSE))
        n_rev = int(np.count_nonzero(labels == Label.REVERSE))
        if n_obv == n_rev:
            return previous
        return Label.OBVERSE if n_obv > n_rev else Label.REVERSE

    def step(self, state: TrackerState, frame: np.ndarray, frame_index: int | None = None,
             flow: FlowField | None = None) -> tuple[TrackerState, FrameResult]:
        cfg = self.config
        t = state.frame_index + 1 if frame_index is None else frame_index
        rng = _frame_rng(self.seed, t)
        if self._deferred is not None and t >= self._deferred[0]:
            self.index.add(self._deferred[1], self._deferred[2], initial=True)
            self._deferred = None

        grid = extract(frame, self.backend, t)
        lm = classify(grid, self.index, cfg.k)
        h, w = frame.shape[:2]
        full = upsample_labels(lm, (w, h))
        seg = full.labels > 0
        gray = to_gray(frame)
        side = self._choose_side(full.labels, state.side)
        tpl = self.templates.sides[side]

        continuing = state.mode == TRACKING and side == state.side
        if continuing:
            scorer = FrameScorer(gray, seg, tpl, state.prev_visibility, state.pose, cfg.min_support)
            h0, s0, _ = init_hypotheses(state.pose, self._flow(state, gray, flow), state.prev_seg, scorer,
                                        cfg.init_candidates, rng)
            res = anneal(h0, cfg.schedule, scorer, rng, initial=s0)
            ok = res.total >= cfg.lost_threshold
        else:
            # lost, or the visible side changed: poses of different sides do not compose
            scorer = FrameScorer(gray, seg, tpl, None, None, cfg.min_support)
            res = redetect(tpl.mask, scorer, cfg.schedule, rng, cfg.redetect_samples)
            need = cfg.lost_threshold if state.mode == TRACKING else cfg.redetect_threshold
            ok = res.total >= need

        if ok:
            warped = warp_mask(res.h, tpl.mask, (w, h))
            vis = seg & warped
            out = LabelMask(np.where(vis, int(side), 0).astype(np.uint8), np.where(vis, full.confidence, 0.0), 1)
            report = adapt(True, lm, grid, warped, side, self.index, cfg.adaptation)
            new = TrackerState(TRACKING, side, res.h, vis if continuing else None, t, res.breakdown, seg, gray)
        else:
            out = LabelMask(full.labels.copy(), full.confidence, 1)
            report = adapt(False, lm, grid, seg, side, self.index, cfg.adaptation)
            new = TrackerState(LOST, side, None, None, t, res.breakdown, seg, gray)
        new.check(cfg.lost_threshold)
        return new, FrameResult(t, out, new.pose, side, new.mode, res.breakdown, report, len(self.index), lm)


def initialize(templates: Templates, backend: EmbeddingBackend, config: TrackerConfig | None = None,
               seed: int = 0) -> tuple[Tracker, TrackerState]:
    tracker = Tracker(templates, backend, config, seed)
    return tracker, tracker.initialize()


def _placeholder(t: int, shape: tuple[int, int]) -> FrameResult:
    return FrameResult(t, LabelMask(np.zeros(shape, np.uint8), np.zeros(shape), 1), None, Label.OBVERSE,
                       LOST, ScoreBreakdown.zero(), AdaptationReport(0, 0, BEFORE_INIT))


def _sequence_flow(seq: SequenceRecord, t: int) -> FlowField | None:
    """Flow from frame t-1 to t if the sequence ships one."""
    flows = getattr(seq, "flows", None)
    if flows and (t - 1) in flows:
        return flows[t - 1]
    if (t - 1) in seq.flow_paths:
        return read_flow(seq.flow_paths[t - 1])
    return None


def run_sequence(seq: SequenceRecord, backend: EmbeddingBackend, config: TrackerConfig | None = None,
                 seed: int = 0, frames: range | None = None, callback=None) -> list[FrameResult]:
    """Track a whole sequence from its obverse initialization frame onward.

    Frames before the initialization frame get empty placeholder results.
    ``callback(result)`` is invoked after every frame.
    """
    config = config or TrackerConfig()
    tracker, state = initialize(Templates.from_sequence(seq), backend, config, seed)
    results = []
    for t in frames if frames is not None else range(len(seq)):
        frame = seq.load_frame(t)
        if t < seq.obverse_frame:
            res = _placeholder(t, frame.shape[:2])
        else:
            flow = _sequence_flow(seq, t) if config.flow in ("auto", "file") else None
            state, res = tracker.step(state, frame, t, flow)
        results.append(res)
        if callback is not None:
            callback(res)
    if not results:
        raise MissingFrame("sequence has no frames to track")
    return results
