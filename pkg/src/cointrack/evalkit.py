"""Evaluation protocol and dataset statistics: per-sequence IoU with the
empty-frame exclusion rule, LoG textureness and aspect-ratio-change
histograms."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import cv2
import numpy as np

from .errors import DegenerateRect, EmptyMask, InsufficientData, MissingFrame
from .mask import aspect_ratio_change, iou, min_rotated_rect

TRACKING = "tracking"


@dataclass
class SequenceIoU:
    mean: float | None  # None when no annotated frame has a non-empty mask
    per_frame: dict[int, float | None]

    @property
    def n_contributing(self) -> int:
        return sum(v is not None for v in self.per_frame.values())


def _lookup(pred, i: int) -> np.ndarray:
    if callable(pred):
        return np.asarray(pred(i), dtype=bool)
    if i not in pred:
        raise MissingFrame(f"no prediction for annotated frame {i}")
    return np.asarray(pred[i], dtype=bool)


def sequence_iou(pred: Mapping[int, np.ndarray] | Callable[[int], np.ndarray],
                 gt_masks: Mapping[int, np.ndarray], frames=None) -> SequenceIoU:
    """Mean IoU over annotated frames; frames whose ground truth is empty are
    kept in ``per_frame`` as None and excluded from the mean.

    ``frames`` optionally restricts the evaluation to a subset of frame indices.
    """
    per: dict[int, float | None] = {}
    for i in sorted(gt_masks):
        if frames is not None and i not in frames:
            continue
        gt = np.asarray(gt_masks[i], dtype=bool)
        p = _lookup(pred, i)
        per[i] = iou(p, gt) if gt.any() else None
    vals = [v for v in per.values() if v is not None]
    return SequenceIoU(float(np.mean(vals)) if vals else None, per)


@dataclass
class SequenceReport:
    name: str
    iou: SequenceIoU
    tracking_iou: SequenceIoU
    tracking_fraction: float
    n_frames: int

    def row(self) -> dict:
        def fmt(v):
            return "" if v is None else f"{v:.6f}"
        return {
            "sequence": self.name,
            "iou": fmt(self.iou.mean),
            "annotated": self.iou.n_contributing,
            "tracking_iou": fmt(self.tracking_iou.mean),
            "tracking_annotated": self.tracking_iou.n_contributing,
            "tracking_pct": f"{100 * self.tracking_fraction:.4f}",
            "frames": self.n_frames,
        }


def evaluate_records(name: str, records: list[dict], masks: Mapping[int, np.ndarray] | Callable,
                     gt_masks: Mapping[int, np.ndarray]) -> SequenceReport:
    """Full-sequence IoU plus IoU and share of frames restricted to the
    confident (tracking) state."""
    modes = {r["frame"]: r["mode"] for r in records}
    missing = [i for i in gt_masks if i not in modes]
    if missing:
        raise MissingFrame(f"{name}: results miss annotated frames {missing[:5]}")
    full = sequence_iou(masks, gt_masks)
    confident = [i for i, m in modes.items() if m == TRACKING]
    tracked = sequence_iou(masks, gt_masks, frames=set(confident))
    return SequenceReport(name, full, tracked, len(confident) / len(records) if records else 0.0, len(records))


def write_report_csv(path: str | Path, reports: list[SequenceReport]) -> None:
    """One row per sequence plus a ``mean`` row (average of per-sequence means)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [r.row() for r in reports]

    def avg(vals):
        vals = [v for v in vals if v is not None]
        return f"{np.mean(vals):.6f}" if vals else ""

    rows.append({
        "sequence": "mean",
        "iou": avg(r.iou.mean for r in reports),
        "annotated": sum(r.iou.n_contributing for r in reports),
        "tracking_iou": avg(r.tracking_iou.mean for r in reports),
        "tracking_annotated": sum(r.tracking_iou.n_contributing for r in reports),
        "tracking_pct": f"{100 * sum(r.tracking_fraction * r.n_frames for r in reports) / max(sum(r.n_frames for r in reports), 1):.4f}",
        "frames": sum(r.n_frames for r in reports),
    })
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


# ---------------------------------------------------------------- statistics

def luma01(frame: np.ndarray) -> np.ndarray:
    f = np.asarray(frame, dtype=np.float64)
    if f.ndim == 3:
        f = f[..., 0] * 0.299 + f[..., 1] * 0.587 + f[..., 2] * 0.114
    return f / 255.0


def log_response(gray: np.ndarray, sigma: float = 0.8) -> np.ndarray:
    """Gaussian blur (kernel radius ceil(4 sigma)) then the 5-point Laplacian."""
    r = int(math.ceil(4 * sigma))
    blurred = cv2.GaussianBlur(np.asarray(gray, np.float64), (2 * r + 1, 2 * r + 1), sigma,
                               borderType=cv2.BORDER_REFLECT)
    return cv2.Laplacian(blurred, cv2.CV_64F, ksize=1, borderType=cv2.BORDER_REFLECT)


def textureness(frame: np.ndarray, mask: np.ndarray, sigma: float = 0.8) -> float:
    """Mean absolute LoG response of the luma (in [0, 1]) over the mask."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMask("textureness over an empty mask")
    return float(np.abs(log_response(luma01(frame), sigma))[mask].mean())


def _rects(gt_masks: Mapping[int, np.ndarray]) -> dict:
    out = {}
    for i in sorted(gt_masks):
        m = np.asarray(gt_masks[i], dtype=bool)
        if not m.any():
            continue
        r = min_rotated_rect(m)
        if r.side_a > 0 and r.side_b > 0:
            out[i] = r
    return out


def ar_change_vs_first(gt_masks: Mapping[int, np.ndarray]) -> list[float]:
    """Aspect-ratio change between the first non-empty annotation and every later one."""
    rects = _rects(gt_masks)
    if len(rects) < 2:
        raise InsufficientData("need at least two non-empty annotated frames")
    idx = sorted(rects)
    return [aspect_ratio_change(rects[idx[0]], rects[i]) for i in idx[1:]]


def ar_change_speed(gt_masks: Mapping[int, np.ndarray], gap: int = 5) -> list[float]:
    """Aspect-ratio change between annotated frames ``gap`` apart."""
    rects = _rects(gt_masks)
    if len(rects) < 2:
        raise InsufficientData("need at least two non-empty annotated frames")
    return [aspect_ratio_change(rects[i - gap], rects[i]) for i in sorted(rects) if i - gap in rects]


@dataclass
class HistogramSpec:
    edges: np.ndarray
    counts: np.ndarray = field(default=None)

    @classmethod
    def log_spaced(cls, lo: float = 1.0, hi: float = 8.0, bins: int = 32) -> "HistogramSpec":
        return cls(np.geomspace(lo, hi, bins + 1))

    def fill(self, values) -> "HistogramSpec":
        """Counts with values outside the edges clamped into the end bins."""
        v = np.clip(np.asarray(values, float), self.edges[0], self.edges[-1])
        counts, _ = np.histogram(v, self.edges)
        return HistogramSpec(self.edges, counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def write_histogram_csv(path: str | Path, hist: HistogramSpec) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lo", "hi", "count"])
        for lo, hi, c in zip(hist.edges[:-1], hist.edges[1:], hist.counts):
            w.writerow([f"{lo:.6f}", f"{hi:.6f}", int(c)])


def plot_histogram(path: str | Path, hist: HistogramSpec, title: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.2), dpi=100)
    widths = np.diff(hist.edges)
    ax.bar(hist.edges[:-1], hist.counts, width=widths, align="edge", color="#4a7ab0", edgecolor="white")
    ax.set_xscale("log")
    ax.set_xlabel("aspect ratio change")
    ax.set_ylabel("frames")
    ax.set_title(title)
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_textureness(path: str | Path, values: dict[str, float]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = sorted(values, key=values.get)
    fig, ax = plt.subplots(figsize=(5, 0.3 * len(names) + 1.2), dpi=100)
    ax.barh(names, [values[n] for n in names], color="#b07a4a")
    ax.set_xlabel("mean |LoG|")
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def sequence_textureness(frames: Mapping[int, np.ndarray], gt_masks: Mapping[int, np.ndarray],
                         sigma: float = 0.8) -> float | None:
    """Mean per-frame textureness over annotated frames with a non-empty mask."""
    vals = [textureness(frames[i], m, sigma) for i, m in sorted(gt_masks.items()) if np.any(m)]
    return float(np.mean(vals)) if vals else None


def safe_ar(fn, gt_masks, **kw) -> list[float]:
    try:
        return fn(gt_masks, **kw)
    except (InsufficientData, DegenerateRect):
        return []
