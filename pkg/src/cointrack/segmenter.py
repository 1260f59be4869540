"""Per-pixel embeddings and exact k-NN labelling into background / obverse / reverse."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Protocol

import cv2
import numpy as np
from scipy.spatial import cKDTree

from .errors import BackendFailure, DimensionMismatch, EmptyIndex


class Label(IntEnum):
    BACKGROUND = 0
    OBVERSE = 1
    REVERSE = 2


N_LABELS = len(Label)
SIDES = (Label.OBVERSE, Label.REVERSE)


@dataclass
class EmbeddingGrid:
    values: np.ndarray  # (grid_h, grid_w, dim)
    stride: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def vectors(self) -> np.ndarray:
        return self.values.reshape(-1, self.dim)


@dataclass
class LabelMask:
    labels: np.ndarray  # uint8 (h, w) of Label values
    confidence: np.ndarray  # float (h, w) in {0, 1/k, ..., 1}
    stride: int = 1

    def object_mask(self) -> np.ndarray:
        return self.labels != Label.BACKGROUND

    def side_mask(self, side: Label) -> np.ndarray:
        return self.labels == side


def grid_shape(image_shape: tuple[int, ...], stride: int) -> tuple[int, int]:
    h, w = image_shape[:2]
    return -(-h // stride), -(-w // stride)


def cell_centers(image_shape: tuple[int, ...], stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel row / column sampled for each grid cell, clipped to the image."""
    h, w = image_shape[:2]
    gh, gw = grid_shape(image_shape, stride)
    ys = np.minimum(np.arange(gh) * stride + stride // 2, h - 1)
    xs = np.minimum(np.arange(gw) * stride + stride // 2, w - 1)
    return ys, xs


def labels_to_grid(labels: np.ndarray, stride: int) -> np.ndarray:
    ys, xs = cell_centers(labels.shape, stride)
    return labels[np.ix_(ys, xs)]


def mask_to_grid(mask: np.ndarray, stride: int) -> np.ndarray:
    return labels_to_grid(np.asarray(mask), stride).astype(bool)


def pool(features: np.ndarray, stride: int) -> np.ndarray:
    """Average-pool an (h, w, c) array over stride x stride blocks, edge padded."""
    h, w = features.shape[:2]
    gh, gw = grid_shape(features.shape, stride)
    padded = np.pad(features, ((0, gh * stride - h), (0, gw * stride - w), (0, 0)), mode="edge")
    return padded.reshape(gh, stride, gw, stride, -1).mean(axis=(1, 3))


def to_rgb_float(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim == 2:
        frame = np.repeat(frame[..., None], 3, axis=2)
    if frame.dtype == np.uint8:
        return frame.astype(np.float32) / 255.0
    return frame.astype(np.float32)


class EmbeddingBackend(Protocol):
    name: str
    stride: int

    def fit(self, frames: list[np.ndarray]) -> None: ...

    def extract(self, frame: np.ndarray, frame_index: int | None = None) -> EmbeddingGrid: ...


class ReferenceBackend:
    """Hand-crafted color/texture features standing in for a learned embedding.

    Channels: L, a, b, L blurred at two scales, |LoG| of L, and optionally the
    normalized cell coordinates. ``fit`` standardizes every channel over the
    given frames (the two initialization frames).
    """

    name = "reference"

    def __init__(self, stride: int = 4, blur_sigmas=(2.0, 4.0), log_sigma: float = 1.0, use_xy: bool = False):
        self.stride = stride
        self.blur_sigmas = tuple(blur_sigmas)
        self.log_sigma = log_sigma
        self.use_xy = use_xy
        self.mean: np.ndarray | None = None
        self.std: np.ndarray | None = None

    def raw_features(self, frame: np.ndarray) -> np.ndarray:
        rgb = to_rgb_float(frame)
        if rgb.size == 0:
            raise BackendFailure("empty frame")
        lab = cv2.cvtColor(rgb, cv2.COLOR_RGB2Lab)
        lum = lab[..., 0]
        chans = [lab[..., 0], lab[..., 1], lab[..., 2]]
        for s in self.blur_sigmas:
            chans.append(cv2.GaussianBlur(lum, (0, 0), s, borderType=cv2.BORDER_REFLECT))
        smooth = cv2.GaussianBlur(lum, (0, 0), self.log_sigma, borderType=cv2.BORDER_REFLECT)
        chans.append(np.abs(cv2.Laplacian(smooth, cv2.CV_32F, borderType=cv2.BORDER_REFLECT)))
        feats = pool(np.stack(chans, axis=2).astype(np.float64), self.stride)
        if self.use_xy:
            gh, gw = feats.shape[:2]
            yy, xx = np.mgrid[0:gh, 0:gw]
            feats = np.concatenate([feats, (xx / max(gw - 1, 1))[..., None], (yy / max(gh - 1, 1))[..., None]], axis=2)
        return feats

    def fit(self, frames: list[np.ndarray]) -> None:
        feats = [self.raw_features(f) for f in frames]
        stacked = np.concatenate([f.reshape(-1, f.shape[-1]) for f in feats])
        self.mean = stacked.mean(axis=0)
        self.std = np.maximum(stacked.std(axis=0), 1e-6)

    def extract(self, frame: np.ndarray, frame_index: int | None = None) -> EmbeddingGrid:
        feats = self.raw_features(frame)
        if self.mean is not None:
            feats = (feats - self.mean) / self.std
        if not np.all(np.isfinite(feats)):
            raise BackendFailure("non-finite features")
        return EmbeddingGrid(feats, self.stride)


def extract(frame: np.ndarray, backend: EmbeddingBackend, frame_index: int | None = None) -> EmbeddingGrid:
    return backend.extract(frame, frame_index)


@dataclass
class ExampleIndex:
    """Append-only store of labelled embedding vectors with exact L2 search.

    Entries inserted with ``initial=True`` are never evicted; once the store
    exceeds ``max_entries`` the oldest adaptation entries are dropped.
    """

    dim: int
    max_entries: int = 1_000_000
    vectors: np.ndarray = field(init=False)
    labels: np.ndarray = field(init=False)
    initial: np.ndarray = field(init=False)

    def __post_init__(self):
        self.vectors = np.zeros((0, self.dim))
        self.labels = np.zeros(0, dtype=np.uint8)
        self.initial = np.zeros(0, dtype=bool)
        self._tree: cKDTree | None = None

    def __len__(self) -> int:
        return len(self.labels)

    def add(self, vectors: np.ndarray, labels: Iterable[int], initial: bool = False) -> int:
        vectors = np.asarray(vectors, dtype=float)
        if vectors.size == 0:
            vectors = vectors.reshape(0, self.dim)
        if vectors.ndim != 2 or vectors.shape[1] != self.dim:
            raise DimensionMismatch(f"vectors of shape {vectors.shape} for index dim {self.dim}")
        labels = np.fromiter((int(v) for v in np.ravel(labels)), dtype=np.int64)
        if len(vectors) != len(labels):
            raise ValueError("vectors and labels differ in length")
        if len(labels) and labels.max() >= N_LABELS:
            raise ValueError("label outside {background, obverse, reverse}")
        if len(labels) == 0:
            return len(self)
        self.vectors = np.concatenate([self.vectors, vectors])
        self.labels = np.concatenate([self.labels, labels.astype(np.uint8)])
        self.initial = np.concatenate([self.initial, np.full(len(labels), initial)])
        self._evict()
        self._tree = None
        return len(self)

    def _evict(self) -> None:
        excess = len(self) - self.max_entries
        if excess <= 0:
            return
        adaptive = np.flatnonzero(~self.initial)[:excess]
        keep = np.ones(len(self), dtype=bool)
        keep[adaptive] = False
        self.vectors, self.labels, self.initial = self.vectors[keep], self.labels[keep], self.initial[keep]

    def label_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=N_LABELS)

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.vectors)
        return self._tree

    def save(self, path: str | Path) -> None:
        """Flat little-endian float64 vectors + uint8 labels/initial flags, JSON header alongside."""
        path = Path(path)
        header = {"dim": self.dim, "count": len(self), "dtype": "<f8", "max_entries": self.max_entries,
                  "layout": ["vectors", "labels", "initial"]}
        with open(path, "wb") as fh:
            fh.write(self.vectors.astype("<f8").tobytes())
            fh.write(self.labels.astype(np.uint8).tobytes())
            fh.write(self.initial.astype(np.uint8).tobytes())
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(header, indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "ExampleIndex":
        path = Path(path)
        header = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        dim, n = header["dim"], header["count"]
        raw = path.read_bytes()
        idx = cls(dim, header.get("max_entries", 1_000_000))
        nv = n * dim * 8
        idx.vectors = np.frombuffer(raw[:nv], dtype="<f8").reshape(n, dim).astype(float)
        idx.labels = np.frombuffer(raw[nv:nv + n], dtype=np.uint8).copy()
        idx.initial = np.frombuffer(raw[nv + n:nv + 2 * n], dtype=np.uint8).astype(bool)
        return idx


def add_examples(index: ExampleIndex, examples: list[tuple[np.ndarray, int]]) -> int:
    if not examples:
        return len(index)
    vecs = np.stack([np.asarray(v, dtype=float) for v, _ in examples])
    return index.add(vecs, [int(lab) for _, lab in examples])


def _vote(dist: np.ndarray, lab: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Majority over (n, k) neighbor labels; ties by summed distance, then label order."""
    onehot = lab[..., None] == np.arange(N_LABELS)
    votes = onehot.sum(axis=1)
    dsum = (onehot * dist[..., None]).sum(axis=1)
    top = votes.max(axis=1, keepdims=True)
    cand = votes == top
    # among tied vote counts the smallest summed distance wins; argmin keeps label order on exact ties
    masked = np.where(cand, dsum, np.inf)
    best = np.argmin(masked, axis=1)
    return best.astype(np.uint8), top[:, 0] / k


def knn_query(index: ExampleIndex, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact k nearest entries per query, ordered by (distance, label).

    The KD-tree proposes candidates; distances are recomputed directly and any
    query whose k-th distance ties with a non-retrieved entry is resolved by
    an exhaustive radius search.
    """
    n = len(index)
    extra = min(n, k + 3)
    _, cand = index.tree.query(queries, k=extra)
    cand = cand.reshape(len(queries), extra)
    vec = index.vectors
    diff = vec[cand] - queries[:, None, :]
    dist = np.sqrt(np.einsum("qkd,qkd->qk", diff, diff))
    lab = index.labels[cand]
    order = np.lexsort((lab, dist), axis=1)
    dist = np.take_along_axis(dist, order, axis=1)
    lab = np.take_along_axis(lab, order, axis=1)
    out_d, out_l = dist[:, :k].copy(), lab[:, :k].copy()
    if extra > k:
        risky = np.flatnonzero(dist[:, k - 1] >= dist[:, extra - 1] * (1 - 1e-9))
        for q in risky:
            r = dist[q, k - 1] * (1 + 1e-9) + 1e-12
            ids = np.asarray(index.tree.query_ball_point(queries[q], r), dtype=np.intp)
            d = np.sqrt(((vec[ids] - queries[q]) ** 2).sum(axis=1))
            o = np.lexsort((index.labels[ids], d))[:k]
            out_d[q], out_l[q] = d[o], index.labels[ids][o]
    return out_d, out_l


def classify(grid: EmbeddingGrid, index: ExampleIndex, k: int = 5) -> LabelMask:
    if len(index) < k or len(index) == 0:
        raise EmptyIndex(f"index holds {len(index)} entries, need at least k={k}")
    if grid.dim != index.dim:
        raise DimensionMismatch(f"grid dim {grid.dim} != index dim {index.dim}")
    q = grid.vectors().astype(float)
    dist, lab = knn_query(index, q, k)
    best, conf = _vote(dist, lab, k)
    gh, gw = grid.shape
    return LabelMask(best.reshape(gh, gw), conf.reshape(gh, gw), grid.stride)


def upsample_labels(lm: LabelMask, target: tuple[int, int]) -> LabelMask:
    """Nearest-neighbor expansion of a stride grid to ``target = (width, height)``."""
    tw, th = target
    s = lm.stride
    ys = np.minimum(np.arange(th) // s, lm.labels.shape[0] - 1)
    xs = np.minimum(np.arange(tw) // s, lm.labels.shape[1] - 1)
    return LabelMask(lm.labels[np.ix_(ys, xs)], lm.confidence[np.ix_(ys, xs)], 1)


def initial_examples(
    frames: list[tuple[EmbeddingGrid, np.ndarray]], cap_per_label: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Every cell of the ground-truth frames, uniformly subsampled to a per-label cap.

    ``frames`` pairs each embedding grid with its per-cell label grid.
    """
    vecs = np.concatenate([g.vectors() for g, _ in frames])
    labs = np.concatenate([lg.ravel() for _, lg in frames]).astype(np.uint8)
    keep = []
    for lab in Label:
        ids = np.flatnonzero(labs == lab)
        if len(ids) > cap_per_label:
            ids = np.sort(rng.choice(ids, size=cap_per_label, replace=False))
        keep.append(ids)
    ids = np.concatenate(keep)
    return vecs[ids], labs[ids]
