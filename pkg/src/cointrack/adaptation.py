"""Conservative online adaptation of the k-NN example index.

While the tracker is confident, misclassified embedding cells are added as
new examples. Background examples come from object-labeled cells that are
far outside the pose-implied contour and not connected to it; object
examples come from background-labeled cells in closed holes inside it.
Selections operate on embedding cells, tested at each cell's sampled pixel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .mask import EIGHT, boundary_distance, holes
from .segmenter import EmbeddingGrid, ExampleIndex, Label, LabelMask, cell_centers, upsample_labels

LOST = "lost-state"
DISABLED = "disabled"
NONE_ELIGIBLE = "none-eligible"


@dataclass
class AdaptationConfig:
    min_boundary_distance: float = 20.0
    enabled: bool = True

    def __post_init__(self):
        if self.min_boundary_distance < 0:
            raise ValueError("min_boundary_distance must be >= 0")


@dataclass
class AdaptationReport:
    n_bg_added: int = 0
    n_obj_added: int = 0
    skipped_reason: str | None = None

    def to_dict(self) -> dict[str, int]:
        return {"bg": self.n_bg_added, "obj": self.n_obj_added}


def _full_object_mask(seg: LabelMask, shape: tuple[int, int]) -> np.ndarray:
    if seg.labels.shape == shape and seg.stride == 1:
        return seg.object_mask()
    return upsample_labels(seg, (shape[1], shape[0])).object_mask()


def _at_cells(full: np.ndarray, stride: int) -> np.ndarray:
    ys, xs = cell_centers(full.shape, stride)
    return full[np.ix_(ys, xs)]


def select_background_examples(seg: LabelMask, warped_template: np.ndarray, dist: np.ndarray | None = None,
                               min_boundary_distance: float = 20.0) -> np.ndarray:
    """Boolean cell grid of object-labeled cells to relabel as background.

    A cell qualifies when it lies outside the warped template, at least
    ``min_boundary_distance`` px from its contour, and its segmentation
    component (8-connected, full resolution) does not touch the template.
    """
    warped = np.asarray(warped_template, dtype=bool)
    if dist is None:
        dist = boundary_distance(warped)
    obj = _full_object_mask(seg, warped.shape)
    comp, n = ndimage.label(obj, structure=EIGHT)
    touching = np.unique(comp[warped & obj])
    attached = np.isin(comp, touching[touching > 0])
    eligible = obj & ~warped & (dist >= min_boundary_distance) & ~attached
    return _at_cells(eligible, seg.stride) & (seg.labels != Label.BACKGROUND)


def select_object_examples(seg: LabelMask, warped_template: np.ndarray) -> np.ndarray:
    """Boolean cell grid of background-labeled cells inside closed holes of the
    object segmentation and inside the warped template."""
    warped = np.asarray(warped_template, dtype=bool)
    obj = _full_object_mask(seg, warped.shape)
    eligible = holes(obj) & warped
    return _at_cells(eligible, seg.stride) & (seg.labels == Label.BACKGROUND)


def adapt(tracking: bool, seg: LabelMask, grid: EmbeddingGrid, warped_template: np.ndarray, side: Label,
          index: ExampleIndex, config: AdaptationConfig) -> AdaptationReport:
    """Append the selected cells' embeddings to ``index`` (tracking state only)."""
    if not config.enabled:
        return AdaptationReport(0, 0, DISABLED)
    if not tracking:
        return AdaptationReport(0, 0, LOST)
    bg = select_background_examples(seg, warped_template, None, config.min_boundary_distance)
    ob = select_object_examples(seg, warped_template)
    n_bg, n_ob = int(bg.sum()), int(ob.sum())
    if n_bg == 0 and n_ob == 0:
        return AdaptationReport(0, 0, NONE_ELIGIBLE)
    vecs = np.concatenate([grid.values[bg], grid.values[ob]])
    labels = np.concatenate([np.full(n_bg, int(Label.BACKGROUND)), np.full(n_ob, int(side))])
    index.add(vecs, labels)
    return AdaptationReport(n_bg, n_ob, None)
