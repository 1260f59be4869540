"""Pose-hypothesis score: the product of segmentation-explained, contour-covered,
occlusion-consistency and appearance (ZNCC) components, each in [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .errors import DegenerateAppearance, DimensionMismatch, InvalidTemplate
from .geometry import Homography, Rect, compose, invert, sample_grid, warp_mask
from .mask import bbox as mask_bbox
from .mask import iou
from .segmenter import Label

NEUTRAL_APPEARANCE = 0.5
VAR_EPS = 1e-6


@dataclass(frozen=True)
class ScoreBreakdown:
    s_obj: float
    s_cover: float
    s_occl: float
    s_appearance: float
    total: float

    @classmethod
    def of(cls, s_obj: float, s_cover: float, s_occl: float, s_appearance: float) -> "ScoreBreakdown":
        return cls(s_obj, s_cover, s_occl, s_appearance, s_obj * s_cover * s_occl * s_appearance)

    @classmethod
    def zero(cls) -> "ScoreBreakdown":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)

    def to_dict(self) -> dict[str, float]:
        return {"obj": self.s_obj, "cover": self.s_cover, "occl": self.s_occl,
                "appearance": self.s_appearance, "total": self.total}


@dataclass(frozen=True)
class SideTemplate:
    """Ground-truth frame of one side: grayscale image, object mask and bbox."""

    side: Label
    gray: np.ndarray
    mask: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        if self.gray.shape[:2] != self.mask.shape:
            raise InvalidTemplate(f"template image {self.gray.shape} and mask {self.mask.shape} differ")
        if not np.any(self.mask):
            raise InvalidTemplate(f"empty {self.side.name.lower()} template mask")

    @property
    def bbox(self) -> Rect:
        return Rect.from_mask(self.mask)


def to_gray(image: np.ndarray) -> np.ndarray:
    """ITU-R 601 luma as float64, in the input's intensity units."""
    image = np.asarray(image)
    if image.ndim == 2:
        return image.astype(np.float64)
    rgb = image[..., :3].astype(np.float64)
    return rgb @ np.array([0.299, 0.587, 0.114])


def _check(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")


def s_obj(seg: np.ndarray, warped_template: np.ndarray) -> float:
    """Fraction of the segmentation lying inside the hypothesized contour (0 if empty)."""
    _check(seg, warped_template)
    n = np.count_nonzero(seg)
    return np.count_nonzero(seg & warped_template) / n if n else 0.0


def s_cover(seg: np.ndarray, warped_template: np.ndarray) -> float:
    """Fraction of the hypothesized contour classified as object (0 if empty)."""
    _check(seg, warped_template)
    n = np.count_nonzero(warped_template)
    return np.count_nonzero(seg & warped_template) / n if n else 0.0


def visibility_mask(seg: np.ndarray, warped_template: np.ndarray) -> np.ndarray:
    _check(seg, warped_template)
    return seg & warped_template


def s_occl(current_vis: np.ndarray, prev_vis: np.ndarray, h_inter: Homography) -> float:
    """IoU of the current visibility and the previous one carried over by ``h_inter``."""
    h, w = current_vis.shape
    return iou(current_vis, warp_mask(h_inter, prev_vis, (w, h)))


def zncc(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float) - np.mean(a)
    b = np.asarray(b, dtype=float) - np.mean(b)
    saa, sbb = float(a @ a), float(b @ b)
    if saa < VAR_EPS * len(a) or sbb < VAR_EPS * len(b):
        raise DegenerateAppearance("intensity variance below epsilon")
    return float(a @ b) / np.sqrt(saa * sbb)


Window = tuple[int, int, int, int]


def mask_window(mask: np.ndarray) -> Window | None:
    """Half-open pixel window [x0, x1) x [y0, y1) around the set pixels."""
    bb = mask_bbox(mask)
    return None if bb is None else (bb[0], bb[1], bb[2] + 1, bb[3] + 1)


def pull_back(image: np.ndarray, h: Homography, window: Window, linear: bool) -> np.ndarray:
    """Sample ``image`` (current frame) at ``h`` applied to the canonical pixels of ``window``."""
    x0, y0, x1, y1 = window
    m = h.m @ np.array([[1.0, 0, x0], [0, 1, y0], [0, 0, 1]])
    if linear:
        src = image if image.dtype == np.float32 else image.astype(np.float32)
        return cv2.warpPerspective(src, m, (x1 - x0, y1 - y0), flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                                   borderMode=cv2.BORDER_REPLICATE)
    src = image.view(np.uint8) if image.dtype == bool and image.flags.c_contiguous else np.ascontiguousarray(image, np.uint8)
    out = cv2.warpPerspective(src, m, (x1 - x0, y1 - y0), flags=cv2.INTER_NEAREST | cv2.WARP_INVERSE_MAP,
                              borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    return out.astype(bool)


def appearance_support(template_mask: np.ndarray, seg: np.ndarray, h: Homography) -> np.ndarray:
    """Canonical-frame pixels that are object in the template and, mapped through
    ``h``, land on segmented pixels of the current frame."""
    out = np.zeros(template_mask.shape, dtype=bool)
    win = mask_window(template_mask)
    if win is not None:
        x0, y0, x1, y1 = win
        out[y0:y1, x0:x1] = template_mask[y0:y1, x0:x1] & pull_back(seg, h, win, linear=False)
    return out


def _appearance_value(sampled: np.ndarray, reference: np.ndarray, min_support: int) -> float:
    if len(sampled) < min_support:
        return NEUTRAL_APPEARANCE
    try:
        r = zncc(sampled, reference)
    except DegenerateAppearance:
        return NEUTRAL_APPEARANCE
    return float(np.clip(0.5 + 0.5 * r, 0.0, 1.0))


def s_appearance(frame: np.ndarray, template: np.ndarray, h: Homography, support: np.ndarray,
                 min_support: int = 16, window: Window | None = None) -> float:
    """``1/2 + ZNCC/2`` between the template and the current frame sampled through ``h``.

    ``support`` lives in the template frame; ``window`` (default: the whole
    template) bounds the canonical pixels that get resampled. Too few support
    pixels or a flat intensity profile yield the neutral value 0.5.
    """
    tpl = to_gray(template)
    if window is None:
        window = (0, 0, tpl.shape[1], tpl.shape[0])
    x0, y0, x1, y1 = window
    sup = support[y0:y1, x0:x1]
    if np.count_nonzero(sup) < min_support:
        return NEUTRAL_APPEARANCE
    sampled = pull_back(to_gray(frame), h, window, linear=True)
    return _appearance_value(sampled[sup].astype(float), tpl[y0:y1, x0:x1][sup], min_support)


def score(frame: np.ndarray, seg: np.ndarray, template: SideTemplate, h: Homography,
          prev_vis: np.ndarray | None = None, prev_pose: Homography | None = None,
          min_support: int = 16) -> ScoreBreakdown:
    """Reference full-frame evaluation of all four components.

    ``prev_vis=None`` stands for the full template mask (first frame after
    initialization or re-detection).
    """
    fh, fw = seg.shape
    warped = warp_mask(h, template.mask, (fw, fh))
    vis = visibility_mask(seg, warped)
    if prev_vis is None:
        occl = iou(vis, warped)
    else:
        occl = s_occl(vis, prev_vis, compose(h, invert(prev_pose)))
    support = appearance_support(template.mask, seg, h)
    app = s_appearance(frame, template.gray, h, support, min_support, mask_window(template.mask))
    return ScoreBreakdown.of(s_obj(seg, warped), s_cover(seg, warped), occl, app)


class FrameScorer:
    """Fast scorer for one frame and one side template.

    Produces the same numbers as :func:`score` but only touches the pixels in
    the bounding box of the warped template (and of the carried-over previous
    visibility), which is what makes a few hundred evaluations per frame cheap.
    """

    def __init__(self, frame_gray: np.ndarray, seg: np.ndarray, template: SideTemplate,
                 prev_vis: np.ndarray | None = None, prev_pose: Homography | None = None,
                 min_support: int = 16):
        self.gray = np.asarray(frame_gray, dtype=np.float32)
        self.seg = np.asarray(seg, dtype=bool)
        _check(self.gray, self.seg)
        self.template = template
        self.n_seg = int(np.count_nonzero(self.seg))
        self.prev_vis = prev_vis
        self.prev_pose = prev_pose
        self.min_support = min_support
        self.evaluations = 0
        self._corners = template.bbox.corners()
        self._window = mask_window(template.mask)
        x0, y0, x1, y1 = self._window
        self._tmask_win = np.asarray(template.mask[y0:y1, x0:x1], dtype=bool)
        self._tgray_win = to_gray(template.gray)[y0:y1, x0:x1]
        self._prev_corners = None
        if prev_vis is not None:
            pb = mask_bbox(prev_vis)
            if pb is not None:
                self._prev_corners = Rect(pb[0] - 0.5, pb[1] - 0.5, pb[2] + 0.5, pb[3] + 0.5).corners()

    def _box(self, m: np.ndarray, corners: np.ndarray):
        p = np.c_[corners, np.ones(4)] @ m.T
        w = p[:, 2]
        if not (np.all(w > 0) or np.all(w < 0)):
            return None
        xy = p[:, :2] / w[:, None]
        return xy.min(axis=0), xy.max(axis=0)

    def __call__(self, h: Homography) -> ScoreBreakdown:
        self.evaluations += 1
        fh, fw = self.seg.shape
        box = self._box(h.m, self._corners)
        if box is None:
            return ScoreBreakdown.zero()
        lo, hi = box
        hinv = invert(h).m
        carry = None
        if self.prev_vis is not None and self._prev_corners is not None:
            carry = compose(h, invert(self.prev_pose))
            pbox = self._box(carry.m, self._prev_corners)
            if pbox is None:
                return ScoreBreakdown.zero()
            lo, hi = np.minimum(lo, pbox[0]), np.maximum(hi, pbox[1])
        x0, y0 = max(int(np.floor(lo[0])) - 1, 0), max(int(np.floor(lo[1])) - 1, 0)
        x1, y1 = min(int(np.ceil(hi[0])) + 2, fw), min(int(np.ceil(hi[1])) + 2, fh)
        if x1 <= x0 or y1 <= y0:
            return ScoreBreakdown.zero()

        warped = sample_grid(self.template.mask, hinv, x0, y0, x1, y1)
        seg_roi = self.seg[y0:y1, x0:x1]
        inter = warped & seg_roi
        n_inter, n_warp = int(np.count_nonzero(inter)), int(np.count_nonzero(warped))
        obj = n_inter / self.n_seg if self.n_seg else 0.0
        cover = n_inter / n_warp if n_warp else 0.0

        if self.prev_vis is None:
            carried = warped
        elif carry is None:
            carried = np.zeros_like(warped)
        else:
            carried = sample_grid(self.prev_vis, invert(carry).m, x0, y0, x1, y1)
        union = int(np.count_nonzero(inter | carried))
        occl = np.count_nonzero(inter & carried) / union if union else 1.0

        app = self.appearance(h)
        return ScoreBreakdown.of(obj, cover, float(occl), app)

    def appearance(self, h: Homography) -> float:
        win = self._window
        sup = self._tmask_win & pull_back(self.seg, h, win, linear=False)
        if np.count_nonzero(sup) < self.min_support:
            return NEUTRAL_APPEARANCE
        sampled = pull_back(self.gray, h, win, linear=True)
        return _appearance_value(sampled[sup].astype(float), self._tgray_win[sup], self.min_support)

    def warped_template(self, h: Homography) -> np.ndarray:
        fh, fw = self.seg.shape
        return warp_mask(h, self.template.mask, (fw, fh))
