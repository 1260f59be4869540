"""Planar homographies: estimation from four correspondences, composition,
point and mask warping, and control-point perturbation sampling.

Pixel convention used throughout the package: pixel ``(x, y)`` has its center
at integer coordinates and is stored at ``mask[y, x]``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import cv2
import numpy as np

from .errors import DegenerateConfiguration, PointAtInfinity, SingularMatrix

DET_EPS = 1e-12
W_EPS = 1e-12
COLLINEAR_EPS = 1e-6
PERTURB_RETRIES = 16


class Point2(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle given by its extreme corner coordinates."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise DegenerateConfiguration(f"degenerate rectangle {self}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def center(self) -> Point2:
        return Point2((self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2)

    def corners(self) -> np.ndarray:
        """Corners in clockwise image order: top-left, top-right, bottom-right, bottom-left."""
        return np.array(
            [[self.x0, self.y0], [self.x1, self.y0], [self.x1, self.y1], [self.x0, self.y1]],
            dtype=float,
        )

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "Rect":
        """Bounding box of the set pixels, extended by half a pixel on each side."""
        ys, xs = np.nonzero(mask)
        if len(xs) == 0:
            raise DegenerateConfiguration("bounding box of an empty mask")
        return cls(xs.min() - 0.5, ys.min() - 0.5, xs.max() + 0.5, ys.max() + 0.5)


def _normalize(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if abs(m[2, 2]) > DET_EPS:
        return m / m[2, 2]
    m = m / np.linalg.norm(m)
    flat = m.ravel()
    first = flat[np.flatnonzero(np.abs(flat) > 0)[0]]
    return m if first > 0 else -m


class Homography:
    """Immutable 3x3 projective map, kept in canonical normalized form."""

    __slots__ = ("_m",)

    def __init__(self, m):
        m = np.array(m, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(m)):
            raise SingularMatrix("non-finite homography entries")
        if np.linalg.norm(m) == 0:
            raise SingularMatrix("zero matrix")
        m = _normalize(m)
        if abs(np.linalg.det(m)) <= DET_EPS:
            raise SingularMatrix(f"determinant {np.linalg.det(m):.3g} below {DET_EPS}")
        m.flags.writeable = False
        self._m = m

    @property
    def m(self) -> np.ndarray:
        return self._m

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls([[1, 0, tx], [0, 1, ty], [0, 0, 1]])

    @classmethod
    def scaling(cls, sx: float, sy: float | None = None) -> "Homography":
        return cls(np.diag([sx, sx if sy is None else sy, 1.0]))

    @classmethod
    def similarity(cls, scale: float, angle: float, tx: float, ty: float) -> "Homography":
        c, s = scale * np.cos(angle), scale * np.sin(angle)
        return cls([[c, -s, tx], [s, c, ty], [0, 0, 1]])

    def to_list(self) -> list[float]:
        """Row-major 9-vector, the JSON serialization form."""
        return [float(v) for v in self._m.ravel()]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Homography":
        if len(values) != 9:
            raise ValueError(f"expected 9 numbers, got {len(values)}")
        return cls(np.asarray(values, dtype=float).reshape(3, 3))

    def allclose(self, other: "Homography", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self._m, other._m, atol=atol, rtol=0))

    def __repr__(self):
        rows = "; ".join(" ".join(f"{v:.6g}" for v in row) for row in self._m)
        return f"Homography([{rows}])"


_TRIPLES = np.array(list(itertools.combinations(range(4), 3)))


def _check_no_three_collinear(pts: np.ndarray, what: str) -> None:
    scale = max(np.max(np.ptp(pts, axis=0)), 1e-300)
    trip = _TRIPLES if len(pts) == 4 else np.array(list(itertools.combinations(range(len(pts)), 3)))
    u = pts[trip[:, 1]] - pts[trip[:, 0]]
    v = pts[trip[:, 2]] - pts[trip[:, 0]]
    if np.any(np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]) <= COLLINEAR_EPS * scale * scale):
        raise DegenerateConfiguration(f"three collinear {what} points")


def _hartley(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    d = np.mean(np.linalg.norm(pts - c, axis=1))
    s = np.sqrt(2) / d
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1]])


def homography_from_correspondences(src, dst) -> Homography:
    """Exact homography mapping four source points onto four target points.

    Both point sets are Hartley-normalized before the 8x9 DLT system is solved
    through its null space, which also covers maps whose bottom-right entry is 0.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    if src.shape != (4, 2) or dst.shape != (4, 2):
        raise DegenerateConfiguration("exactly four correspondences are required")
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise DegenerateConfiguration("non-finite correspondence coordinates")
    _check_no_three_collinear(src, "source")
    _check_no_three_collinear(dst, "target")

    t_src, t_dst = _hartley(src), _hartley(dst)
    s = src @ t_src[:2, :2].T + t_src[:2, 2]
    d = dst @ t_dst[:2, :2].T + t_dst[:2, 2]
    x, y, u, v = s[:, 0], s[:, 1], d[:, 0], d[:, 1]
    one, zero = np.ones(4), np.zeros(4)
    a = np.empty((8, 9))
    a[0::2] = np.stack([x, y, one, zero, zero, zero, -u * x, -u * y, -u], axis=1)
    a[1::2] = np.stack([zero, zero, zero, x, y, one, -v * x, -v * y, -v], axis=1)
    _, _, vt = np.linalg.svd(a)
    hn = vt[-1].reshape(3, 3)
    try:
        return Homography(np.linalg.inv(t_dst) @ hn @ t_src)
    except SingularMatrix as exc:
        raise DegenerateConfiguration(str(exc)) from exc


def compose(a: Homography, b: Homography) -> Homography:
    """Map applying ``b`` first, then ``a``."""
    return Homography(a.m @ b.m)


def invert(h: Homography) -> Homography:
    try:
        return Homography(np.linalg.inv(h.m))
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix(str(exc)) from exc


def warp_points(h: Homography | np.ndarray, pts) -> np.ndarray:
    """Apply ``h`` to an (N, 2) array. Points at infinity come back as NaN."""
    m = h.m if isinstance(h, Homography) else np.asarray(h)
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    x = pts[:, 0] * m[0, 0] + pts[:, 1] * m[0, 1] + m[0, 2]
    y = pts[:, 0] * m[1, 0] + pts[:, 1] * m[1, 1] + m[1, 2]
    w = pts[:, 0] * m[2, 0] + pts[:, 1] * m[2, 1] + m[2, 2]
    bad = np.abs(w) < W_EPS
    w = np.where(bad, np.nan, w)
    return np.stack([x / w, y / w], axis=1)


def warp_point(h: Homography, p) -> Point2:
    x, y = float(p[0]), float(p[1])
    m = h.m
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if abs(w) < W_EPS:
        raise PointAtInfinity(f"point ({x}, {y}) maps to infinity")
    return Point2((m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w, (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w)


def sample_nearest(mask: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Nearest-pixel lookup of (N, 2) float coordinates; outside / NaN -> False."""
    h, w = mask.shape
    with np.errstate(invalid="ignore"):
        ix = np.floor(coords[:, 0] + 0.5)
        iy = np.floor(coords[:, 1] + 0.5)
        ok = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    out = np.zeros(len(coords), dtype=bool)
    out[ok] = mask[iy[ok].astype(np.intp), ix[ok].astype(np.intp)]
    return out


def sample_grid(mask: np.ndarray, m: np.ndarray, x0: int, y0: int, x1: int, y1: int) -> np.ndarray:
    """Nearest-pixel lookup of ``mask`` at ``m`` applied to every pixel center
    of the target window [x0, x1) x [y0, y1); lookups outside the mask are False.

    Runs through OpenCV's inverse-map warp. It rounds to the nearest source
    pixel like ``sample_nearest`` and may differ from it only for centers
    landing within floating-point noise of a pixel edge.
    """
    src = mask.view(np.uint8) if mask.dtype == bool and mask.flags.c_contiguous else np.ascontiguousarray(mask, np.uint8)
    shift = np.array([[1.0, 0, x0], [0, 1, y0], [0, 0, 1]])
    out = cv2.warpPerspective(src, np.asarray(m, float) @ shift, (x1 - x0, y1 - y0),
                              flags=cv2.INTER_NEAREST | cv2.WARP_INVERSE_MAP,
                              borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    return out.astype(bool)


def warp_mask(h: Homography, mask: np.ndarray, target_size: tuple[int, int]) -> np.ndarray:
    """Backward nearest-neighbor warp of a boolean mask.

    ``target_size`` is ``(width, height)``. A target pixel is set iff its center,
    pulled back through ``h``, lands in a set source pixel.
    """
    tw, th = target_size
    return sample_grid(mask, invert(h).m, 0, 0, tw, th)


def is_convex_quad(pts: np.ndarray) -> bool:
    """True if the 4-point polygon is strictly convex (no fold-over)."""
    pts = np.asarray(pts, dtype=float)
    if not np.all(np.isfinite(pts)):
        return False
    e = np.roll(pts, -1, axis=0) - pts
    cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
    return bool(np.all(cross > 0) or np.all(cross < 0))


def perturb_control_points(
    bbox: Rect, sigma: float, rng: np.random.Generator, max_retries: int = PERTURB_RETRIES
) -> Homography:
    """Homography moving the bbox corners by i.i.d. N(0, sigma^2) per axis."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    corners = bbox.corners()
    if sigma == 0:
        return homography_from_correspondences(corners, corners)
    for _ in range(max_retries):
        moved = corners + rng.normal(0.0, sigma, size=corners.shape)
        if not is_convex_quad(moved):
            continue
        try:
            return homography_from_correspondences(corners, moved)
        except DegenerateConfiguration:
            continue
    raise DegenerateConfiguration(f"no valid perturbation after {max_retries} draws")


def corner_error(a: Homography, b: Homography, corners) -> float:
    """Maximum distance between the images of ``corners`` under two maps."""
    return float(np.max(np.linalg.norm(warp_points(a, corners) - warp_points(b, corners), axis=1)))
