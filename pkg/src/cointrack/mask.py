"""Binary mask geometry: IoU, components, holes, boundary distance and the
minimum-area rotated rectangle with its aspect-ratio statistics.

Masks are plain boolean ``(height, width)`` numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateRect, DimensionMismatch, EmptyMask
from .geometry import Point2

EIGHT = np.ones((3, 3), dtype=bool)
FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class RotatedRect:
    center: Point2
    side_a: float
    side_b: float
    angle: float  # direction of side_a, radians in [0, pi)

    def __post_init__(self):
        if not self.side_a >= self.side_b >= 0:
            raise ValueError(f"expected side_a >= side_b >= 0, got {self.side_a}, {self.side_b}")

    @property
    def area(self) -> float:
        return self.side_a * self.side_b


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union; two empty masks count as a perfect match."""
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    _same_shape(a, b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def connected_components(m: np.ndarray) -> list[np.ndarray]:
    """8-connected components, largest first, ties broken by scanline order."""
    labels, n = ndimage.label(np.asarray(m, dtype=bool), structure=EIGHT)
    if n == 0:
        return []
    flat = labels.ravel()
    sizes = np.bincount(flat, minlength=n + 1)[1:]
    nz = np.flatnonzero(flat)
    first = np.full(n, flat.size, dtype=np.int64)
    np.minimum.at(first, flat[nz] - 1, nz)
    order = sorted(range(n), key=lambda i: (-sizes[i], first[i]))
    return [labels == i + 1 for i in order]


def holes(m: np.ndarray) -> np.ndarray:
    """Unset pixels that cannot reach the image border through unset pixels."""
    m = np.asarray(m, dtype=bool)
    bg, n = ndimage.label(~m, structure=EIGHT)
    if n == 0:
        return np.zeros_like(m)
    border = np.unique(np.concatenate([bg[0], bg[-1], bg[:, 0], bg[:, -1]]))
    outside = np.isin(bg, border[border > 0])
    return (bg > 0) & ~outside


def boundary_pixels(m: np.ndarray) -> np.ndarray:
    """Set pixels with an unset 4-neighbor inside the image."""
    m = np.asarray(m, dtype=bool)
    inner = ndimage.binary_erosion(m, structure=FOUR, border_value=1)
    return m & ~inner


def boundary_distance(m: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance from every pixel to the nearest boundary pixel.

    Masks without both set and unset pixels have no boundary; every entry is
    then ``inf``.
    """
    m = np.asarray(m, dtype=bool)
    if m.all() or not m.any():
        return np.full(m.shape, np.inf)
    return ndimage.distance_transform_edt(~boundary_pixels(m))


def _hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull, counter-clockwise, collinear points dropped."""
    pts = np.unique(points, axis=0)
    if len(pts) <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def half(seq):
        out: list = []
        for p in seq:
            while len(out) >= 2:
                o, a = out[-2], out[-1]
                if (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0]) > 0:
                    break
                out.pop()
            out.append(p)
        return out

    lower, upper = half(pts), half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def _outline_points(m: np.ndarray) -> np.ndarray:
    # the leftmost and rightmost pixel of each row already carry the hull
    ys, xs = np.nonzero(m)
    rows = np.unique(ys)
    lo = ndimage.minimum(xs, ys, rows)
    hi = ndimage.maximum(xs, ys, rows)
    return np.concatenate(
        [np.stack([lo, rows], axis=1), np.stack([hi, rows], axis=1)]
    ).astype(float)


def min_rotated_rect(m: np.ndarray) -> RotatedRect:
    """Minimum-area rectangle enclosing the centers of the set pixels.

    Uses the convex hull and evaluates the rectangle flush with each hull edge
    (rotating calipers); the optimum always has a side collinear with an edge.
    """
    m = np.asarray(m, dtype=bool)
    if not m.any():
        raise EmptyMask("min_rotated_rect of an empty mask")
    hull = _hull(_outline_points(m))
    if len(hull) == 1:
        return RotatedRect(Point2(*hull[0]), 0.0, 0.0, 0.0)
    if len(hull) == 2:
        d = hull[1] - hull[0]
        c = hull.mean(axis=0)
        return RotatedRect(Point2(*c), float(np.hypot(*d)), 0.0, math.atan2(d[1], d[0]) % math.pi)

    edges = np.roll(hull, -1, axis=0) - hull
    edges /= np.linalg.norm(edges, axis=1, keepdims=True)
    normals = np.stack([-edges[:, 1], edges[:, 0]], axis=1)
    pu = hull @ edges.T  # (points, edges)
    pv = hull @ normals.T
    u0, u1 = pu.min(axis=0), pu.max(axis=0)
    v0, v1 = pv.min(axis=0), pv.max(axis=0)
    areas = (u1 - u0) * (v1 - v0)
    i = int(np.argmin(areas))
    du, dv = u1[i] - u0[i], v1[i] - v0[i]
    center = edges[i] * (u0[i] + u1[i]) / 2 + normals[i] * (v0[i] + v1[i]) / 2
    if du >= dv:
        a, b, direction = du, dv, edges[i]
    else:
        a, b, direction = dv, du, normals[i]
    angle = math.atan2(direction[1], direction[0]) % math.pi
    return RotatedRect(Point2(float(center[0]), float(center[1])), float(a), float(b), angle)


def aspect_ratio(r: RotatedRect | tuple[float, float]) -> float:
    """``max(a/b, b/a)`` for a rectangle or a bare pair of side lengths."""
    a, b = (r.side_a, r.side_b) if isinstance(r, RotatedRect) else r
    if a <= 0 or b <= 0:
        raise DegenerateRect(f"aspect ratio of a rectangle with sides {a}, {b}")
    return max(a / b, b / a)


def aspect_ratio_change(a, b) -> float:
    ra, rb = aspect_ratio(a), aspect_ratio(b)
    return max(ra / rb, rb / ra)


def bbox(m: np.ndarray) -> tuple[int, int, int, int] | None:
    """Inclusive integer bounding box ``(x0, y0, x1, y1)`` or None when empty."""
    ys = np.flatnonzero(m.any(axis=1))
    if len(ys) == 0:
        return None
    xs = np.flatnonzero(m.any(axis=0))
    return int(xs[0]), int(ys[0]), int(xs[-1]), int(ys[-1])
