"""Optical-flow providers: binary flow files, a built-in translational estimator
and ground-truth flow from synthetic sequences.

Flow file layout (little endian)::

    bytes 0-3   magic b"CTFL"
    uint32      width
    uint32      height
    float32     dx plane, height x width, row-major
    float32     dy plane, height x width, row-major
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import DatasetError

MAGIC = b"CTFL"


@dataclass
class FlowField:
    """Per-pixel displacement from frame t-1 to frame t."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        if self.dx.shape != self.dy.shape:
            raise ValueError("dx and dy planes differ in shape")
        if not (np.all(np.isfinite(self.dx)) and np.all(np.isfinite(self.dy))):
            raise ValueError("flow contains non-finite values")

    @classmethod
    def constant(cls, shape: tuple[int, int], dx: float, dy: float) -> "FlowField":
        return cls(np.full(shape, float(dx)), np.full(shape, float(dy)))

    def at(self, pts: np.ndarray) -> np.ndarray:
        """Flow vectors at (N, 2) pixel coordinates (nearest pixel, clamped)."""
        h, w = self.dx.shape
        ix = np.clip(np.floor(pts[:, 0] + 0.5).astype(np.intp), 0, w - 1)
        iy = np.clip(np.floor(pts[:, 1] + 0.5).astype(np.intp), 0, h - 1)
        return np.stack([self.dx[iy, ix], self.dy[iy, ix]], axis=1)


def write_flow(path: str | Path, flow: FlowField) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h, w = flow.dx.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", w, h))
        fh.write(flow.dx.astype("<f4").tobytes())
        fh.write(flow.dy.astype("<f4").tobytes())


def read_flow(path: str | Path) -> FlowField:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC or len(raw) < 12:
        raise DatasetError(f"{path} is not a flow file")
    w, h = struct.unpack("<II", raw[4:12])
    n = w * h * 4
    if len(raw) != 12 + 2 * n:
        raise DatasetError(f"{path}: expected {12 + 2 * n} bytes, found {len(raw)}")
    dx = np.frombuffer(raw[12:12 + n], dtype="<f4").reshape(h, w).astype(float)
    dy = np.frombuffer(raw[12 + n:], dtype="<f4").reshape(h, w).astype(float)
    return FlowField(dx, dy)


def _masked_zncc_search(prev: np.ndarray, cur: np.ndarray, mask: np.ndarray,
                        center: tuple[int, int], radius: int) -> tuple[int, int, float]:
    ys, xs = np.nonzero(mask)
    a = prev[ys, xs]
    a = a - a.mean()
    na = np.sqrt(a @ a)
    h, w = cur.shape
    best = (center[0], center[1], -np.inf)
    if na < 1e-9:
        return best
    for dy in range(center[1] - radius, center[1] + radius + 1):
        yy = ys + dy
        if yy.min() < 0 or yy.max() >= h:
            continue
        for dx in range(center[0] - radius, center[0] + radius + 1):
            xx = xs + dx
            if xx.min() < 0 or xx.max() >= w:
                continue
            b = cur[yy, xx]
            b = b - b.mean()
            nb = np.sqrt(b @ b)
            if nb < 1e-9:
                continue
            r = (a @ b) / (na * nb)
            if r > best[2]:
                best = (dx, dy, r)
    return best


def estimate_translation(prev_gray: np.ndarray, cur_gray: np.ndarray, mask: np.ndarray,
                         window: int = 32, coarse: int = 4) -> tuple[int, int]:
    """Integer displacement maximizing ZNCC of the masked region within +-window px.

    Searched coarse-to-fine: the full window on a 1/coarse pyramid level, then
    a +-coarse refinement at full resolution.
    """
    if not mask.any():
        return 0, 0
    small = lambda im: cv2.resize(im.astype(np.float32), None, fx=1 / coarse, fy=1 / coarse,
                                  interpolation=cv2.INTER_AREA)
    m_small = cv2.resize(mask.astype(np.uint8), (small(prev_gray).shape[1], small(prev_gray).shape[0]),
                         interpolation=cv2.INTER_NEAREST).astype(bool)
    if m_small.sum() >= 4:
        dx, dy, _ = _masked_zncc_search(small(prev_gray), small(cur_gray), m_small, (0, 0), -(-window // coarse))
        dx, dy = dx * coarse, dy * coarse
    else:
        dx, dy = 0, 0
    dx, dy, _ = _masked_zncc_search(prev_gray, cur_gray, mask, (dx, dy), coarse)
    return int(np.clip(dx, -window, window)), int(np.clip(dy, -window, window))


def translational_flow(prev_gray: np.ndarray, cur_gray: np.ndarray, mask: np.ndarray,
                       window: int = 32) -> FlowField:
    dx, dy = estimate_translation(prev_gray, cur_gray, mask, window)
    return FlowField.constant(prev_gray.shape, dx, dy)
