"""Synthetic two-sided planar object sequences with exact ground truth.

A flat disc (or polygon) carrying an obverse and a reverse texture moves in
front of a fixed pinhole camera. Because the object is planar, the mapping
from texture coordinates to the image is a homography ``G_t``; every frame
is rendered by inverse-warping the textures through it, and the ground-truth
pose of a side is ``G_t @ inv(G_init)`` where ``G_init`` belongs to that
side's initialization frame.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import cv2
import numpy as np
from matplotlib.path import Path as MplPath
from scipy import ndimage
from scipy.spatial.transform import Rotation

from .dataset import MemorySequence, SequenceRecord, load_sequence, write_image, write_init, write_jsonl, write_label_png
from .errors import ConfigError, DegenerateTrajectory, SingularMatrix
from .flow import FlowField, write_flow
from .geometry import Homography, warp_points
from .segmenter import EmbeddingGrid, Label, LabelMask, grid_shape, labels_to_grid


@dataclass
class TextureSpec:
    base: tuple[float, float, float] = (128.0, 128.0, 128.0)
    contrast: float = 40.0
    scale: float = 4.0  # blur sigma of the noise, texture pixels
    seed: int = 0


@dataclass
class Keyframe:
    frame: int
    center: tuple[float, float, float] = (0.0, 0.0, 1000.0)
    rotvec: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass
class OccluderSpec:
    x: float
    y: float
    w: float
    h: float
    start: int = 0
    end: int = 10**9
    vx: float = 0.0
    vy: float = 0.0
    color: tuple[float, float, float] = (90.0, 90.0, 90.0)

    def rect_at(self, t: int) -> tuple[int, int, int, int] | None:
        if not self.start <= t < self.end:
            return None
        x = self.x + self.vx * (t - self.start)
        y = self.y + self.vy * (t - self.start)
        return int(round(x)), int(round(y)), int(round(x + self.w)), int(round(y + self.h))


@dataclass
class SceneSpec:
    width: int = 640
    height: int = 480
    n_frames: int = 50
    focal: float = 800.0
    radius: float = 120.0  # object radius in world units
    outline: str = "ellipse"  # "ellipse" or "polygon"
    ellipse_ratio: float = 1.0
    polygon: list[tuple[float, float]] | None = None  # vertices in [-1, 1]^2
    texture_size: int = 256
    obverse: TextureSpec = field(default_factory=lambda: TextureSpec((200, 160, 60), 45, 4.0, 1))
    reverse: TextureSpec = field(default_factory=lambda: TextureSpec((170, 175, 185), 45, 4.0, 2))
    background: TextureSpec = field(default_factory=lambda: TextureSpec((60, 90, 70), 25, 6.0, 3))
    keyframes: list[Keyframe] = field(default_factory=lambda: [Keyframe(0)])
    occluders: list[OccluderSpec] = field(default_factory=list)
    gain_falloff: float = 0.0
    noise: float = 0.0
    seed: int = 0
    gt_every: int = 5
    dense_gt: bool = False
    write_flow: bool = False
    edge_on_threshold: float = 0.05
    allow_edge_on: bool = True
    obverse_frame: int = 0
    reverse_frame: int | None = None  # None: most frontal unoccluded reverse frame

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["polygon"] is None:
            del d["polygon"]
        if d["reverse_frame"] is None:
            del d["reverse_frame"]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scene keys: {sorted(unknown)}")
        try:
            for key in ("obverse", "reverse", "background"):
                if key in d:
                    d[key] = TextureSpec(**d[key])
            if "keyframes" in d:
                d["keyframes"] = [Keyframe(**k) for k in d["keyframes"]]
            if "occluders" in d:
                d["occluders"] = [OccluderSpec(**o) for o in d["occluders"]]
            spec = cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        spec.validate()
        return spec

    def validate(self) -> None:
        if self.width < 8 or self.height < 8 or self.n_frames < 1:
            raise ConfigError("scene must have at least one 8x8 frame")
        if self.outline not in ("ellipse", "polygon"):
            raise ConfigError(f"unknown outline {self.outline!r}")
        if self.outline == "polygon" and (not self.polygon or len(self.polygon) < 3):
            raise ConfigError("polygon outline needs at least 3 vertices")
        if not self.keyframes:
            raise ConfigError("trajectory needs at least one keyframe")
        if self.gt_every < 1:
            raise ConfigError("gt_every must be >= 1")


@dataclass
class SynthFrameGT:
    index: int
    image: np.ndarray
    labels: np.ndarray  # 0 bg, 1 obverse, 2 reverse; occluded pixels are bg
    side: Label
    full_mask: np.ndarray  # outline without occluders
    plane: np.ndarray  # texture-to-image homography G_t
    cos: float  # signed cosine between plane normal and viewing ray
    edge_on: bool
    homographies: dict[Label, Homography] = field(default_factory=dict)
    flow: FlowField | None = None  # to the next frame

    @property
    def mask(self) -> np.ndarray:
        return self.labels > 0

    @property
    def visibility(self) -> np.ndarray:
        return self.mask

    @property
    def homography(self) -> Homography | None:
        return self.homographies.get(self.side)


@dataclass
class SynthSequence:
    spec: SceneSpec
    frames: list[SynthFrameGT]
    obverse_frame: int
    reverse_frame: int | None
    record: SequenceRecord | None = None

    def gt_frames(self) -> list[int]:
        n = len(self.frames)
        if self.spec.dense_gt:
            return list(range(n))
        idx = set(range(0, n, self.spec.gt_every)) | {self.obverse_frame}
        if self.reverse_frame is not None:
            idx.add(self.reverse_frame)
        return sorted(idx)

    def as_memory(self) -> MemorySequence:
        return MemorySequence(
            "synthetic",
            [f.image for f in self.frames],
            {i: self.frames[i].labels for i in self.gt_frames()},
            self.obverse_frame,
            self.reverse_frame,
            labels={f.index: f.labels for f in self.frames},
            flows={f.index: f.flow for f in self.frames if f.flow is not None},
        )


def make_texture(spec: TextureSpec, shape: tuple[int, int]) -> np.ndarray:
    """Filtered-noise color texture (float, 0-255)."""
    rng = np.random.default_rng(spec.seed)
    lum = ndimage.gaussian_filter(rng.normal(size=shape), spec.scale)
    lum = (lum - lum.mean()) / (lum.std() + 1e-12)
    fine = ndimage.gaussian_filter(rng.normal(size=shape + (3,)), (spec.scale / 2, spec.scale / 2, 0))
    fine = fine / (fine.std() + 1e-12)
    tex = np.asarray(spec.base, float) + spec.contrast * (lum[..., None] + 0.25 * fine)
    return np.clip(tex, 0, 255)


def pose_at(spec: SceneSpec, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Rotation matrix and plane center at frame t (piecewise-linear keyframes)."""
    keys = sorted(spec.keyframes, key=lambda k: k.frame)
    frames = np.array([k.frame for k in keys], float)
    centers = np.array([k.center for k in keys], float)
    rotvecs = np.array([k.rotvec for k in keys], float)
    c = np.array([np.interp(t, frames, centers[:, j]) for j in range(3)])
    r = np.array([np.interp(t, frames, rotvecs[:, j]) for j in range(3)])
    return Rotation.from_rotvec(r).as_matrix(), c


def camera_matrix(spec: SceneSpec) -> np.ndarray:
    return np.array([[spec.focal, 0, (spec.width - 1) / 2],
                     [0, spec.focal, (spec.height - 1) / 2],
                     [0, 0, 1.0]])


def plane_homography(spec: SceneSpec, rot: np.ndarray, center: np.ndarray) -> np.ndarray:
    s = spec.radius / (spec.texture_size / 2)
    c = (spec.texture_size - 1) / 2
    r1, r2 = rot[:, 0], rot[:, 1]
    return camera_matrix(spec) @ np.column_stack([s * r1, s * r2, center - s * c * (r1 + r2)])


def outline_texture_points(spec: SceneSpec, n: int = 360) -> np.ndarray:
    half, c = spec.texture_size / 2, (spec.texture_size - 1) / 2
    if spec.outline == "ellipse":
        a = np.linspace(0, 2 * np.pi, n, endpoint=False)
        return np.stack([c + half * np.cos(a), c + half * spec.ellipse_ratio * np.sin(a)], axis=1)
    return c + half * np.asarray(spec.polygon, float)


def _inside_outline(spec: SceneSpec, q: np.ndarray) -> np.ndarray:
    half, c = spec.texture_size / 2, (spec.texture_size - 1) / 2
    u, v = (q[:, 0] - c) / half, (q[:, 1] - c) / half
    if spec.outline == "ellipse":
        return u * u + (v / spec.ellipse_ratio) ** 2 <= 1.0
    return MplPath(np.asarray(spec.polygon, float)).contains_points(np.stack([u, v], axis=1))


def _outline_mask(spec: SceneSpec, g: np.ndarray, pix: np.ndarray) -> np.ndarray:
    try:
        ginv = np.linalg.inv(g)
    except np.linalg.LinAlgError:
        return np.zeros((spec.height, spec.width), bool)
    with np.errstate(all="ignore"):
        q = warp_points(ginv, pix)
    ok = np.isfinite(q).all(axis=1)
    inside = np.zeros(len(pix), bool)
    inside[ok] = _inside_outline(spec, q[ok])
    return inside.reshape(spec.height, spec.width)


def _occluder_mask(spec: SceneSpec, t: int) -> tuple[np.ndarray, list]:
    occ = np.zeros((spec.height, spec.width), bool)
    rects = []
    for o in spec.occluders:
        r = o.rect_at(t)
        if r is None:
            continue
        x0, y0, x1, y1 = max(r[0], 0), max(r[1], 0), min(r[2], spec.width), min(r[3], spec.height)
        if x1 > x0 and y1 > y0:
            occ[y0:y1, x0:x1] = True
            rects.append((o, (x0, y0, x1, y1)))
    return occ, rects


def _flow_between(spec: SceneSpec, frame_t: "SynthFrameGT", g_next: np.ndarray, t: int) -> FlowField:
    h, w = spec.height, spec.width
    dx, dy = np.zeros((h, w)), np.zeros((h, w))
    ys, xs = np.nonzero(frame_t.full_mask)
    if len(xs):
        pts = np.stack([xs, ys], axis=1).astype(float)
        with np.errstate(all="ignore"):
            moved = warp_points(g_next @ np.linalg.inv(frame_t.plane), pts)
        d = np.nan_to_num(moved - pts)
        dx[ys, xs], dy[ys, xs] = d[:, 0], d[:, 1]
    _, rects = _occluder_mask(spec, t)
    for o, (x0, y0, x1, y1) in rects:
        nxt = o.rect_at(t + 1)
        vx, vy = (o.vx, o.vy) if nxt is not None else (0.0, 0.0)
        dx[y0:y1, x0:x1], dy[y0:y1, x0:x1] = vx, vy
    return FlowField(dx, dy)


def render(spec: SceneSpec) -> SynthSequence:
    """Render all frames in memory."""
    spec.validate()
    size = (spec.texture_size, spec.texture_size)
    tex = {Label.OBVERSE: make_texture(spec.obverse, size).astype(np.float32),
           Label.REVERSE: make_texture(spec.reverse, size).astype(np.float32)}
    background = make_texture(spec.background, (spec.height, spec.width))
    mirror = np.array([[-1, 0, spec.texture_size - 1], [0, 1, 0], [0, 0, 1.0]])
    yy, xx = np.mgrid[0:spec.height, 0:spec.width]
    pix = np.stack([xx.ravel(), yy.ravel()], axis=1).astype(float)
    corners_tex = outline_texture_points(spec, 64)

    frames: list[SynthFrameGT] = []
    for t in range(spec.n_frames):
        rot, center = pose_at(spec, t)
        depth = (rot @ np.c_[corners_tex - (spec.texture_size - 1) / 2, np.zeros(len(corners_tex))].T).T
        depth = center[2] + depth[:, 2] * spec.radius / (spec.texture_size / 2)
        if np.any(depth <= 0):
            raise DegenerateTrajectory(f"frame {t}: object crosses the camera plane")
        g = plane_homography(spec, rot, center)
        cos = float(rot[:, 2] @ center / np.linalg.norm(center))
        edge_on = abs(cos) < spec.edge_on_threshold
        if edge_on and not spec.allow_edge_on:
            raise DegenerateTrajectory(f"frame {t}: edge-on view (|cos| = {abs(cos):.3f})")
        side = Label.OBVERSE if cos > 0 else Label.REVERSE
        full = _outline_mask(spec, g, pix)
        occ, rects = _occluder_mask(spec, t)

        img = background.copy()
        if full.any():
            gs = g if side == Label.OBVERSE else g @ mirror
            obj = cv2.warpPerspective(tex[side], gs, (spec.width, spec.height), flags=cv2.INTER_LINEAR,
                                      borderMode=cv2.BORDER_REPLICATE)
            gain = 1.0 - spec.gain_falloff * (1.0 - abs(cos))
            img[full] = gain * obj[full]
        for o, (x0, y0, x1, y1) in rects:
            img[y0:y1, x0:x1] = o.color
        if spec.noise > 0:
            img = img + np.random.default_rng([spec.seed, t]).normal(0, spec.noise, img.shape)
        labels = np.where(full & ~occ, int(side), 0).astype(np.uint8)
        frames.append(SynthFrameGT(t, np.clip(np.rint(img), 0, 255).astype(np.uint8), labels, side,
                                   full, g, cos, edge_on))

    for t in range(spec.n_frames - 1):
        frames[t].flow = _flow_between(spec, frames[t], frames[t + 1].plane, t)

    obverse = spec.obverse_frame
    if not 0 <= obverse < spec.n_frames or frames[obverse].side != Label.OBVERSE:
        raise DegenerateTrajectory(f"obverse initialization frame {obverse} does not show the obverse")
    if not frames[obverse].mask.any():
        raise DegenerateTrajectory(f"object invisible in obverse initialization frame {obverse}")
    reverse = spec.reverse_frame if spec.reverse_frame is not None else _pick_reverse(frames, spec)
    if reverse is not None and (frames[reverse].side != Label.REVERSE or not frames[reverse].mask.any()):
        raise DegenerateTrajectory(f"reverse initialization frame {reverse} does not show the reverse")

    inits = {Label.OBVERSE: obverse}
    if reverse is not None:
        inits[Label.REVERSE] = reverse
    for side, f in inits.items():
        base_inv = np.linalg.inv(frames[f].plane)
        for fr in frames:
            try:
                fr.homographies[side] = Homography(fr.plane @ base_inv)
            except SingularMatrix:
                pass  # exactly edge-on: no pose exists
    return SynthSequence(spec, frames, obverse, reverse)


def _pick_reverse(frames: list[SynthFrameGT], spec: SceneSpec) -> int | None:
    best, best_cos = None, 0.0
    for f in frames:
        if f.side != Label.REVERSE or f.edge_on:
            continue
        fm = f.full_mask
        if not fm.any() or np.count_nonzero(f.mask) != np.count_nonzero(fm):
            continue  # occluded
        if fm[0].any() or fm[-1].any() or fm[:, 0].any() or fm[:, -1].any():
            continue  # clipped by the image border
        if abs(f.cos) > best_cos:
            best, best_cos = f.index, abs(f.cos)
    return best


def write_sequence(seq: SynthSequence, out_dir: str | Path) -> SequenceRecord:
    out = Path(out_dir)
    for f in seq.frames:
        write_image(out / "frames" / f"{f.index:06d}.png", f.image)
        write_label_png(out / "labels" / f"{f.index:06d}.png", f.labels)
        if seq.spec.write_flow and f.flow is not None:
            write_flow(out / "flow" / f"{f.index:06d}.flo", f.flow)
    for i in seq.gt_frames():
        write_label_png(out / "gt" / f"{i:06d}.png", seq.frames[i].labels)
    write_init(out, seq.obverse_frame, seq.reverse_frame)
    write_jsonl(out / "gt_homographies.jsonl", [
        {"frame": f.index, "side": f.side.name.lower(), "edge_on": f.edge_on, "cos": round(f.cos, 12),
         "H_obverse": f.homographies[Label.OBVERSE].to_list() if Label.OBVERSE in f.homographies else None,
         "H_reverse": f.homographies[Label.REVERSE].to_list() if Label.REVERSE in f.homographies else None}
        for f in seq.frames
    ])
    (out / "scene.json").write_text(json.dumps(seq.spec.to_dict(), indent=2) + "\n")
    seq.record = load_sequence(out)
    return seq.record


def generate(spec: SceneSpec, out_dir: str | Path | None = None) -> SynthSequence:
    """Render a sequence and, when ``out_dir`` is given, write the dataset layout."""
    seq = render(spec)
    if out_dir is not None:
        write_sequence(seq, out_dir)
    return seq



def flip_occlusion_scene(seed: int = 0, n_frames: int = 200, noise: float = 2.0) -> SceneSpec:
    """Benchmark trajectory: out-of-plane rotation through a side flip, then a
    20-frame full occlusion (frames 120-139) while the object keeps moving.

    ``seed`` jitters the keyframes and picks the textures and noise.
    """
    rng = np.random.default_rng(seed)

    def jit(c, r, scale=1.0):
        c = np.asarray(c, float) + np.r_[rng.uniform(-15, 15, 2), 0.0] * scale
        r = np.asarray(r, float) + rng.uniform(-0.08, 0.08, 3) * scale
        return tuple(c.tolist()), tuple(r.tolist())

    raw = [
        (0, (-120, -20, 1000), (0, 0, 0)),
        (50, (-40, 10, 1000), (0.1, 0.9, 0.2)),
        (90, (20, 0, 1000), (0.1, np.pi, 0.3)),
        (120, (60, 10, 1000), (0.2, np.pi + 0.3, 0.3)),
        (160, (100, -10, 1000), (0.2, np.pi + 0.5, 0.1)),
        (n_frames - 1, (40, 20, 1050), (0.3, np.pi + 0.2, 0.4)),
    ]
    keys = [Keyframe(0, (-120.0, -20.0, 1000.0))]
    keys += [Keyframe(f, *jit(c, r)) for f, c, r in raw[1:] if f < n_frames]
    base = 10 * seed
    return SceneSpec(
        n_frames=n_frames, focal=800.0, radius=90.0,
        obverse=TextureSpec((200, 160, 60), 45, 4.0, base + 1),
        reverse=TextureSpec((170, 175, 185), 45, 4.0, base + 2),
        background=TextureSpec((60, 90, 70), 25, 6.0, base + 3),
        keyframes=keys,
        occluders=[OccluderSpec(200, 110, 360, 280, 120, 140)],
        noise=noise, seed=seed,
    )


def high_contrast_scene(seed: int = 0, n_frames: int = 60, noise: float = 2.0) -> SceneSpec:
    """Easy 320x240 scene: saturated faces on a dark background, one slow flip."""
    last = n_frames - 1
    keys = [Keyframe(0, (-40.0, 0.0, 1000.0))]
    if last > 0:
        keys += [Keyframe(last // 2, (0.0, 10.0, 1000.0), (0.2, 1.2, 0.3)),
                 Keyframe(last, (40.0, -10.0, 1000.0), (0.3, np.pi, 0.5))]
    base = 10 * seed
    return SceneSpec(
        width=320, height=240, n_frames=n_frames, focal=800.0, radius=70.0,
        obverse=TextureSpec((230, 70, 40), 30, 3.0, base + 1),
        reverse=TextureSpec((40, 200, 230), 30, 3.0, base + 2),
        background=TextureSpec((40, 60, 45), 15, 6.0, base + 3),
        keyframes=keys, noise=noise, seed=seed,
    )

# ---------------------------------------------------------------- oracle segmentation

@dataclass
class FPBlob:
    x: float
    y: float
    radius: float
    label: int = int(Label.OBVERSE)
    start: int = 0
    end: int = 10**9


@dataclass
class Corruption:
    fp_blobs: list[FPBlob] = field(default_factory=list)
    hole_pixels: int = 0
    holes: list[tuple[float, float, float]] = field(default_factory=list)  # fixed (x, y, r) discs
    erode_px: int = 0
    seed: int = 0

    @property
    def is_zero(self) -> bool:
        return not (self.fp_blobs or self.hole_pixels or self.holes or self.erode_px)


def _disc(shape: tuple[int, int], x: float, y: float, r: float) -> np.ndarray:
    yy, xx = np.ogrid[0:shape[0], 0:shape[1]]
    return (xx - x) ** 2 + (yy - y) ** 2 <= r * r


def corrupt_labels(labels: np.ndarray, corruption: Corruption | None, frame_index: int = 0) -> np.ndarray:
    out = np.array(labels, dtype=np.uint8, copy=True)
    if corruption is None or corruption.is_zero:
        return out
    if corruption.erode_px > 0:
        keep = ndimage.binary_erosion(out > 0, np.ones((3, 3), bool), iterations=corruption.erode_px)
        out[~keep] = 0
    for x, y, r in corruption.holes:
        out[_disc(out.shape, x, y, r) & (out > 0)] = 0
    if corruption.hole_pixels > 0:
        obj = out > 0
        interior = ndimage.binary_erosion(obj, np.ones((3, 3), bool), border_value=0)
        ys, xs = np.nonzero(interior)
        n = min(corruption.hole_pixels, len(xs))
        pick = np.random.default_rng([corruption.seed, frame_index]).choice(len(xs), size=n, replace=False)
        out[ys[pick], xs[pick]] = 0
    for b in corruption.fp_blobs:
        if b.start <= frame_index < b.end:
            out[_disc(out.shape, b.x, b.y, b.radius) & (np.asarray(labels) == 0)] = b.label
    return out


def oracle_segmenter(gt: SynthFrameGT | np.ndarray, corruption: Corruption | None = None,
                     frame_index: int | None = None) -> LabelMask:
    """Ground-truth labels, optionally corrupted, as a full-resolution LabelMask."""
    labels = gt.labels if isinstance(gt, SynthFrameGT) else np.asarray(gt)
    if frame_index is None:
        frame_index = gt.index if isinstance(gt, SynthFrameGT) else 0
    out = corrupt_labels(labels, corruption, frame_index)
    return LabelMask(out, np.ones(out.shape), 1)


class OracleBackend:
    """Embedding backend that encodes (possibly corrupted) ground-truth labels.

    Each cell gets ``10 * onehot(label)`` plus a fourth coordinate set to 3
    on corrupted cells, plus a small deterministic jitter. Cells of the same
    true class are therefore near each other, and a corrupted cell starts out
    nearest to the class it was corrupted to until examples of its own
    corrupted cluster are added to the index.
    """

    name = "oracle"
    dim = 4

    def __init__(self, label_source, stride: int = 4, corruption: Corruption | None = None,
                 jitter: float = 0.05, seed: int = 0):
        self.label_source = label_source
        self.stride = stride
        self.corruption = corruption
        self.jitter = jitter
        self.seed = seed

    def fit(self, frames) -> None:
        return None

    def extract(self, frame: np.ndarray, frame_index: int | None = None) -> EmbeddingGrid:
        if frame_index is None:
            raise ValueError("oracle backend needs the frame index")
        truth = np.asarray(self.label_source(frame_index), dtype=np.uint8)
        seen = corrupt_labels(truth, self.corruption, frame_index)
        gt_grid = labels_to_grid(truth, self.stride)
        seen_grid = labels_to_grid(seen, self.stride)
        gh, gw = grid_shape(truth.shape, self.stride)
        emb = np.zeros((gh, gw, 4))
        emb[np.arange(gh)[:, None], np.arange(gw)[None, :], seen_grid] = 10.0
        emb[..., 3] = np.where(seen_grid != gt_grid, 3.0, 0.0)
        emb += np.random.default_rng([self.seed, frame_index]).normal(0, self.jitter, emb.shape)
        return EmbeddingGrid(emb, self.stride)
