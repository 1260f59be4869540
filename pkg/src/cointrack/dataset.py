"""On-disk dataset layout, PNG mask conventions and tracker result records.

Sequence directory::

    frames/000000.png ...       RGB frames (png or jpg)
    gt/000000.png ...           sparse label masks: 0 bg, 128 obverse, 255 reverse
    init.json                   {"obverse_frame": int, "reverse_frame": int | null}
    labels/000000.png ...       dense labels (synthetic sequences only)
    flow/000000.flo ...         optional flow from frame i to i + 1
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import DatasetError, MissingFrame

LABEL_TO_PNG = np.array([0, 128, 255], dtype=np.uint8)
FRAME_RE = re.compile(r"^(\d+)\.(png|jpg|jpeg)$", re.IGNORECASE)


def read_image(path: str | Path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise DatasetError(f"cannot read image {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def write_image(path: str | Path, rgb: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    bgr = cv2.cvtColor(np.ascontiguousarray(rgb, dtype=np.uint8), cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), bgr):
        raise DatasetError(f"cannot write image {path}")


def read_label_png(path: str | Path) -> np.ndarray:
    """Label image (0 background, 1 obverse, 2 reverse) from the 0/128/255 PNG encoding."""
    raw = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if raw is None:
        raise DatasetError(f"cannot read mask {path}")
    out = np.zeros(raw.shape, np.uint8)
    out[raw >= 64] = 1
    out[raw >= 192] = 2
    return out


def write_label_png(path: str | Path, labels: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), LABEL_TO_PNG[np.asarray(labels, dtype=np.uint8)]):
        raise DatasetError(f"cannot write mask {path}")


def write_binary_png(path: str | Path, mask: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cv2.imwrite(str(path), np.where(mask, 255, 0).astype(np.uint8))


def read_binary_png(path: str | Path) -> np.ndarray:
    return read_label_png(path) > 0


def _indexed(directory: Path) -> dict[int, Path]:
    out: dict[int, Path] = {}
    if directory.is_dir():
        for p in sorted(directory.iterdir()):
            m = FRAME_RE.match(p.name)
            if m:
                out[int(m.group(1))] = p
    return out


@dataclass
class SequenceRecord:
    name: str
    frame_paths: list[Path]
    gt_paths: dict[int, Path]
    obverse_frame: int = 0
    reverse_frame: int | None = None
    label_paths: dict[int, Path] = field(default_factory=dict)
    flow_paths: dict[int, Path] = field(default_factory=dict)
    root: Path | None = None

    def __len__(self) -> int:
        return len(self.frame_paths)

    def load_frame(self, i: int) -> np.ndarray:
        if not 0 <= i < len(self.frame_paths):
            raise MissingFrame(f"frame {i} not in sequence {self.name}")
        return read_image(self.frame_paths[i])

    def load_gt(self, i: int) -> np.ndarray:
        if i not in self.gt_paths:
            raise MissingFrame(f"no ground truth for frame {i} in {self.name}")
        return read_label_png(self.gt_paths[i])

    def gt_masks(self) -> dict[int, np.ndarray]:
        return {i: self.load_gt(i) > 0 for i in sorted(self.gt_paths)}

    def load_labels(self, i: int) -> np.ndarray:
        if i not in self.label_paths:
            raise MissingFrame(f"no dense labels for frame {i} in {self.name}")
        return read_label_png(self.label_paths[i])


class MemorySequence(SequenceRecord):
    """SequenceRecord backed by in-memory arrays (tests and scripts)."""

    def __init__(self, name, frames, gt, obverse_frame=0, reverse_frame=None, labels=None, flows=None):
        super().__init__(name, [Path(f"{i:06d}") for i in range(len(frames))],
                         {i: Path(f"{i:06d}") for i in gt}, obverse_frame, reverse_frame,
                         {i: Path(f"{i:06d}") for i in (labels or {})})
        self._frames, self._gt, self._labels = frames, gt, labels or {}
        self.flows = flows or {}

    def load_frame(self, i):
        if not 0 <= i < len(self._frames):
            raise MissingFrame(f"frame {i} not in sequence {self.name}")
        return self._frames[i]

    def load_gt(self, i):
        if i not in self._gt:
            raise MissingFrame(f"no ground truth for frame {i} in {self.name}")
        return self._gt[i]

    def load_labels(self, i):
        if i not in self._labels:
            raise MissingFrame(f"no dense labels for frame {i} in {self.name}")
        return self._labels[i]


def load_sequence(seq_dir: str | Path) -> SequenceRecord:
    seq_dir = Path(seq_dir)
    init_path = seq_dir / "init.json"
    if not init_path.is_file():
        raise DatasetError(f"missing {init_path}")
    try:
        init = json.loads(init_path.read_text())
        obverse = int(init["obverse_frame"])
        reverse = init.get("reverse_frame")
        reverse = None if reverse is None else int(reverse)
    except (ValueError, KeyError, TypeError) as exc:
        raise DatasetError(f"malformed {init_path}: {exc}") from exc
    frames = _indexed(seq_dir / "frames")
    if not frames:
        raise DatasetError(f"no frames under {seq_dir / 'frames'}")
    n = max(frames) + 1
    if sorted(frames) != list(range(n)):
        raise DatasetError(f"frame numbering in {seq_dir / 'frames'} has gaps")
    gt = _indexed(seq_dir / "gt")
    for i in (obverse, reverse):
        if i is not None and i not in gt:
            raise DatasetError(f"initialization frame {i} has no ground-truth mask")
    flows = {int(p.stem): p for p in sorted((seq_dir / "flow").glob("*.flo"))} if (seq_dir / "flow").is_dir() else {}
    return SequenceRecord(seq_dir.name, [frames[i] for i in range(n)], gt, obverse, reverse,
                          _indexed(seq_dir / "labels"), flows, seq_dir)


def find_sequences(root: str | Path) -> list[Path]:
    """``root`` itself if it is a sequence, else its sequence subdirectories."""
    root = Path(root)
    if (root / "init.json").is_file():
        return [root]
    if not root.is_dir():
        raise DatasetError(f"{root} is not a directory")
    return sorted(p for p in root.iterdir() if (p / "init.json").is_file())


def write_init(seq_dir: str | Path, obverse_frame: int, reverse_frame: int | None) -> None:
    Path(seq_dir).mkdir(parents=True, exist_ok=True)
    (Path(seq_dir) / "init.json").write_text(
        json.dumps({"obverse_frame": obverse_frame, "reverse_frame": reverse_frame}, indent=2) + "\n"
    )


def read_results(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"missing results file {path}")
    records = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    return sorted(records, key=lambda r: r["frame"])


def write_jsonl(path: str | Path, records: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
