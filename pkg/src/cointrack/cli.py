"""``cointrack`` command line: track, eval, stats, synth, overlay.

Exit codes: 0 ok, 2 usage or configuration error, 3 data error, 4 internal error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import cv2
import numpy as np

from . import config as cfgmod
from .dataset import (
    find_sequences,
    load_sequence,
    read_image,
    read_label_png,
    read_results,
    write_image,
    write_jsonl,
    write_label_png,
)
from .errors import CoinTrackError, ConfigError, DatasetError, InsufficientData, MissingFrame
from .evalkit import (
    HistogramSpec,
    SequenceReport,
    ar_change_speed,
    ar_change_vs_first,
    evaluate_records,
    plot_histogram,
    plot_textureness,
    safe_ar,
    sequence_textureness,
    write_histogram_csv,
    write_report_csv,
)
from .geometry import Homography, warp_mask
from .segmenter import Label
from .synth import SceneSpec, flip_occlusion_scene, generate, high_contrast_scene
from .tracker import run_sequence

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4
DATA_ERRORS = (DatasetError, MissingFrame, InsufficientData, FileNotFoundError)


class UsageError(Exception):
    pass


def _resolve(root: Path, p: str | Path) -> Path:
    p = Path(p)
    return p if p.is_absolute() else root / p


def _load_config(args) -> cfgmod.Config:
    cfg = cfgmod.load(_resolve(args.root, args.config) if getattr(args, "config", None) else None)
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    return cfgmod.apply_overrides(cfg, overrides) if overrides else cfg


# ---------------------------------------------------------------- track

def track_one(seq_dir: Path, out_dir: Path, cfg: cfgmod.Config) -> int:
    """Track one sequence directory; writes ``results.jsonl`` and ``masks/``."""
    seq = load_sequence(seq_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []

    def emit(res):
        rel = f"masks/{res.frame_index:06d}.png"
        write_label_png(out_dir / rel, res.mask.labels)
        records.append(res.record(rel))

    run_sequence(seq, cfg.make_backend(seq), cfg.tracker_config(), cfg.seed, callback=emit)
    write_jsonl(out_dir / "results.jsonl", records)
    return len(records)


def _track_job(item):
    seq_dir, out_dir, text = item
    return track_one(Path(seq_dir), Path(out_dir), cfgmod.parse(text))


def cmd_track(args) -> int:
    if args.test_mode and args.seed is None:
        raise UsageError("--seed is required for track in test mode")
    cfg = _load_config(args)
    dataset = _resolve(args.root, args.sequence)
    seqs = find_sequences(dataset)
    if not seqs:
        raise DatasetError(f"no sequences (init.json) found under {dataset}")
    out = _resolve(args.root, args.out)
    single = len(seqs) == 1 and seqs[0] == dataset
    jobs = [(str(s), str(out if single else out / s.name), cfgmod.dumps(cfg)) for s in seqs]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            counts = list(pool.map(_track_job, jobs))
    else:
        counts = [_track_job(j) for j in jobs]
    for (s, o, _), n in zip(jobs, counts):
        print(f"{Path(s).name}: {n} frames -> {o}")
    return EXIT_OK


# ---------------------------------------------------------------- eval

def _results_dir_for(results: Path, name: str, single: bool) -> Path:
    if (results / name / "results.jsonl").is_file():
        return results / name
    if single and (results / "results.jsonl").is_file():
        return results
    raise DatasetError(f"no results.jsonl for sequence {name} under {results}")


def evaluate_sequence(seq_dir: Path, res_dir: Path) -> SequenceReport:
    seq = load_sequence(seq_dir)
    records = read_results(res_dir / "results.jsonl")
    if not records:
        raise DatasetError(f"{res_dir / 'results.jsonl'} holds no records")
    by_frame = {r["frame"]: r for r in records}

    def mask(i):
        if i not in by_frame:
            raise MissingFrame(f"{seq.name}: no result for frame {i}")
        p = by_frame[i].get("mask_path")
        if p is None:
            return np.zeros(seq.load_gt(i).shape, bool)
        return read_label_png(res_dir / p) > 0

    return evaluate_records(seq.name, records, mask, seq.gt_masks())


def cmd_eval(args) -> int:
    results = _resolve(args.root, args.results)
    dataset = _resolve(args.root, args.dataset)
    if not results.is_dir() or not any(results.iterdir()):
        raise DatasetError(f"results directory {results} is empty or missing")
    seqs = find_sequences(dataset)
    if not seqs:
        raise DatasetError(f"no sequences found under {dataset}")
    single = len(seqs) == 1
    reports = [evaluate_sequence(s, _results_dir_for(results, s.name, single)) for s in seqs]
    out = _resolve(args.root, args.out) if args.out else results / "eval.csv"
    write_report_csv(out, reports)
    print(out.read_text(), end="")
    return EXIT_OK


# ---------------------------------------------------------------- stats

def cmd_stats(args) -> int:
    cfg = _load_config(args)
    dataset = _resolve(args.root, args.dataset)
    seqs = find_sequences(dataset)
    if not seqs:
        raise DatasetError(f"no sequences found under {dataset}")
    out = _resolve(args.root, args.out)
    out.mkdir(parents=True, exist_ok=True)
    ev = cfg.eval
    rows, tex, vs_first, speed = [], {}, [], []
    for s in seqs:
        seq = load_sequence(s)
        gt = seq.gt_masks()
        frames = {i: seq.load_frame(i) for i in gt}
        t = sequence_textureness(frames, gt, ev.log_sigma)
        a = safe_ar(ar_change_vs_first, gt)
        b = safe_ar(ar_change_speed, gt, gap=ev.ar_gap)
        vs_first += a
        speed += b
        if t is not None:
            tex[seq.name] = t
        rows.append({"sequence": seq.name, "frames": len(seq), "annotated": len(gt),
                     "textureness": "" if t is None else f"{t:.6f}",
                     "ar_vs_first_n": len(a), "ar_vs_first_max": f"{max(a):.6f}" if a else "",
                     "ar_speed_n": len(b), "ar_speed_max": f"{max(b):.6f}" if b else ""})
    with open(out / "stats.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for name, values, title in (("ar_vs_first", vs_first, "vs. first annotated frame"),
                                ("ar_speed", speed, f"over {ev.ar_gap} frames")):
        hist = HistogramSpec.log_spaced(ev.hist_lo, ev.hist_hi, ev.hist_bins).fill(values)
        write_histogram_csv(out / f"{name}_hist.csv", hist)
        plot_histogram(out / f"{name}_hist.png", hist, f"Aspect ratio change {title}")
    if tex:
        plot_textureness(out / "textureness.png", tex)
    print(f"{len(rows)} sequences -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- synth

def _read_spec(path: Path) -> SceneSpec:
    if not path.is_file():
        raise ConfigError(f"scene spec {path} not found")
    text = path.read_text()
    try:
        data = json.loads(text) if path.suffix == ".json" else cfgmod.tomllib.loads(text)
    except (ValueError, cfgmod.tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"malformed scene spec {path}: {exc}") from exc
    return SceneSpec.from_dict(data)


PRESETS = {"flip-occlusion": (flip_occlusion_scene, 200), "high-contrast": (high_contrast_scene, 60)}


def cmd_synth(args) -> int:
    if (args.spec is None) == (args.preset is None):
        raise UsageError("give exactly one of a spec file or --preset")
    if args.spec is not None:
        spec = _read_spec(_resolve(args.root, args.spec))
    else:
        make, frames = PRESETS[args.preset]
        spec = make(args.seed or 0, args.frames or frames)
    if args.write_flow:
        spec.write_flow = True
    out = _resolve(args.root, args.out)
    seq = generate(spec, out)
    print(f"{len(seq.frames)} frames -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- overlay

def render_overlay(frame: np.ndarray, labels: np.ndarray, record: dict, template_mask: np.ndarray | None,
                   style: cfgmod.OverlaySection) -> np.ndarray:
    """Tinted mask, its contour, the pose-implied outline and a state banner."""
    img = frame.astype(np.float64)
    m = labels > 0
    img[m] = (1 - style.alpha) * img[m] + style.alpha * np.asarray(style.tint, float)
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    contours, _ = cv2.findContours(m.astype(np.uint8), cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
    cv2.drawContours(img, contours, -1, tuple(int(c) for c in style.contour), 1)
    if record.get("homography") is not None and template_mask is not None:
        warped = warp_mask(Homography.from_list(record["homography"]), template_mask,
                           (frame.shape[1], frame.shape[0]))
        outline, _ = cv2.findContours(warped.astype(np.uint8), cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
        cv2.drawContours(img, outline, -1, tuple(int(c) for c in style.outline), 1)
    total = record.get("score", {}).get("total", 0.0)
    text = f"#{record['frame']} {record['mode']} {record['side']} score {total:.3f}"
    cv2.rectangle(img, (0, 0), (frame.shape[1] - 1, 17), (0, 0, 0), -1)
    cv2.putText(img, text, (4, 13), cv2.FONT_HERSHEY_SIMPLEX, 0.45, (255, 255, 255), 1, cv2.LINE_AA)
    return img


def cmd_overlay(args) -> int:
    cfg = _load_config(args)
    seq = load_sequence(_resolve(args.root, args.sequence))
    res_path = _resolve(args.root, args.results)
    res_dir = res_path if res_path.is_dir() else res_path.parent
    records = read_results(res_dir / "results.jsonl" if res_path.is_dir() else res_path)
    if not records:
        raise DatasetError(f"no result records in {res_dir}")
    templates = {Label.OBVERSE: seq.load_gt(seq.obverse_frame) > 0}
    if seq.reverse_frame is not None:
        templates[Label.REVERSE] = seq.load_gt(seq.reverse_frame) > 0
    out = _resolve(args.root, args.out)
    for rec in records:
        frame = seq.load_frame(rec["frame"])
        labels = read_label_png(res_dir / rec["mask_path"]) if rec.get("mask_path") else np.zeros(frame.shape[:2])
        tpl = templates.get(Label[rec["side"].upper()])
        write_image(out / f"{rec['frame']:06d}.png", render_overlay(frame, labels, rec, tpl, cfg.overlay))
    print(f"{len(records)} overlays -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cointrack", description="Two-sided planar object tracker and tools.")
    p.add_argument("--root", type=Path, default=Path("."), help="base directory for relative paths")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="TOML config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        if seed:
            sp.add_argument("--seed", type=int)

    t = sub.add_parser("track", help="track a sequence or every sequence of a dataset")
    t.add_argument("sequence")
    t.add_argument("--out", required=True)
    t.add_argument("--jobs", type=int, default=1)
    t.add_argument("--test-mode", action="store_true", help="require an explicit --seed")
    common(t)
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="IoU and tracking-state statistics as CSV")
    e.add_argument("results")
    e.add_argument("dataset")
    e.add_argument("--out", help="CSV path (default RESULTS/eval.csv)")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("stats", help="textureness and aspect-ratio-change histograms")
    s.add_argument("dataset")
    s.add_argument("--out", required=True)
    common(s, seed=False)
    s.set_defaults(func=cmd_stats)

    y = sub.add_parser("synth", help="render a synthetic sequence")
    y.add_argument("spec", nargs="?", help="scene spec (.toml or .json)")
    y.add_argument("--preset", choices=sorted(PRESETS))
    y.add_argument("--frames", type=int)
    y.add_argument("--seed", type=int)
    y.add_argument("--write-flow", action="store_true")
    y.add_argument("--out", required=True)
    y.set_defaults(func=cmd_synth)

    o = sub.add_parser("overlay", help="render result overlays")
    o.add_argument("sequence")
    o.add_argument("results", help="results directory or results.jsonl")
    o.add_argument("--out", required=True)
    common(o, seed=False)
    o.set_defaults(func=cmd_overlay)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"cointrack: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"cointrack: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CoinTrackError as exc:
        print(f"cointrack: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"cointrack: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
