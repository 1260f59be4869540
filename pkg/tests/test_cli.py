import csv
import json
import shutil

import numpy as np
import pytest
import tomli_w

from cointrack.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from cointrack.dataset import load_sequence, read_image, read_label_png, write_jsonl, write_label_png
from cointrack.evalkit import HistogramSpec
from cointrack.synth import Keyframe, SceneSpec, TextureSpec, generate

ORACLE = ["--set", "segmenter.backend=oracle"]


def scene(**kw):
    base = dict(width=240, height=180, focal=800.0, radius=70.0, n_frames=10,
                keyframes=[Keyframe(0), Keyframe(9, (20, 5, 1000), (0.1, 0.4, 0))])
    base.update(kw)
    return SceneSpec(**base)


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "scene.toml"
    spec.write_bytes(tomli_w.dumps(scene().to_dict()).encode())
    assert main(["--root", str(root), "synth", "scene.toml", "--out", "seq"]) == EXIT_OK
    assert main(["--root", str(root), "track", "seq", "--out", "run1", "--seed", "4", "--test-mode", *ORACLE]) == 0
    return root


def read_csv(path):
    return list(csv.DictReader(open(path)))


# ---------------------------------------------------------------- synth

def test_synth_writes_layout(data):
    seq = load_sequence(data / "seq")
    assert len(seq) == 10
    assert sorted(seq.gt_paths) == [0, 5]
    assert len(list((data / "seq" / "frames").glob("*.png"))) == 10


def test_synth_preset_frames(tmp_path):
    assert main(["synth", "--preset", "flip-occlusion", "--frames", "3", "--out", str(tmp_path / "p")]) == 0
    assert len(load_sequence(tmp_path / "p")) == 3


@pytest.mark.parametrize("text", ["width = ", "unknown_key = 3", "width = 2"])
def test_synth_malformed_spec(tmp_path, text, capsys):
    (tmp_path / "bad.toml").write_text(text)
    assert main(["--root", str(tmp_path), "synth", "bad.toml", "--out", "o"]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_synth_needs_one_source(tmp_path):
    assert main(["synth", "--out", str(tmp_path)]) == EXIT_USAGE


# ---------------------------------------------------------------- track

def test_track_one_record_per_frame(data):
    lines = (data / "run1" / "results.jsonl").read_text().splitlines()
    recs = [json.loads(x) for x in lines]
    assert [r["frame"] for r in recs] == list(range(10))
    for r in recs:
        assert set(r) == {"frame", "mode", "side", "score", "homography", "adaptation", "mask_path"}
        assert set(r["score"]) == {"obj", "cover", "occl", "appearance", "total"}
        assert read_label_png(data / "run1" / r["mask_path"]).shape == (180, 240)
    assert all(r["mode"] == "tracking" for r in recs)


def test_track_is_byte_deterministic(data):
    assert main(["--root", str(data), "track", "seq", "--out", "run2", "--seed", "4", *ORACLE]) == 0
    for name in ["results.jsonl"] + [f"masks/{i:06d}.png" for i in range(10)]:
        assert (data / "run1" / name).read_bytes() == (data / "run2" / name).read_bytes()


def test_track_missing_init(data, tmp_path, capsys):
    shutil.copytree(data / "seq", tmp_path / "s")
    (tmp_path / "s" / "init.json").unlink()
    (tmp_path / "ds").mkdir()
    shutil.move(tmp_path / "s", tmp_path / "ds" / "s")
    code = main(["track", str(tmp_path / "ds" / "s"), "--out", str(tmp_path / "o"), "--seed", "0"])
    assert code == EXIT_DATA
    assert "init.json" in capsys.readouterr().err


def test_track_test_mode_requires_seed(data, tmp_path):
    assert main(["--root", str(data), "track", "seq", "--out", str(tmp_path), "--test-mode"]) == EXIT_USAGE


def test_track_bad_flag_is_usage_error(data):
    assert main(["--root", str(data), "track", "seq"]) == EXIT_USAGE
    assert main(["--root", str(data), "track", "seq", "--out", "x", "--set", "tracker.nope=1"]) == EXIT_USAGE


def test_track_dataset_with_jobs(data, tmp_path):
    ds = tmp_path / "ds"
    for name in ("a", "b"):
        shutil.copytree(data / "seq", ds / name)
    assert main(["track", str(ds), "--out", str(tmp_path / "o"), "--seed", "4", "--jobs", "2", *ORACLE]) == 0
    for name in ("a", "b"):
        assert (tmp_path / "o" / name / "results.jsonl").read_bytes() == (data / "run1" / "results.jsonl").read_bytes()


# ---------------------------------------------------------------- eval

def perfect_results(seq_dir, out, lost_every=None):
    seq = load_sequence(seq_dir)
    recs = []
    for i in range(len(seq)):
        lost = lost_every is not None and i % lost_every == 1
        rec = {"frame": i, "mode": "lost" if lost else "tracking", "side": "obverse", "mask_path": None}
        if i in seq.gt_paths and not lost:
            rec["mask_path"] = f"masks/{i:06d}.png"
            write_label_png(out / rec["mask_path"], seq.load_gt(i))
        recs.append(rec)
    write_jsonl(out / "results.jsonl", recs)
    return recs


def test_eval_perfect(data, tmp_path):
    perfect_results(data / "seq", tmp_path / "res")
    assert main(["eval", str(tmp_path / "res"), str(data / "seq")]) == 0
    row = read_csv(tmp_path / "res" / "eval.csv")[0]
    assert float(row["iou"]) == 1.0 and float(row["tracking_pct"]) == 100.0


def test_eval_injected_tracking_fraction(data, tmp_path):
    recs = perfect_results(data / "seq", tmp_path / "res", lost_every=2)
    expect = 100.0 * sum(r["mode"] == "tracking" for r in recs) / len(recs)
    assert expect == 50.0
    assert main(["eval", str(tmp_path / "res"), str(data / "seq"), "--out", str(tmp_path / "e.csv")]) == 0
    rows = read_csv(tmp_path / "e.csv")
    assert float(rows[0]["tracking_pct"]) == expect
    assert float(rows[0]["tracking_iou"]) == 1.0


def test_eval_errors(data, tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["eval", str(tmp_path / "empty"), str(data / "seq")]) == EXIT_DATA
    write_jsonl(tmp_path / "gap" / "results.jsonl", [{"frame": 0, "mode": "lost", "side": "obverse"}])
    assert main(["eval", str(tmp_path / "gap"), str(data / "seq")]) == EXIT_DATA


def test_eval_on_tracker_output(data):
    assert main(["eval", str(data / "run1"), str(data / "seq")]) == 0
    row = read_csv(data / "run1" / "eval.csv")[0]
    assert float(row["iou"]) >= 0.9


# ---------------------------------------------------------------- stats

def hist_counts(path):
    return [int(r["count"]) for r in read_csv(path)]


def test_stats_static_sequence(tmp_path):
    generate(scene(n_frames=21, keyframes=[Keyframe(0, (0, 0, 1000), (0.2, 0.2, 0))]), tmp_path / "ds" / "s")
    assert main(["stats", str(tmp_path / "ds"), "--out", str(tmp_path / "st")]) == 0
    for name in ("ar_vs_first_hist.csv", "ar_speed_hist.csv"):
        counts = hist_counts(tmp_path / "st" / name)
        assert counts[0] == sum(counts) > 0
    assert (tmp_path / "st" / "ar_speed_hist.png").is_file()
    assert (tmp_path / "st" / "textureness.png").is_file()


def test_stats_constant_texture(tmp_path):
    flat = TextureSpec((120, 120, 120), 0.0, 4.0, 0)
    generate(scene(n_frames=6, obverse=flat, reverse=flat, background=flat), tmp_path / "s")
    assert main(["stats", str(tmp_path / "s"), "--out", str(tmp_path / "st")]) == 0
    row = read_csv(tmp_path / "st" / "stats.csv")[0]
    assert float(row["textureness"]) == pytest.approx(0.0, abs=1e-9)


def test_stats_rotation_matches_generator(tmp_path):
    n = 31
    angle = np.deg2rad(60)
    generate(scene(n_frames=n, keyframes=[Keyframe(0), Keyframe(n - 1, rotvec=(0, angle, 0))]), tmp_path / "s")
    assert main(["stats", str(tmp_path / "s"), "--out", str(tmp_path / "st")]) == 0
    counts = np.array(hist_counts(tmp_path / "st" / "ar_vs_first_hist.csv"))
    assert counts[1:].sum() > 0
    expect = [1 / np.cos(angle * t / (n - 1)) for t in range(5, n, 5)]
    want = HistogramSpec.log_spaced().fill(expect).counts
    assert counts.sum() == want.sum()
    # each measured value lands in the analytic bin or a neighbor
    got_bins = np.repeat(np.arange(len(counts)), counts)
    want_bins = np.repeat(np.arange(len(want)), want)
    assert np.all(np.abs(got_bins - want_bins) <= 1)


def test_stats_bad_layout(tmp_path):
    (tmp_path / "nothing").mkdir()
    assert main(["stats", str(tmp_path / "nothing"), "--out", str(tmp_path / "o")]) == EXIT_DATA


# ---------------------------------------------------------------- overlay

def test_overlay_tints_interior(data, tmp_path):
    assert main(["overlay", str(data / "seq"), str(data / "run1"), "--out", str(tmp_path / "ov")]) == 0
    assert len(list((tmp_path / "ov").glob("*.png"))) == 10
    frame = read_image(data / "seq" / "frames" / "000003.png")
    over = read_image(tmp_path / "ov" / "000003.png")
    labels = read_label_png(data / "run1" / "masks" / "000003.png")
    y, x = (int(v) for v in np.argwhere(labels > 0).mean(axis=0))
    tint = np.array([255, 40, 40], float)
    expect = np.clip(np.rint(0.55 * frame[y, x] + 0.45 * tint), 0, 255)
    assert np.array_equal(over[y, x], expect.astype(np.uint8))
    assert np.array_equal(over[2, 2], [0, 0, 0])  # banner
    background = np.argwhere(labels == 0)[-1]
    assert np.array_equal(over[tuple(background)], frame[tuple(background)])


def test_overlay_custom_tint(data, tmp_path):
    (tmp_path / "c.toml").write_text("[overlay]\ntint = [0, 0, 255]\nalpha = 1.0\n")
    args = ["overlay", str(data / "seq"), str(data / "run1"), "--out", str(tmp_path / "ov"),
            "--config", str(tmp_path / "c.toml")]
    assert main(args) == 0
    labels = read_label_png(data / "run1" / "masks" / "000000.png")
    y, x = (int(v) for v in np.argwhere(labels > 0).mean(axis=0))
    assert np.array_equal(read_image(tmp_path / "ov" / "000000.png")[y, x], [0, 0, 255])


def test_overlay_zero_frames(data, tmp_path):
    (tmp_path / "r").mkdir()
    (tmp_path / "r" / "results.jsonl").write_text("")
    assert main(["overlay", str(data / "seq"), str(tmp_path / "r"), "--out", str(tmp_path / "ov")]) == EXIT_DATA
