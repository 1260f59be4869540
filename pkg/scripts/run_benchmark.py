"""Track every sequence of a dataset, evaluate, and compute dataset statistics.

    python scripts/run_benchmark.py data/benchmark --out runs/oracle --backend oracle
"""
import argparse
import sys
import time
from pathlib import Path

from cointrack.cli import main as cli


def run(*argv):
    code = cli([str(a) for a in argv])
    if code:
        sys.exit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("dataset", type=Path)
    ap.add_argument("--out", type=Path, default=Path("runs/latest"))
    ap.add_argument("--backend", choices=["oracle", "reference"], default="oracle")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--config")
    ap.add_argument("--overlay", action="store_true", help="render overlays for each sequence")
    args = ap.parse_args()

    extra = ["--config", args.config] if args.config else []
    t = time.perf_counter()
    run("track", args.dataset, "--out", args.out / "results", "--seed", args.seed, "--jobs", args.jobs,
        "--set", f"segmenter.backend={args.backend}", *extra)
    print(f"tracking took {time.perf_counter() - t:.0f} s")
    run("eval", args.out / "results", args.dataset, "--out", args.out / "eval.csv")
    run("stats", args.dataset, "--out", args.out / "stats")
    if args.overlay:
        for seq in sorted(p for p in args.dataset.iterdir() if (p / "init.json").is_file()):
            run("overlay", seq, args.out / "results" / seq.name, "--out", args.out / "overlay" / seq.name)


if __name__ == "__main__":
    main()
