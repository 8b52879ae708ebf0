#!/usr/bin/env python3
"""End-to-end experiment driver: dataset, both checkpoints, ablation table,
corruption sweep. Everything goes through the CLI so runs are reproducible
from the seed alone.

    python scripts/run_experiments.py --scale smoke   # minutes, sanity
    python scripts/run_experiments.py --scale default # full desk-scale run
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from slicekit.cli import main as slicekit

SCALES = {
    "smoke": {"train": 200, "valid": 30, "test": 60, "epochs": 2, "warmup": 50},
    "default": {"train": 3000, "valid": 350, "test": 870, "epochs": 10, "warmup": 1000},
}


def run(argv: list[str]) -> None:
    print(f"+ slicekit {' '.join(argv)}", flush=True)
    t0 = time.time()
    code = slicekit(argv)
    if code != 0:
        sys.exit(code)
    print(f"  ({time.time() - t0:.0f}s)", flush=True)


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--scale", choices=SCALES, default="smoke")
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--out", type=Path, default=None)
    ap.add_argument("--jobs", type=int, default=2)
    args = ap.parse_args()
    scale = SCALES[args.scale]
    root = args.out or Path("runs") / f"{args.scale}-seed{args.seed}"
    root.mkdir(parents=True, exist_ok=True)
    data = root / "data"

    if not (data / "manifest.json").exists():
        run(["gen", "--seed", str(args.seed), "--out", str(data),
             "--train", str(scale["train"]), "--valid", str(scale["valid"]),
             "--test", str(scale["test"])])
    full = root / "full.bin"
    if not full.exists():
        run(["train", "--data", str(data), "--out", str(full), "--seed", str(args.seed),
             "--epochs", str(scale["epochs"]), "--warmup", str(scale["warmup"])])
    nocopy = root / "nocopy.bin"
    if not nocopy.exists():
        run(["train", "--data", str(data), "--out", str(nocopy), "--seed", str(args.seed),
             "--epochs", str(scale["epochs"]), "--warmup", str(scale["warmup"]), "--no-copy"])

    test = data / "test.jsonl"
    run(["eval", "--ckpt", str(full), "--data", str(test), "--out", str(root / "ablation"),
         "--ablate", "--nocopy-ckpt", str(nocopy), "--jobs", str(args.jobs), "--no-records"])
    run(["eval", "--ckpt", str(full), "--data", str(test), "--out", str(root / "corruption"),
         "--sweep-corruptions", "--seed", str(args.seed), "--jobs", str(args.jobs),
         "--no-records"])
    print(f"\nreports in {root}/: ablation.txt, corruption.txt")


if __name__ == "__main__":
    main()
