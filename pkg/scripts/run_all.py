#!/usr/bin/env python3
"""Run every shipped experiment configuration and print its manifest.

Usage: python scripts/run_all.py [--only NAME ...] [--out DIR] [--workers N]

The main-text configurations (N = 25, chi = 250) take hours on one core;
use ``--only`` to pick the desk-scale ones.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from openq.config import load_config
from openq.experiments import run_experiment

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--only", nargs="*", help="config stems, e.g. mixing_time entropy_vs_time")
    p.add_argument("--out", default="out", help="parent directory for the runs")
    p.add_argument("--workers", type=int)
    args = p.parse_args(argv)
    paths = sorted(CONFIGS.glob("*.yaml"))
    if args.only:
        paths = [q for q in paths if q.stem in set(args.only)]
        missing = set(args.only) - {q.stem for q in paths}
        if missing:
            print(f"unknown configs: {', '.join(sorted(missing))}", file=sys.stderr)
            return 2
    for path in paths:
        cfg, diags = load_config(path)
        if diags:
            print(f"{path.name}: {'; '.join(diags)}", file=sys.stderr)
            return 2
        t0 = time.perf_counter()
        manifest = run_experiment(cfg, Path(args.out) / path.stem, args.workers)
        print(json.dumps({"config": path.name, "seconds": round(time.perf_counter() - t0, 1),
                          "files": manifest.files}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
