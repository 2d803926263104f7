#!/usr/bin/env python3
"""Plot the CSV outputs of ``openq run`` (needs the ``plot`` extra).

Usage: python scripts/plot_results.py RUN_DIR [RUN_DIR ...]

Each run directory is recognised by the files it contains; one PNG per
figure is written next to the CSVs.
"""

from __future__ import annotations

import sys
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from openq.io import read_csv  # noqa: E402


def grouped(rows, key):
    out = defaultdict(list)
    for r in rows:
        out[r[key]].append(r)
    return dict(sorted(out.items()))


def plot_magnetization(run: Path):
    _, rows = read_csv(run / "magnetization.csv")
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5), sharex=True)
    for gamma, recs in grouped(rows, "gamma").items():
        site = max(r["site"] for r in recs) // 2
        mid = [r for r in recs if r["site"] == site]
        for ax, a in zip(axes, "xyz"):
            ax.plot([r["t"] for r in mid], [r[a] for r in mid], label=f"gamma={gamma:g}")
    for ax, a in zip(axes, "xyz"):
        ax.set_xlabel("t")
        ax.set_title(f"<sigma^{a}> at the center site")
    axes[-1].legend(fontsize=6)
    return fig


def plot_mixing(run: Path):
    _, rows = read_csv(run / "distance.csv")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for gamma, recs in grouped(rows, "gamma").items():
        ax.semilogy([r["t"] for r in recs], [r["D"] for r in recs], label=f"gamma={gamma:g}")
    ax.set_xlabel("t")
    ax.set_ylabel("D(t)")
    ax.legend()
    return fig


def plot_correlations(run: Path):
    _, rows = read_csv(run / "peak_summary.csv")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([r["gamma"] for r in rows], [r["averaged_peak"] for r in rows], "o-")
    ax.set_xlabel("gamma")
    ax.set_ylabel("distance-averaged peak |C^z_d|")
    return fig


def plot_errors(run: Path):
    _, rows = read_csv(run / "errors.csv")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for chi, recs in grouped(rows, "chi").items():
        ax.semilogy([r["t"] for r in recs], [r["epsilon"] for r in recs], label=f"chi={chi:g}")
    ax.set_xlabel("t")
    ax.set_ylabel("correlation error")
    ax.legend()
    return fig


def plot_entropy(run: Path):
    _, rows = read_csv(run / "entropy.csv")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for gamma, recs in grouped(rows, "gamma").items():
        ax.plot([r["t"] for r in recs], [r["S_OP"] for r in recs], label=f"gamma={gamma:g}")
    ax.set_xlabel("t")
    ax.set_ylabel("S_OP")
    ax.legend()
    return fig


def plot_overlay(run: Path):
    _, rows = read_csv(run / "overlay.csv")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for key, recs in grouped([r | {"key": (r["gamma"], r["eta"])} for r in rows], "key").items():
        t = [r["t"] for r in recs]
        mean = [r["mean"] for r in recs]
        err = [3 * r["stderr"] for r in recs]
        line, = ax.plot(t, [r["exact"] for r in recs], label=f"gamma={key[0]:g} eta={key[1]:g}")
        ax.errorbar(t, mean, yerr=err, fmt=".", color=line.get_color(), ms=2)
    ax.set_xlabel("t")
    ax.set_ylabel("<sigma^z_0>")
    ax.legend(fontsize=7)
    return fig


def plot_protocols(run: Path):
    _, rows = read_csv(run / "protocols.csv")
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.5))
    for protocol, recs in grouped(rows, "protocol").items():
        t = [r["t"] for r in recs]
        axes[0].plot(t, [r["z_center"] for r in recs], label=protocol)
        axes[1].plot(t, [r["c_0_center"] for r in recs], label=protocol)
    axes[0].set_ylabel("<sigma^z> center")
    axes[1].set_ylabel("C^z(0, center)")
    for ax in axes:
        ax.set_xlabel("t")
    axes[0].legend()
    return fig


PLOTS = {"magnetization.csv": plot_magnetization, "distance.csv": plot_mixing,
         "peak_summary.csv": plot_correlations, "errors.csv": plot_errors, "entropy.csv": plot_entropy,
         "overlay.csv": plot_overlay, "protocols.csv": plot_protocols}


def main(argv=None) -> int:
    runs = [Path(a) for a in (argv if argv is not None else sys.argv[1:])]
    if not runs:
        print(__doc__, file=sys.stderr)
        return 2
    for run in runs:
        for name, fn in PLOTS.items():
            if (run / name).exists():
                fig = fn(run)
                fig.tight_layout()
                target = run / name.replace(".csv", ".png")
                fig.savefig(target, dpi=120)
                plt.close(fig)
                print(target)
    return 0


if __name__ == "__main__":
    sys.exit(main())
