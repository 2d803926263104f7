"""Command-line entry point: ``openq run|validate|complexity``.

Config grammar (YAML; every key is optional unless marked required)::

    experiment: <kind>          # required; one of the nine experiment kinds
    seed: 0                     # root of the per-point derived seeds
    output: out/<name>          # one directory per experiment
    model:
      N: 11                     # alias of n_sites
      J: 1.0
      h_x: -2.0
      h_z: -2.0
      gamma: 0.1                # global dissipation strength
      mu: 0.5                   # bath bias; rates are 1 +- mu
      eta: 0.0                  # scalar, or four per-channel values in the
                                # order sigma+_0, sigma-_0, sigma+_last, sigma-_last
      initial: zeros            # zeros | ones | neel | plus | mixed
      schedule: {kind: constant, gamma_max: null, t_total: null, seed: null}
    engine:
      kind: tensor-network      # oracle | trajectory | tensor-network
      dt: 0.05
      chi_max: 64
      svd_cutoff: 1.0e-10
      ordering: sweep           # sweep | brick
      svd_method: svd           # svd | gram
      adaptive: false
      weight_ceiling: 1.0e-8
      sample_every: 10          # steps between samples
      trajectories: 1000
      weighting: survival       # survival | none
    grids: {gamma: [...], chi: [...], N: [...], t: [...], eta: [...]}
    params: {T: 10.0, ...}      # experiment-specific; T is required by most kinds

Commented examples for every kind live in ``configs/``. The worker count
comes from ``--workers`` or the ``OPENQ_WORKERS`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import load_config

log = logging.getLogger("openq")


def _cmd_validate(args) -> int:
    cfg, diags = load_config(args.config)
    for d in diags:
        print(f"{args.config}: {d}")
    if not diags:
        print(f"{args.config}: ok ({cfg.experiment}, hash {cfg.config_hash()[:12]})")
    return 1 if diags else 0


def _cmd_run(args) -> int:
    from .experiments import run_experiment

    cfg, diags = load_config(args.config)
    if diags:
        for d in diags:
            print(f"{args.config}: {d}", file=sys.stderr)
        return 2
    manifest = run_experiment(cfg, args.output, args.workers)
    print(json.dumps(manifest.__dict__, indent=2, default=str))
    return 0


def _cmd_complexity(args) -> int:
    from .experiments import complexity_rows, default_complexity_params
    from .io import format_csv

    base = default_complexity_params({k: v for k, v in vars(args).items()
                                      if k in ("lambda1", "lambda2", "T", "epsilon", "K", "M_K", "dim", "N",
                                               "tau_c", "lam") and v is not None})
    rows = complexity_rows(base, args.probes_csv)
    cols = list(rows[0].keys())
    text = format_csv(cols, [[r[c] for c in cols] for r in rows], {"constants": "constants=1 estimate"})
    if args.output:
        from .io import atomic_write_text

        atomic_write_text(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="openq", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="output directory (overrides the config)")
    r.add_argument("-w", "--workers", type=int, help="process count (default: $OPENQ_WORKERS or 1)")
    r.set_defaults(func=_cmd_run)

    v = sub.add_parser("validate", help="check a config; nonzero exit on any diagnostic")
    v.add_argument("config")
    v.set_defaults(func=_cmd_validate)

    c = sub.add_parser("complexity", help="cost estimates from a correlation-length CSV")
    c.add_argument("probes_csv", help="lengths.csv written by a correlation experiment")
    c.add_argument("--T", type=float)
    c.add_argument("--epsilon", type=float)
    c.add_argument("--lambda1", type=float)
    c.add_argument("--lambda2", type=float)
    c.add_argument("--K", type=int)
    c.add_argument("--M_K", type=int)
    c.add_argument("--dim", type=int)
    c.add_argument("--N", type=int)
    c.add_argument("--tau_c", type=float)
    c.add_argument("--lam", type=float)
    c.add_argument("-o", "--output")
    c.set_defaults(func=_cmd_complexity)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"openq: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
