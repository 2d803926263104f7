"""Named experiments: one config in, CSV files plus a JSON manifest out.

Each experiment expands its grid into independent points. Points run in a
process pool when ``OPENQ_WORKERS`` (or the ``workers`` argument) is above
1, and every point derives its seed from the config seed and its index.
"""

from __future__ import annotations

import math
import platform
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .complexity import ComplexityInput, complexity_report
from .config import EngineConfig, ExperimentConfig, ModelConfig
from .io import read_csv, write_csv, write_json
from .operators import LindbladModel, PauliString, Schedule, boundary_driven_ising
from .oracle import expectation, integrate_master_equation, product_density
from .probes import (connected_correlations, correlation_error, correlation_length_report, distance_averaged_peak,
                     mixing_time, two_point)
from .tn import (MPSState, initial_product_states, local_liouvillian_gates,
                 mps_trace_distance_proxy, operator_entanglement_entropy, product_density_mps, tebd_evolve)
from .trajectory import basis_state, run_ensemble, workers_from_env

CHAOTIC_FIELDS = (0.5, -1.05)
Z_ATOL = 1e-9


def derived_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def parallel_map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


# models and engines ------------------------------------------------------------

def build_model(mc: ModelConfig, gamma: float | None = None, n_sites: int | None = None, eta: float | None = None,
                h_x: float | None = None, h_z: float | None = None, schedule: Schedule | None = None) -> LindbladModel:
    sc = mc.schedule
    if schedule is None:
        schedule = Schedule(sc.kind, sc.gamma_max, sc.t_total, sc.seed, sc.n_jump_sites)
    return boundary_driven_ising(n_sites or mc.n_sites, mc.J, mc.h_x if h_x is None else h_x,
                                 mc.h_z if h_z is None else h_z, mc.gamma if gamma is None else gamma,
                                 mc.mu, mc.eta if eta is None else eta, schedule)


def initial_density(n_sites: int, kind: str) -> np.ndarray:
    return product_density(initial_product_states(n_sites, kind))


def initial_pure(n_sites: int, kind: str) -> np.ndarray:
    bits = {"zeros": "0" * n_sites, "ones": "1" * n_sites,
            "neel": "".join("01"[i % 2] for i in range(n_sites))}
    if kind in bits:
        return basis_state(bits[kind])
    if kind == "plus":
        return np.full(2 ** n_sites, 2 ** (-n_sites / 2), dtype=complex)
    raise ValueError(f"initial state {kind!r} is not pure")


@dataclass
class Evolution:
    times: np.ndarray
    observations: list
    log: Any = None
    final: Any = None


def evolve(model: LindbladModel, engine: EngineConfig, T: float, initial: str,
           observe: Callable[[float, Any], Any], sample_every: int | None = None, chi: int | None = None,
           until: Callable | None = None, max_discarded: float | None = None) -> Evolution:
    """Run the density-matrix engines (oracle or tensor network) and observe each sample."""
    every = sample_every or engine.sample_every
    if engine.kind == "oracle":
        res = integrate_master_equation(model, initial_density(model.n_sites, initial), T, engine.dt,
                                        sample_every=every, store_states=False, observe=observe)
        return Evolution(res.times, res.observations)
    if engine.kind == "tensor-network":
        plan = local_liouvillian_gates(model, engine.dt, chi_max=chi or engine.chi_max, svd_cutoff=engine.svd_cutoff,
                                       svd_method=engine.svd_method, ordering=engine.ordering,
                                       max_discarded=max_discarded)
        rho0 = product_density_mps(model.n_sites, initial_product_states(model.n_sites, initial))
        res = tebd_evolve(rho0, plan, T, sample_every=every, observe=observe, adaptive=engine.adaptive,
                          weight_ceiling=engine.weight_ceiling, until=until)
        return Evolution(res.times, res.observations, res.log, res.final)
    raise ValueError(f"engine {engine.kind!r} does not evolve density matrices")


def state_distance(a, b) -> float:
    """Frobenius distance of trace-normalized states from either density engine."""
    if isinstance(a, MPSState):
        return mps_trace_distance_proxy(a, b)
    return float(np.linalg.norm(a / np.trace(a).real - b / np.trace(b).real))


def snapshot(state):
    return state.copy()


def local_magnetizations(state) -> dict[str, np.ndarray]:
    if isinstance(state, MPSState):
        return {a: two_point(state, a)[0] for a in "XYZ"}
    n = int(round(math.log2(state.shape[0])))
    tr = np.trace(state).real
    return {a: np.array([expectation(state, PauliString.single(i, a).sparse(n)) / tr for i in range(n)])
            for a in "XYZ"}


# grid points -----------------------------------------------------------------

def _T(cfg: ExperimentConfig) -> float:
    return float(cfg.params["T"])


def _magnetization_point(args):
    cfg, gamma = args
    model = build_model(cfg.model, gamma)
    if cfg.engine.kind == "trajectory":
        n = model.n_sites
        obs = {f"{a}{i}": PauliString.single(i, a).sparse(n) for i in range(n) for a in "XYZ"}
        seed = derived_seeds(cfg.seed, 1)[0]
        res = run_ensemble(model, initial_pure(n, cfg.model.initial), _T(cfg), cfg.engine.dt, cfg.engine.trajectories,
                           obs, seed, n_samples=int(cfg.params.get("n_samples", 50)), weighting=cfg.engine.weighting)
        times = res["Z0"].times
        return [(gamma, t, i, res[f"X{i}"].means[k], res[f"Y{i}"].means[k], res[f"Z{i}"].means[k])
                for k, t in enumerate(times) for i in range(n)]
    ev = evolve(model, cfg.engine, _T(cfg), cfg.model.initial, lambda t, s: local_magnetizations(s))
    return [(gamma, t, i, m["X"][i], m["Y"][i], m["Z"][i])
            for t, m in zip(ev.times, ev.observations) for i in range(model.n_sites)]


def _mixing_point(args):
    cfg, gamma = args
    eps = float(cfg.params.get("epsilon", 1e-4))
    confirm = cfg.params.get("confirm")
    model = build_model(cfg.model, gamma)
    prev, below, D = [None], [None], []

    def observe(t, s):
        if prev[0] is not None:
            d = state_distance(prev[0], s)
            D.append((t, d))
            below[0] = (below[0] if below[0] is not None else t) if d < eps else None
        prev[0] = snapshot(s)

    until = None
    if confirm is not None:
        until = lambda t, s: below[0] is not None and t - below[0] >= float(confirm)  # noqa: E731
    t0 = time.perf_counter()
    evolve(model, cfg.engine, _T(cfg), cfg.model.initial, observe, until=until)
    D = np.array(D)
    mt = mixing_time(D[:, 0], D[:, 1], eps)
    return gamma, D, mt, time.perf_counter() - t0


def _correlation_point(args):
    cfg, gamma, fields = args
    model = build_model(cfg.model, gamma, h_x=fields[0], h_z=fields[1])
    ev = evolve(model, cfg.engine, _T(cfg), cfg.model.initial, lambda t, s: connected_correlations(s, "Z", t))
    return gamma, ev.observations


def _entropy_point(args):
    cfg, gamma = args
    model = build_model(cfg.model, gamma)
    n = model.n_sites
    cut = int(cfg.params.get("cut", n // 2 - 1))
    max_discarded = cfg.params.get("max_discarded")
    ev = evolve(model, cfg.engine, _T(cfg), cfg.model.initial,
                lambda t, s: (operator_entanglement_entropy(s, cut), max(s.bond_dims)),
                max_discarded=None if max_discarded is None else float(max_discarded))
    return gamma, ev.times, ev.observations, ev.log


def _trajectory_point(args):
    cfg, gamma, eta, seed = args
    model = build_model(cfg.model, gamma, eta=eta)
    n, T = model.n_sites, _T(cfg)
    site = int(cfg.params.get("site", 0))
    n_samples = int(cfg.params.get("n_samples", 50))
    op = PauliString.single(site, "Z").sparse(n)
    t0 = time.perf_counter()
    ens = run_ensemble(model, initial_pure(n, cfg.model.initial), T, cfg.engine.dt, cfg.engine.trajectories,
                       {"Z": op}, seed, n_samples=n_samples, weighting=cfg.engine.weighting)
    wall = time.perf_counter() - t0
    oracle_dt = float(cfg.params.get("oracle_dt", 1e-3))
    steps = int(round(T / oracle_dt))
    every = steps // n_samples
    ex = integrate_master_equation(model, initial_density(n, cfg.model.initial), T, oracle_dt, sample_every=every,
                                   observables={"Z": op}, store_states=False)
    est = ens["Z"]
    rows = []
    for k, t in enumerate(est.times):
        exact = float(np.real(ex.observables["Z"][k]))
        diff = est.means[k] - exact
        # deterministic samples (t = 0) agree only up to rounding
        z = 0.0 if abs(diff) <= Z_ATOL else (diff / est.stderr[k] if est.stderr[k] > 0 else math.inf)
        rows.append((gamma, eta, t, exact, est.means[k], est.stderr[k], z))
    return rows, ens.mean_jump_count, wall


def _protocol_point(args):
    cfg, protocol, gamma_max = args
    T = _T(cfg)
    n = cfg.model.n_sites
    center = int(cfg.params.get("center", n // 2))
    if protocol == "constant":
        schedule = Schedule()
    elif protocol == "sinusoidal":
        schedule = Schedule("sinusoidal", gamma_max, float(cfg.params.get("t_total", T)))
    else:
        schedule = Schedule("random-sites", seed=int(cfg.params.get("protocol_seed", cfg.seed)),
                            n_jump_sites=int(cfg.params.get("n_jump_sites", 2)))
    model = build_model(cfg.model, gamma_max, schedule=schedule)

    def observe(t, s):
        single, pair = two_point(s, "Z")
        return single[center], pair[0, center] - single[0] * single[center]

    ev = evolve(model, cfg.engine, T, cfg.model.initial, observe)
    labels = ";".join(ch.label for ch in model.active_channels)
    return [(protocol, gamma_max, t, z, c, labels) for t, (z, c) in zip(ev.times, ev.observations)]


# experiments -----------------------------------------------------------------

@dataclass
class RunManifest:
    experiment: str
    config_hash: str
    code_version: str
    wall_time: float
    files: list[str] = field(default_factory=list)
    seed: int = 0
    extra: dict = field(default_factory=dict)


def _meta(cfg: ExperimentConfig, **kw) -> dict:
    return {"experiment": cfg.experiment, "config_hash": cfg.config_hash(), "engine": cfg.engine.kind,
            "seed": cfg.seed, **kw}


def run_magnetization(cfg, out: Path, workers: int) -> list[Path]:
    rows = [r for part in parallel_map(_magnetization_point, [(cfg, g) for g in cfg.grids.gamma], workers)
            for r in part]
    return [write_csv(out / "magnetization.csv", ["gamma", "t", "site", "x", "y", "z"], rows,
                      _meta(cfg, N=cfg.model.n_sites, chi=cfg.engine.chi_max))]


def run_mixing(cfg, out: Path, workers: int) -> list[Path]:
    results = parallel_map(_mixing_point, [(cfg, g) for g in cfg.grids.gamma], workers)
    eps = float(cfg.params.get("epsilon", 1e-4))
    meta = _meta(cfg, N=cfg.model.n_sites, chi=cfg.engine.chi_max, dt=cfg.engine.dt, epsilon=eps,
                 norm="frobenius (trace-distance proxy)")
    dist = [(g, t, d) for g, D, _, _ in results for t, d in D]
    mix = [(g, mt.time if mt.reached else "not-reached", round(wall, 3)) for g, _, mt, wall in results]
    return [write_csv(out / "distance.csv", ["gamma", "t", "D"], dist, meta),
            write_csv(out / "mixing.csv", ["gamma", "t_mix", "wall_s"], mix, meta)]


def _correlation_outputs(cfg, out: Path, results, fields) -> list[Path]:
    meta = _meta(cfg, N=cfg.model.n_sites, chi=cfg.engine.chi_max, h_x=fields[0], h_z=fields[1], log="natural")
    corr, lengths, origin, summary, jensen = [], [], [], [], []
    for gamma, series in results:
        for cm in series:
            n = cm.n_sites
            corr.extend((gamma, cm.t, i, j, cm.c[i, j]) for i in range(n) for j in range(i + 1, n))
            rep = correlation_length_report(cm)
            for d, a in rep.averaged.items():
                lengths.append((gamma, cm.t, d, a.value, rep.xi, a.n_undefined))
                if a.defined:
                    jensen.append((gamma, cm.t, d, a.jensen_lhs, a.jensen_rhs, a.jensen_applicable,
                                   a.jensen_holds, a.concave_regime))
        final = series[-1].from_origin()
        peaks = np.abs(np.array([cm.from_origin() for cm in series])).max(axis=0)
        origin.extend((gamma, d + 1, final[d], peaks[d]) for d in range(len(final)))
        summary.append((gamma, distance_averaged_peak(series), float(np.mean(np.abs(final)))))
    return [
        write_csv(out / "correlations.csv", ["gamma", "t", "i", "j", "c_ij"], corr, meta),
        write_csv(out / "lengths.csv", ["gamma", "t", "d", "C_bar", "xi", "n_undefined"], lengths, meta),
        write_csv(out / "origin_correlations.csv", ["gamma", "d", "C_d_final", "max_t_abs_C_d"], origin, meta),
        write_csv(out / "peak_summary.csv", ["gamma", "averaged_peak", "final_mean_abs"], summary, meta),
        write_csv(out / "jensen.csv", ["gamma", "t", "d", "mean_exp", "exp_of_mean", "applicable", "holds",
                                       "concave_regime"], jensen, meta),
    ]


def run_correlation(cfg, out: Path, workers: int, fields=None) -> list[Path]:
    fields = fields or (cfg.model.h_x, cfg.model.h_z)
    results = parallel_map(_correlation_point, [(cfg, g, fields) for g in cfg.grids.gamma], workers)
    return _correlation_outputs(cfg, out, results, fields)


def run_chaotic(cfg, out: Path, workers: int) -> list[Path]:
    fields = (float(cfg.params.get("h_x", CHAOTIC_FIELDS[0])), float(cfg.params.get("h_z", CHAOTIC_FIELDS[1])))
    return run_correlation(cfg, out, workers, fields)


def _chi_point(args):
    cfg, n, chi, t_max, every = args
    model = build_model(cfg.model, n_sites=n)
    ev = evolve(model, cfg.engine, t_max, cfg.model.initial, lambda t, s: connected_correlations(s, "Z", t),
                sample_every=every, chi=chi)
    return n, chi, ev.observations


def run_bond_dimension(cfg, out: Path, workers: int) -> list[Path]:
    ts = sorted(cfg.grids.t)
    dt = cfg.engine.dt
    t_max = ts[-1]
    every = max(1, int(round(float(cfg.params.get("sample_spacing", ts[0])) / dt)))
    chi_ref = int(cfg.params.get("chi_ref", 250))
    threshold = float(cfg.params.get("threshold", 0.05))
    sizes = cfg.grids.n_sites or [cfg.model.n_sites]
    chis = list(cfg.grids.chi) + [chi_ref]
    runs = parallel_map(_chi_point, [(cfg, n, c, t_max, every) for n in sizes for c in chis], workers)
    series = {(n, c): obs for n, c, obs in runs}
    err_rows, min_rows = [], []
    for n in sizes:
        ref = series[(n, chi_ref)]
        times = np.array([cm.t for cm in ref])
        errors = {c: np.array([correlation_error(a, b) for a, b in zip(series[(n, c)], ref)]) for c in cfg.grids.chi}
        err_rows.extend((n, t, c, errors[c][k]) for k, t in enumerate(times) for c in cfg.grids.chi)
        for t in ts:
            k = int(np.argmin(np.abs(times - t)))
            found = [c for c in cfg.grids.chi if errors[c][k] <= threshold]
            min_rows.append((n, times[k], found[0] if found else "not-found"))
    meta = _meta(cfg, chi_ref=chi_ref, threshold=threshold, dt=dt)
    return [write_csv(out / "errors.csv", ["N", "t", "chi", "epsilon"], err_rows, meta),
            write_csv(out / "chi_min.csv", ["N", "t", "chi_min"], min_rows, meta)]


def run_entropy(cfg, out: Path, workers: int) -> list[Path]:
    results = parallel_map(_entropy_point, [(cfg, g) for g in cfg.grids.gamma], workers)
    rows, summary = [], []
    for gamma, times, obs, log in results:
        rows.extend((gamma, t, s, b) for t, (s, b) in zip(times, obs))
        summary.append((gamma, obs[-1][0], log.max_bond, log.cumulative, log.max_step_discarded))
    meta = _meta(cfg, N=cfg.model.n_sites, chi=cfg.engine.chi_max, log="natural",
                 max_discarded=cfg.params.get("max_discarded"))
    return [write_csv(out / "entropy.csv", ["gamma", "t", "S_OP", "max_bond"], rows, meta),
            write_csv(out / "entropy_summary.csv", ["gamma", "S_OP_final", "max_bond", "cumulative_discarded",
                                                    "max_step_discarded"], summary, meta)]


def run_trajectory(cfg, out: Path, workers: int) -> list[Path]:
    etas = cfg.grids.eta or [cfg.model.eta]
    points = [(g, e) for g in cfg.grids.gamma for e in etas]
    seeds = derived_seeds(cfg.seed, len(points))
    # trajectories of one point already run in the pool, so points stay sequential here
    results = [_trajectory_point((cfg, g, e, s)) for (g, e), s in zip(points, seeds)]
    rows = [r for part, _, _ in results for r in part]
    summary = [(g, e, jumps, round(wall, 3), max(abs(r[6]) for r in part))
               for (g, e), (part, jumps, wall) in zip(points, results)]
    meta = _meta(cfg, N=cfg.model.n_sites, R=cfg.engine.trajectories, weighting=cfg.engine.weighting)
    return [write_csv(out / "overlay.csv", ["gamma", "eta", "t", "exact", "mean", "stderr", "z"], rows, meta),
            write_csv(out / "overlay_summary.csv", ["gamma", "eta", "mean_jumps", "wall_s", "max_abs_z"],
                      summary, meta)]


def run_protocols(cfg, out: Path, workers: int) -> list[Path]:
    protocols = cfg.params.get("protocols", ["constant", "sinusoidal", "random-sites"])
    points = [(cfg, p, g) for g in cfg.grids.gamma for p in protocols]
    rows = [r for part in parallel_map(_protocol_point, points, workers) for r in part]
    return [write_csv(out / "protocols.csv", ["protocol", "gamma_max", "t", "z_center", "c_0_center", "channels"],
                      rows, _meta(cfg, N=cfg.model.n_sites))]


COMPLEXITY_FIELDS = ("lambda1", "lambda2", "T", "epsilon", "K", "M_K", "C_bar", "dim", "N", "xi", "tau_c", "lam")


def complexity_rows(base: dict, lengths_csv: str | None = None) -> list[dict]:
    """One report row per gamma found in a lengths CSV, or a single row from ``base``."""
    rows = []
    if lengths_csv:
        meta, data = read_csv(lengths_csv)
        groups: dict[float, list[dict]] = {}
        for r in data:
            groups.setdefault(r.get("gamma", math.nan), []).append(r)
        for gamma, recs in groups.items():
            t_last = max(r["t"] for r in recs)
            cbar = [r["C_bar"] for r in recs if r["t"] == t_last and isinstance(r["C_bar"], float)
                    and math.isfinite(r["C_bar"])]
            xis = [r["xi"] for r in recs if isinstance(r["xi"], float) and math.isfinite(r["xi"])]
            params = dict(base)
            params.setdefault("N", int(meta.get("N", 1)) if isinstance(meta.get("N"), (int, float)) else 1)
            if cbar:
                params["C_bar"] = float(np.mean(cbar))
            if xis:
                params["xi"] = float(max(xis))
            rows.append({"gamma": gamma, **params})
    else:
        rows.append(dict(base))
    out = []
    for params in rows:
        inp = ComplexityInput(**{k: params[k] for k in COMPLEXITY_FIELDS if k in params})
        out.append({k: params.get(k) for k in ("gamma",) if k in params} | asdict_input(inp)
                   | complexity_report(inp).as_row())
    return out


def asdict_input(inp: ComplexityInput) -> dict:
    return {k: getattr(inp, k) for k in COMPLEXITY_FIELDS}


def default_complexity_params(params: dict) -> dict:
    base = {k: params[k] for k in COMPLEXITY_FIELDS if k in params}
    if "lambda1" not in base and "lambda2" not in base:
        base["lambda1"] = base["lambda2"] = 1 / math.sqrt(2)
    elif "lambda2" not in base:
        base["lambda2"] = math.sqrt(max(0.0, 1 - base["lambda1"] ** 2))
    elif "lambda1" not in base:
        base["lambda1"] = math.sqrt(max(0.0, 1 - base["lambda2"] ** 2))
    base.setdefault("T", 10.0)
    base.setdefault("epsilon", 0.05)
    return base


def run_complexity(cfg, out: Path, workers: int) -> list[Path]:
    base = default_complexity_params(cfg.params)
    rows = complexity_rows(base, cfg.params.get("lengths_csv"))
    cols = list(rows[0].keys())
    return [write_csv(out / "complexity.csv", cols, [[r[c] for c in cols] for r in rows],
                      _meta(cfg, constants="constants=1 estimate"))]


RUNNERS = {
    "magnetization-sweep": run_magnetization,
    "mixing-time": run_mixing,
    "correlation-sweep": run_correlation,
    "chaotic-regime": run_chaotic,
    "bond-dimension-study": run_bond_dimension,
    "entropy-vs-time": run_entropy,
    "trajectory-vs-oracle": run_trajectory,
    "time-dependent-protocols": run_protocols,
    "complexity-report": run_complexity,
}


def code_version() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).resolve().parent)
        if rev.returncode == 0:
            return f"{__version__}+{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def run_experiment(cfg: ExperimentConfig, output: str | Path | None = None, workers: int | None = None) -> RunManifest:
    """Execute one experiment and write its manifest; files from an earlier manifest are removed first."""
    out = Path(output or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        import json

        for name in json.loads(manifest_path.read_text()).get("files", []):
            (out / name).unlink(missing_ok=True)
    workers = workers or workers_from_env()
    t0 = time.perf_counter()
    try:
        files = RUNNERS[cfg.experiment](cfg, out, workers)
    except Exception as exc:
        raise RuntimeError(f"{cfg.experiment} failed: {exc}") from exc
    manifest = RunManifest(cfg.experiment, cfg.config_hash(), code_version(), time.perf_counter() - t0,
                           sorted(p.name for p in files), cfg.seed,
                           {"python": platform.python_version(), "workers": workers})
    write_json(manifest_path, manifest.__dict__)
    return manifest
