"""Acceptance suite: one test per criterion, each at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary ends
with one PASS/FAIL line per criterion. Several criteria run desk-scale
workloads (N = 10 or 11 tensor networks) and take minutes each.
"""

from __future__ import annotations

import math
import time
from pathlib import Path

import numpy as np
import pytest
import scipy.linalg as sla
from scipy import stats

from openq.complexity import ComplexityInput, complexity_report, domain_size, sample_cost_nonhermitian, \
    spacetime_bound, trotter_steps
from openq.config import load_config
from openq.experiments import build_model, evolve, run_experiment, snapshot, state_distance
from openq.io import read_csv
from openq.operators import X, JumpChannel, LindbladModel, PauliString, SpinChainHamiltonian, boundary_driven_ising
from openq.oracle import integrate_master_equation, kraus_evolve, product_density
from openq.probes import (connected_correlations, correlation_length_report, decay_bound,
                          distance_averaged_peak, mixing_time, pairwise_correlation_length, two_point)
from openq.tn import initial_product_states, local_liouvillian_gates, product_density_mps, tebd_evolve
from openq.trajectory import basis_state, evolve_no_jump, run_ensemble
from test_complexity import random_inputs, reference

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
PAULI = "XYZ"

pytestmark = pytest.mark.slow


def config(name: str, **params):
    cfg, diags = load_config(CONFIGS / f"{name}.yaml")
    assert diags == []
    cfg.params.update(params)
    return cfg


def z_scores(est, exact) -> np.ndarray:
    diff = est.means - exact
    # deterministic samples agree only up to rounding
    return np.where(np.abs(diff) <= 1e-9, 0.0, np.abs(diff) / np.where(est.stderr > 0, est.stderr, np.nan))


# 1 -----------------------------------------------------------------------------

@pytest.mark.criterion(1, "Kraus instrument vs RK4 master equation (N <= 3, 1e-4 Frobenius, < 10 s)")
def test_criterion_01_oracle_self_consistency(record_property):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    # the boundary-driven chain needs two sites
    for n in (2, 3):
        model = boundary_driven_ising(n, gamma=0.5)
        a = rng.standard_normal((2 ** n, 2 ** n)) + 1j * rng.standard_normal((2 ** n, 2 ** n))
        rho0 = a @ a.conj().T
        rho0 /= np.trace(rho0)
        kraus, _ = kraus_evolve(model, rho0, 0.5, 1e-3)
        rk4 = integrate_master_equation(model, rho0, 0.5, 1e-3, sample_every=500).states[-1]
        worst = max(worst, float(np.linalg.norm(kraus - rk4)))
    wall = time.perf_counter() - t0
    record_property("detail", f"max Frobenius {worst:.2e}, {wall:.1f} s")
    assert worst <= 1e-4
    assert wall < 10


# 2 -----------------------------------------------------------------------------

@pytest.mark.criterion(2, "trajectory ensemble within 3 standard errors of the oracle (R = 1e4, 50 points, < 5 min)")
def test_criterion_02_trajectory_unbiasedness(record_property, tmp_path):
    cfg = config("trajectory_vs_oracle")
    assert cfg.model.n_sites == 3 and cfg.engine.trajectories == 10_000 and cfg.params["n_samples"] == 50
    t0 = time.perf_counter()
    run_experiment(cfg, tmp_path, workers=1)
    wall = time.perf_counter() - t0
    _, rows = read_csv(tmp_path / "overlay.csv")
    combos = {(r["gamma"], r["eta"]) for r in rows}
    assert combos == {(g, e) for g in (0.1, 0.5) for e in (0.0, 0.5)}
    z = np.array([abs(r["z"]) for r in rows])
    per_combo = {c: sum(1 for r in rows if (r["gamma"], r["eta"]) == c and r["t"] > 0) for c in combos}
    record_property("detail", f"max |z| {z.max():.2f} over {len(z)} points, {wall:.0f} s")
    assert all(v >= 50 for v in per_combo.values())
    assert z.max() <= 3.0
    assert wall < 300


# 3 -----------------------------------------------------------------------------

def _nonhermitian_reference(model: LindbladModel, psi0: np.ndarray, t: float) -> np.ndarray:
    n = model.n_sites
    H = model.hamiltonian.dense()
    drain = sum(ch.alpha * (ch.sparse(n).conj().T @ ch.sparse(n)).toarray() for ch in model.active_channels)
    psi = sla.expm(-1j * t * (H - 0.5j * model.gamma * drain)) @ psi0
    return psi / np.linalg.norm(psi)


@pytest.mark.criterion(3, "detector-efficiency endpoints (eta = 0 linear oracle, eta = 1 no jumps and 1e-5)")
def test_criterion_03_eta_endpoints(record_property):
    obs = {f"{a}{i}": PauliString.single(i, a) for i in range(3) for a in PAULI}
    psi0 = basis_state("000")
    linear = boundary_driven_ising(3, gamma=0.5, eta=0.0)
    ens = run_ensemble(linear, psi0, 2.0, 1e-3, 10_000, obs, seed=31, n_samples=50)
    exact = integrate_master_equation(linear, product_density(initial_product_states(3, "zeros")), 2.0, 1e-3,
                                      sample_every=40, observables=obs, store_states=False)
    z = max(float(np.nanmax(z_scores(ens[k], exact.observables[k].real))) for k in obs)

    full = boundary_driven_ising(3, gamma=0.5, eta=1.0)
    ens1 = run_ensemble(full, psi0, 2.0, 1e-3, 50, obs, seed=32, n_samples=50, keep_records=True)
    jumps = sum(len(r.jumps) for r in ens1.records)
    dev = 0.0
    for k, t in enumerate(ens1["Z0"].times):
        psi = _nonhermitian_reference(full, psi0, t)
        for key, op in obs.items():
            ref = np.vdot(psi, op.dense(3) @ psi).real
            dev = max(dev, abs(ens1[key].means[k] - ref))
    psi_T = evolve_no_jump(full, psi0, 0.0, 2.0)
    ref_T = _nonhermitian_reference(full, psi0, 2.0)
    state_dev = float(np.linalg.norm(np.outer(psi_T, psi_T.conj()) - np.outer(ref_T, ref_T.conj())))
    record_property("detail", f"eta=0 max |z| {z:.2f}; eta=1 jumps {jumps}, observable dev {dev:.1e}, "
                              f"state dev {state_dev:.1e}")
    assert z <= 3.0
    assert jumps == 0
    assert dev <= 1e-5 and state_dev <= 1e-5


# 4 -----------------------------------------------------------------------------

def _tebd_final(model, dt: float, chi: int = 64):
    plan = local_liouvillian_gates(model, dt, chi_max=chi)
    rho0 = product_density_mps(model.n_sites, initial_product_states(model.n_sites, "zeros"))
    return tebd_evolve(rho0, plan, 3.0).final


@pytest.mark.criterion(4, "TEBD vs oracle at N = 5 (1e-4), global Trotter order 2 +- 0.2, < 2 min")
def test_criterion_04_tebd_correctness(record_property):
    model = boundary_driven_ising(5, gamma=0.1)
    t0 = time.perf_counter()
    rho = integrate_master_equation(model, product_density(initial_product_states(5, "zeros")), 3.0, 1e-3,
                                    sample_every=3000).states[-1]
    mps = _tebd_final(model, 0.01)
    single_dev = max(float(np.abs(two_point(mps, a)[0] - two_point(rho, a)[0]).max()) for a in PAULI)
    c_dev = max(float(np.abs(connected_correlations(mps, a).c - connected_correlations(rho, a).c).max())
                for a in PAULI)
    dts = np.array([0.1, 0.05, 0.025])
    errs = [float(np.linalg.norm(_tebd_final(model, dt).to_density() - rho)) for dt in dts]
    order = float(np.polyfit(np.log(dts), np.log(errs), 1)[0])
    wall = time.perf_counter() - t0
    record_property("detail", f"single {single_dev:.1e}, c_ij {c_dev:.1e}, order {order:.3f}, {wall:.0f} s")
    assert single_dev <= 1e-4 and c_dev <= 1e-4
    assert abs(order - 2) <= 0.2
    assert wall < 120


# 5 -----------------------------------------------------------------------------

@pytest.mark.criterion(5, "conservation: trace, Hermiticity and positivity")
def test_criterion_05_conservation(record_property):
    rng = np.random.default_rng(5)
    model = boundary_driven_ising(4, gamma=0.3)
    a = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    rho0 = a @ a.conj().T
    rho0 /= np.trace(rho0)
    res = integrate_master_equation(model, rho0, 5.0, 1e-3, sample_every=100)
    trace_dev = max(abs(np.trace(r) - 1) for r in res.states)
    herm_dev = max(float(np.linalg.norm(r - r.conj().T)) for r in res.states)
    min_eig = min(float(np.linalg.eigvalsh((r + r.conj().T) / 2).min()) for r in res.states)

    tn_model = boundary_driven_ising(8, gamma=0.1)
    tn_rows, tn_ok = [], True
    for chi in (8, 16, 32):
        plan = local_liouvillian_gates(tn_model, 0.05, chi_max=chi)
        tn = tebd_evolve(product_density_mps(8, initial_product_states(8, "zeros")), plan, 3.0, store_states=True)
        tn_trace = max(abs(s.trace() - 1) for s in tn.states)
        tn_herm = max(float(np.linalg.norm(d - d.conj().T)) for d in (s.to_density() for s in tn.states))
        tn_rows.append(f"chi {chi}: trace {tn_trace:.1e} vs discarded {tn.log.cumulative:.1e}, herm {tn_herm:.1e}")
        tn_ok &= tn_trace <= 10 * tn.log.cumulative and tn_herm <= 1e-8
    record_property("detail", f"oracle trace {trace_dev:.1e} herm {herm_dev:.1e} min eig {min_eig:.1e}; "
                    + "; ".join(tn_rows))
    assert trace_dev <= 1e-8 and herm_dev <= 1e-8 and min_eig >= -1e-7
    assert tn_ok


# 6 -----------------------------------------------------------------------------

MIXING_BUDGET = 15 * 60


@pytest.mark.criterion(6, "mixing time strictly decreasing in gamma (N = 11, chi = 150, eps = 1e-4, < 15 min)")
def test_criterion_06_mixing_trend(record_property):
    cfg = config("mixing_time")
    assert cfg.model.n_sites == 11 and cfg.engine.chi_max == 150 and float(cfg.params["epsilon"]) == 1e-4
    eps, confirm = float(cfg.params["epsilon"]), float(cfg.params["confirm"])
    deadline = time.perf_counter() + MIXING_BUDGET
    results: dict[float, float | None] = {}
    exhausted = False
    # fastest-mixing point first so a partial run still reports something
    for gamma in sorted(cfg.grids.gamma, reverse=True):
        prev, below, D = [None], [None], []

        def observe(t, s):
            if prev[0] is not None:
                d = state_distance(prev[0], s)
                D.append((t, d))
                below[0] = (below[0] if below[0] is not None else t) if d < eps else None
            prev[0] = snapshot(s)

        def until(t, s):
            return (below[0] is not None and t - below[0] >= confirm) or time.perf_counter() > deadline

        evolve(build_model(cfg.model, gamma), cfg.engine, float(cfg.params["T"]), cfg.model.initial, observe,
               until=until)
        if time.perf_counter() > deadline:
            exhausted = True
            break
        arr = np.array(D)
        results[gamma] = mixing_time(arr[:, 0], arr[:, 1], eps).time
    wall = MIXING_BUDGET - (deadline - time.perf_counter())
    summary = ", ".join(f"gamma {g}: {t if t is not None else 'not reached'}" for g, t in sorted(results.items()))
    record_property("detail", f"{summary or 'no gamma finished'}; {wall:.0f} s"
                              + ("; time budget exhausted" if exhausted else ""))
    assert not exhausted, "runtime budget of 15 min exhausted"
    times = [results[g] for g in sorted(results)]
    assert all(t is not None for t in times)
    assert all(b < a for a, b in zip(times, times[1:]))


# 7 and 11 share the N = 11 correlation runs -------------------------------------------

@pytest.fixture(scope="module")
def correlation_runs():
    """Correlation series for the main and chaotic field choices at N = 11, T = 10."""
    main = config("correlation_sweep")
    main.model.n_sites = 11
    chaotic = config("chaotic_regime")
    main.engine = chaotic.engine
    out = {}
    for label, cfg, fields in (("main", main, (main.model.h_x, main.model.h_z)),
                               ("chaotic", chaotic, (float(chaotic.params["h_x"]), float(chaotic.params["h_z"])))):
        for gamma in (0.0, 0.1, 0.2, 0.3):
            model = build_model(cfg.model, gamma, h_x=fields[0], h_z=fields[1])
            ev = evolve(model, cfg.engine, 10.0, cfg.model.initial, lambda t, s: connected_correlations(s, "Z", t))
            out[(label, gamma)] = ev.observations
    return out


@pytest.mark.criterion(7, "distance-averaged peak |C^z_d| nonincreasing in gamma (N = 11, T = 10, both regimes)")
def test_criterion_07_correlation_suppression(record_property, correlation_runs):
    details, ok = [], True
    for label in ("main", "chaotic"):
        peaks = [distance_averaged_peak(correlation_runs[(label, g)]) for g in (0.0, 0.1, 0.2, 0.3)]
        details.append(f"{label} " + " ".join(f"{p:.4f}" for p in peaks))
        ok &= all(b <= a for a, b in zip(peaks, peaks[1:]))
    record_property("detail", "; ".join(details))
    assert ok


# 8 -----------------------------------------------------------------------------

CHI_GRID = (32, 64, 128, 256)


def grid_step(bond: int) -> int:
    return next((i for i, c in enumerate(CHI_GRID) if bond <= c), len(CHI_GRID) - 1)


@pytest.mark.criterion(8, "final S_OP lower at gamma = 0.3 than at 0; required chi roughly constant in gamma")
def test_criterion_08_entropy_contrast(record_property, tmp_path):
    cfg = config("entropy_vs_time")
    assert cfg.model.n_sites == 11 and float(cfg.params["T"]) == 10.0
    run_experiment(cfg, tmp_path, workers=1)
    _, rows = read_csv(tmp_path / "entropy_summary.csv")
    by_gamma = {r["gamma"]: r for r in rows}
    steps = [grid_step(int(by_gamma[g]["max_bond"])) for g in sorted(by_gamma)]
    record_property("detail", ", ".join(f"gamma {g}: S {r['S_OP_final']:.3f} chi {int(r['max_bond'])}"
                                        for g, r in sorted(by_gamma.items())))
    assert by_gamma[0.3]["S_OP_final"] < by_gamma[0.0]["S_OP_final"]
    for i, a in enumerate(steps):
        for b in steps[i + 1:]:
            assert b >= a - 1


# 9 -----------------------------------------------------------------------------

@pytest.mark.criterion(9, "correlation error monotone in chi and chi_min <= 200 (N = 10, t = 3, threshold 0.05)")
def test_criterion_09_bond_dimension_study(record_property, tmp_path):
    cfg = config("bond_dimension_study")
    assert cfg.model.n_sites == 10 and list(cfg.grids.chi) == [25, 50, 100, 150, 200]
    run_experiment(cfg, tmp_path, workers=1)
    _, err_rows = read_csv(tmp_path / "errors.csv")
    at3 = {r["chi"]: r["epsilon"] for r in err_rows if abs(r["t"] - 3.0) < 1e-9}
    curve = [at3[c] for c in sorted(at3)]
    _, min_rows = read_csv(tmp_path / "chi_min.csv")
    chi_min = next(r["chi_min"] for r in min_rows if abs(r["t"] - 3.0) < 1e-9)

    # independent recomputation of the chi = 100 entry
    model = build_model(cfg.model)
    series = {}
    # same sampling cadence as the experiment, since sampling splits the fused Trotter half steps
    every = int(round(float(cfg.params["sample_spacing"]) / cfg.engine.dt))
    for chi in (100, int(cfg.params["chi_ref"])):
        ev = evolve(model, cfg.engine, 3.0, cfg.model.initial, lambda t, s: connected_correlations(s, "Z", t),
                    sample_every=every, chi=chi)
        series[chi] = ev.observations[-1].c
    c, ref = series[100], series[int(cfg.params["chi_ref"])]
    num = sum((c[i, j] - ref[i, j]) ** 2 for i in range(10) for j in range(10))
    den = sum(ref[i, j] ** 2 for i in range(10) for j in range(10))
    recomputed = math.sqrt(num / den)
    record_property("detail", "eps " + " ".join(f"{c}:{e:.2e}" for c, e in sorted(at3.items()))
                    + f"; chi_min {chi_min}; recomputed {recomputed:.3e}")
    assert all(b <= a + 1e-12 for a, b in zip(curve, curve[1:]))
    assert isinstance(chi_min, float) and chi_min <= 200
    assert recomputed == pytest.approx(at3[100], rel=1e-12, abs=1e-15)


# 10 ----------------------------------------------------------------------------

@pytest.mark.criterion(10, "exponential inter-jump times, KS p > 0.01 with 1e4 samples")
def test_criterion_10_jump_sampling(record_property):
    rate = 1.0
    model = LindbladModel(SpinChainHamiltonian(1, ()), (JumpChannel(X, (0,), 1.0, 0.0, "X_0"),), rate)
    # two gaps per record; P(two gaps exceed T = 20) is about 4e-8, so nothing is censored
    ens = run_ensemble(model, basis_state("0"), 20.0, 1e-2, 5000, {}, seed=10, n_samples=1, keep_records=True)
    gaps = []
    for rec in ens.records:
        times = [0.0] + [t for t, _ in rec.jumps]
        assert len(times) >= 3
        gaps.extend(np.diff(times)[:2])
    res = stats.kstest(gaps, "expon", args=(0, 1 / rate))
    record_property("detail", f"{len(gaps)} samples, KS p = {res.pvalue:.3f}")
    assert len(gaps) == 10_000
    assert res.pvalue > 0.01


# 11 ----------------------------------------------------------------------------

@pytest.mark.criterion(11, "correlation-length round trip (1e4 inputs, 1e-12) and Jensen on measured data")
def test_criterion_11_correlation_lengths(record_property, correlation_runs):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(10_000):
        norms = float(rng.uniform(0.1, 5))
        c = float(rng.uniform(1e-8, 1 - 1e-9)) * norms * rng.choice([-1, 1])
        d = int(rng.integers(1, 25))
        C = pairwise_correlation_length(c, d, norms).value
        worst = max(worst, abs(decay_bound(C, d, norms) - abs(c)) / abs(c))
    checked = violations = 0
    for series in correlation_runs.values():
        for cm in series:
            for avg in correlation_length_report(cm).averaged.values():
                if avg.defined and avg.jensen_applicable:
                    checked += 1
                    violations += avg.jensen_holds is False
    record_property("detail", f"round trip rel {worst:.1e}; Jensen checked {checked}, violations {violations}")
    assert worst <= 1e-12
    assert checked > 0 and violations == 0


# 12 ----------------------------------------------------------------------------

@pytest.mark.criterion(12, "complexity formulas vs independent evaluator (1e-12) and exact monotonicity")
def test_criterion_12_complexity(record_property):
    worst = 0.0
    for p in random_inputs(100):
        inp = ComplexityInput(**p)
        ref = reference(p)
        steps = trotter_steps(inp)
        assert (steps.N1, steps.N2) == (ref["N1"], ref["N2"])
        cost = sample_cost_nonhermitian(inp)
        pairs = [(domain_size(inp, steps.N2), ref["v"]), (cost.general_per_step, ref["general"]),
                 (cost.commuting_per_run, ref["commuting"]), (cost.count_form, ref["count"]),
                 (spacetime_bound(inp).bound, ref["bound"])]
        worst = max(worst, max(abs(a - b) / abs(b) for a, b in pairs if b != 0))

    def outputs(**kw):
        base = {"lambda1": 0.6, "lambda2": 0.8, "T": 10.0, "epsilon": 0.05, "N": 25, "xi": 2.0, "C_bar": 1.0}
        rep = complexity_report(ComplexityInput(**(base | kw)))
        return [rep.N1, rep.N2, rep.v, rep.S_NH, rep.spacetime, rep.m, *rep.S_NH_variants.values()]

    monotone = True
    for K in (2, 4, 6):
        for seq in ([outputs(T=T, K=K) for T in np.geomspace(0.1, 1e3, 200)],
                    [outputs(epsilon=e, K=K) for e in np.geomspace(0.9, 1e-6, 200)]):
            monotone &= all(all(b >= a for a, b in zip(x, y)) for x, y in zip(seq, seq[1:]))
    s_nh = [outputs(C_bar=c)[3] for c in np.linspace(0.1, 3, 100)]
    monotone &= all(b >= a for a, b in zip(s_nh, s_nh[1:]))
    for key in ("N", "xi"):
        vals = [outputs(**{key: v})[4] for v in ([1, 2, 5, 25, 100] if key == "N" else [0.1, 0.5, 1, 2, 8])]
        monotone &= all(b >= a for a, b in zip(vals, vals[1:]))
    record_property("detail", f"max relative deviation {worst:.1e}; monotone {monotone}")
    assert worst <= 1e-12
    assert monotone


# 13 ----------------------------------------------------------------------------

@pytest.mark.criterion(13, "sinusoidal gamma(t) inside the constant-gamma envelope; random protocol reproducible")
def test_criterion_13_protocols(record_property, tmp_path):
    cfg = config("time_dependent_protocols")
    assert cfg.grids.gamma == [0.5]
    run_experiment(cfg, tmp_path / "a", workers=1)
    run_experiment(cfg, tmp_path / "b", workers=1)
    _, rows = read_csv(tmp_path / "a" / "protocols.csv")
    const = [r for r in rows if r["protocol"] == "constant"]
    sinus = [r for r in rows if r["protocol"] == "sinusoidal"]
    inside = True
    spans = []
    for key in ("z_center", "c_0_center"):
        lo, hi = min(r[key] for r in const), max(r[key] for r in const)
        s_lo, s_hi = min(r[key] for r in sinus), max(r[key] for r in sinus)
        spans.append(f"{key} constant [{lo:.3f}, {hi:.3f}] sinusoidal [{s_lo:.3f}, {s_hi:.3f}]")
        inside &= lo <= s_lo and s_hi <= hi
    random_a = [line for line in (tmp_path / "a" / "protocols.csv").read_text().splitlines()
                if "random-sites" in line]
    random_b = [line for line in (tmp_path / "b" / "protocols.csv").read_text().splitlines()
                if "random-sites" in line]
    record_property("detail", "; ".join(spans) + f"; random rows identical {random_a == random_b}")
    assert inside
    assert random_a and random_a == random_b
