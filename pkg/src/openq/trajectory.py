"""Quantum-jump Monte Carlo for linear and detector-nonlinear Lindbladians.

Between jumps a pure state follows the normalized non-Hermitian flow

    d|psi>/dt = -i H |psi> - (gamma/2) sum_k alpha_k (L_k^dag L_k - <L_k^dag L_k>) |psi>,

and jumps fire with rate ``gamma sum_k (1 - eta_k) alpha_k <L_k^dag L_k>``.
Trajectories are advanced as columns of one ``(2^N, R)`` array so that the
RK4 stages are plain matrix products; each column owns its random stream,
which makes results independent of how trajectories are batched.

Post-selection on "no detected click" is carried as a per-trajectory
survival weight ``exp(-int gamma sum_k alpha_k eta_k <L_k^dag L_k> dt)``
(``weighting='survival'``). With these weights the ensemble reproduces the
nonlinear master equation exactly; ``weighting='none'`` drops them.
"""

from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .operators import JumpChannel, LindbladModel, PauliString, decompose_jump, embed

WORKERS_ENV = "OPENQ_WORKERS"


def workers_from_env(default: int = 1) -> int:
    """Process count from ``OPENQ_WORKERS``; a malformed value is an error."""
    raw = os.environ.get(WORKERS_ENV)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return value


class DarkStateError(RuntimeError):
    pass


class ImpossibleJumpError(RuntimeError):
    pass


class StepTooLargeError(ValueError):
    pass


def _op(m, dense: bool):
    if dense:
        return m.toarray() if sp.issparse(m) else np.asarray(m)
    return sp.csr_matrix(m)


class TrajectorySystem:
    """Precomputed operators for a model; cheap to pickle for worker processes.

    The no-jump flow is integrated as the linear equation
    ``d|psi>/dt = -i (H - (i gamma/2) G) |psi>`` with ``G = sum_k alpha_k L_k^dag L_k``
    followed by renormalization: the ``<L_k^dag L_k>`` shift only rescales
    the norm, so dropping it inside the RK4 stages leaves the normalized
    state unchanged.
    """

    def __init__(self, model: LindbladModel, dense_limit: int = 8):
        self.model = model
        n = model.n_sites
        self.n_sites = n
        self.dim = 2 ** n
        self.dense = n <= dense_limit
        chans = model.active_channels
        self.channels = chans
        self.H = _op(model.hamiltonian.sparse(), self.dense)
        self.L = [_op(c.sparse(n), self.dense) for c in chans]
        LdL = [sp.csr_matrix(c.sparse(n).conj().T @ c.sparse(n)) for c in chans]
        self.LdL = [_op(m, self.dense) for m in LdL]
        self.alpha = np.array([c.alpha for c in chans])
        self.eta = np.array([c.eta for c in chans])
        self.G = _op(sum((a * m for a, m in zip(self.alpha, LdL)), sp.csr_matrix((self.dim, self.dim))), self.dense)
        # stacked L^dag L for one-shot expectations, shape (K*d, d)
        self._stack = _op(sp.vstack(LdL).tocsr(), self.dense) if chans else None
        self._prop_cache: dict[float, np.ndarray] = {}

    @property
    def time_dependent(self) -> bool:
        return self.model.schedule.kind == "sinusoidal"

    def expectations(self, psi: np.ndarray) -> np.ndarray:
        """``<L_k^dag L_k>`` per channel and column, shape ``(K, R)``; psi need not be normalized."""
        if self._stack is None:
            return np.zeros((0, psi.shape[1]))
        norm2 = np.einsum("ij,ij->j", psi.conj(), psi).real
        Apsi = (self._stack @ psi).reshape(len(self.L), self.dim, -1)
        return np.einsum("ij,kij->kj", psi.conj(), Apsi).real / norm2

    def gamma(self, t, ncol: int) -> np.ndarray:
        t = np.broadcast_to(np.asarray(t, dtype=float), (ncol,))
        if self.time_dependent:
            s = self.model.schedule
            return s.gamma_max * np.abs(np.sin(np.pi * t / s.t_total))
        return np.full(ncol, self.model.gamma)

    def rhs(self, psi: np.ndarray, t) -> np.ndarray:
        """Linear non-Hermitian generator applied column-wise."""
        out = -1j * (self.H @ psi)
        if self.L:
            out = out - 0.5 * self.gamma(t, psi.shape[1]) * (self.G @ psi)
        return out

    def rates(self, psi: np.ndarray, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-column jump rate, discard rate and per-channel jump weights."""
        ncol = psi.shape[1]
        if not self.L:
            z = np.zeros(ncol)
            return z, z, np.zeros((0, ncol))
        g = self.gamma(t, ncol)
        e = self.expectations(psi)
        w = ((1 - self.eta) * self.alpha)[:, None] * e * g
        disc = ((self.eta * self.alpha) @ e) * g
        return w.sum(axis=0), disc, w

    def _propagator(self, h: float) -> np.ndarray:
        """RK4 polynomial of the constant generator for a step ``h``."""
        if h not in self._prop_cache:
            A = -1j * _op(self.H, True) - 0.5 * self.model.gamma * _op(self.G, True)
            hA = h * A
            M = np.eye(self.dim, dtype=complex)
            term = np.eye(self.dim, dtype=complex)
            for k in range(1, 5):
                term = term @ hA / k
                M = M + term
            self._prop_cache[h] = M
        return self._prop_cache[h]

    def rk4(self, psi: np.ndarray, t, h) -> np.ndarray:
        """One RK4 step with per-column start time and step length, then renormalize."""
        h_arr = np.asarray(h, dtype=float)
        if self.dense and not self.time_dependent and (h_arr.ndim == 0 or np.all(h_arr == h_arr.flat[0])):
            out = self._propagator(float(h_arr.flat[0])) @ psi
        else:
            t = np.asarray(t, dtype=float)
            k1 = self.rhs(psi, t)
            k2 = self.rhs(psi + (h_arr / 2) * k1, t + h_arr / 2)
            k3 = self.rhs(psi + (h_arr / 2) * k2, t + h_arr / 2)
            k4 = self.rhs(psi + h_arr * k3, t + h_arr)
            out = psi + (h_arr / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        norm = np.linalg.norm(out, axis=0)
        if np.any(norm < 1e-12):
            raise DarkStateError("no-jump evolution collapsed the state norm")
        return out / norm

    def jump(self, psi: np.ndarray, k: int) -> np.ndarray:
        out = self.L[k] @ psi
        nrm = np.linalg.norm(out)
        if nrm < 1e-14:
            raise ImpossibleJumpError(f"channel {self.channels[k].label!r} annihilates the state")
        return out / nrm


@dataclass
class TrajectoryRecord:
    seed: int
    jumps: list[tuple[float, int]] = field(default_factory=list)
    observables: dict[str, np.ndarray] = field(default_factory=dict)
    log_weight: np.ndarray | None = None
    final_state_hash: str = ""


@dataclass(frozen=True)
class EnsembleEstimate:
    label: str
    times: np.ndarray
    means: np.ndarray
    stderr: np.ndarray
    n_trajectories: int


@dataclass
class EnsembleResult:
    estimates: dict[str, EnsembleEstimate]
    records: list[TrajectoryRecord]
    mean_jump_count: float
    predicted_jump_scale: float
    weighting: str

    def __getitem__(self, label: str) -> EnsembleEstimate:
        return self.estimates[label]


class _Batch:
    """Column-wise trajectory state for a batch sharing one time grid."""

    def __init__(self, system: TrajectorySystem, psi: np.ndarray, t0: float, rngs: Sequence[np.random.Generator],
                 bisect_tol: float):
        self.sys = system
        self.psi = psi / np.linalg.norm(psi, axis=0)
        self.rngs = list(rngs)
        R = psi.shape[1]
        self.integral = np.zeros(R)
        self.target = np.array([self._draw(i) for i in range(R)])
        self.log_w = np.zeros(R)
        self.r_jump, self.r_disc, _ = system.rates(self.psi, np.full(R, t0))
        self.events: list[list[tuple[float, int]]] = [[] for _ in range(R)]
        self.bisect_tol = bisect_tol

    def _draw(self, i: int) -> float:
        u = 1.0 - self.rngs[i].random()  # uniform on (0, 1]
        return -math.log(u)

    def advance(self, t: float, t_end: float, stop_on_jump: bool = False):
        """Advance every column from ``t`` to ``t_end`` (one integrator step).

        With ``stop_on_jump`` (single trajectory) returns ``(tau, psi_before, k)``
        at the first jump without applying it.
        """
        sys = self.sys
        R = self.psi.shape[1]
        start = np.full(R, float(t))
        cols = np.arange(R)
        while cols.size:
            s = start[cols]
            h = t_end - s
            p0 = self.psi[:, cols]
            p1 = sys.rk4(p0, s, h)
            rj1, rd1, _ = sys.rates(p1, s + h)
            I1 = self.integral[cols] + h * (self.r_jump[cols] + rj1) / 2
            hit = I1 >= self.target[cols]
            ok = cols[~hit]
            self.psi[:, ok] = p1[:, ~hit]
            self.integral[ok] = I1[~hit]
            self.log_w[ok] -= h[~hit] * (self.r_disc[ok] + rd1[~hit]) / 2
            self.r_jump[ok], self.r_disc[ok] = rj1[~hit], rd1[~hit]
            if not hit.any():
                break
            jc = cols[hit]
            tau, p_tau, rj_tau, rd_tau, w_tau = self._locate(jc, s[hit], h[hit], p0[:, hit])
            self.log_w[jc] -= (tau - s[hit]) * (self.r_disc[jc] + rd_tau) / 2
            for n, c in enumerate(jc):
                weights = w_tau[:, n]
                tot = weights.sum()
                if tot <= 0:
                    # zero-rate column crossed a zero target; redraw and continue from tau
                    self.psi[:, c] = p_tau[:, n]
                    k = None
                else:
                    k = int(self.rngs[c].choice(len(weights), p=weights / tot))
                    if stop_on_jump:
                        return float(tau[n]), p_tau[:, n].copy(), k
                    self.psi[:, c] = sys.jump(p_tau[:, n], k)
                    self.events[c].append((float(tau[n]), k))
                self.integral[c] = 0.0
                self.target[c] = self._draw(c)
            rj, rd, _ = sys.rates(self.psi[:, jc], tau)
            self.r_jump[jc], self.r_disc[jc] = rj, rd
            start[jc] = tau
            cols = jc
        return None

    def _locate(self, cols, s, h, p0):
        """Bisect the step length at which the survival integral reaches its target."""
        sys = self.sys
        lo = np.zeros_like(h)
        hi = h.copy()
        I0 = self.integral[cols]
        r0 = self.r_jump[cols]
        target = self.target[cols]
        while np.max(hi - lo) > self.bisect_tol:
            mid = (lo + hi) / 2
            pm = sys.rk4(p0, s, mid)
            rm, _, _ = sys.rates(pm, s + mid)
            reached = I0 + mid * (r0 + rm) / 2 >= target
            hi = np.where(reached, mid, hi)
            lo = np.where(reached, lo, mid)
        p_tau = sys.rk4(p0, s, hi)
        rj, rd, w = sys.rates(p_tau, s + hi)
        return s + hi, p_tau, rj, rd, w


def _as_state(psi0: np.ndarray, n_sites: int) -> np.ndarray:
    psi = np.asarray(psi0, dtype=complex).reshape(-1)
    if psi.size != 2 ** n_sites:
        raise ValueError(f"state of length {psi.size} does not match N={n_sites}")
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1) > 1e-10:
        raise ValueError(f"state is not normalized (norm {nrm})")
    return psi


def basis_state(bits: str) -> np.ndarray:
    psi = np.zeros(2 ** len(bits), dtype=complex)
    psi[int(bits, 2)] = 1
    return psi


def jump_probabilities(model: LindbladModel, psi: np.ndarray, t: float, dt: float):
    """``dp_k = dt alpha_k <L_k^dag L_k>`` and ``P_jp = gamma sum_k (1 - eta_k) dp_k``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    psi = _as_state(psi, model.n_sites)
    n = model.n_sites
    dp = np.array([dt * c.alpha * float(np.real(np.vdot(psi, (c.sparse(n).conj().T @ (c.sparse(n) @ psi)))))
                   for c in model.active_channels])
    eta = np.array([c.eta for c in model.active_channels])
    p_jp = float(model.gamma_at(t) * np.sum((1 - eta) * dp)) if dp.size else 0.0
    if p_jp >= 1:
        raise StepTooLargeError(f"total jump probability {p_jp:.3g} >= 1; reduce dt")
    return dp, p_jp


def sample_jump_time(model: LindbladModel, psi: np.ndarray, t0: float, T: float,
                     rng: np.random.Generator, dt: float = 1e-3):
    """Draw the next jump after ``t0``.

    Returns ``(tau, psi(tau^-), k)`` or ``(None, psi(T), None)`` when the
    trajectory survives to ``T``.
    """
    system = TrajectorySystem(model)
    batch = _Batch(system, _as_state(psi, model.n_sites)[:, None].copy(), t0, [rng], dt / 100)
    for a, b in _grid(t0, T, dt):
        hit = batch.advance(a, b, stop_on_jump=True)
        if hit is not None:
            return hit
    return None, batch.psi[:, 0].copy(), None


def _grid(t0: float, t1: float, dt: float):
    n = max(1, int(math.ceil((t1 - t0) / dt - 1e-9)))
    edges = [t0 + i * dt for i in range(n)] + [t1]
    return list(zip(edges[:-1], edges[1:]))


def evolve_no_jump(model: LindbladModel, psi: np.ndarray, t0: float, t1: float, dt: float = 1e-3) -> np.ndarray:
    """Normalized non-Hermitian evolution from ``t0`` to ``t1`` with no jumps."""
    if t1 <= t0:
        raise ValueError("need t1 > t0")
    system = TrajectorySystem(model)
    out = _as_state(psi, model.n_sites)[:, None].copy()
    for a, b in _grid(t0, t1, dt):
        out = system.rk4(out, a, b - a)
    return out[:, 0]


def apply_jump(psi: np.ndarray, channel: JumpChannel, n_sites: int, epsilon: float | None = None) -> np.ndarray:
    """Normalized ``L_k |psi>``.

    With ``epsilon`` set the jump is also routed through ``U exp(-H_D T_D) V``
    and the two results must agree to ``epsilon``.
    """
    psi = np.asarray(psi, dtype=complex)
    out = channel.sparse(n_sites) @ psi
    nrm = np.linalg.norm(out)
    if nrm < 1e-14:
        raise ImpossibleJumpError(f"channel {channel.label!r} annihilates the state")
    out = out / nrm
    if epsilon is not None:
        local = psi.reshape(-1)
        d2 = float(np.real(np.vdot(local, channel.sparse(n_sites).conj().T @ (channel.sparse(n_sites) @ local))))
        dec = decompose_jump(channel.matrix, epsilon, max(d2, 1e-300))
        alt = embed(dec.reconstruct(), channel.sites, n_sites) @ psi
        alt = alt / np.linalg.norm(alt)
        if np.linalg.norm(alt - out) > epsilon:
            raise AssertionError(f"decomposed jump deviates by {np.linalg.norm(alt - out):.3g} > {epsilon}")
    return out


def _observable_ops(observables: Mapping, n_sites: int, dense: bool):
    ops = {}
    for label, o in observables.items():
        m = o.sparse(n_sites) if isinstance(o, PauliString) else o
        ops[label] = _op(m, dense)
    return ops


def _run_chunk(args):
    system, psi0, T, dt, seeds, obs, sample_steps, weighting, keep_records = args
    R = len(seeds)
    rngs = [np.random.default_rng(s) for s in seeds]
    psi = np.repeat(psi0[:, None], R, axis=1)
    batch = _Batch(system, psi, 0.0, rngs, dt / 100)
    n_steps = int(round(T / dt))
    samples = {k: [] for k in obs}
    logw = []

    def record():
        p = batch.psi
        for k, o in obs.items():
            samples[k].append(np.real(np.sum(p.conj() * (o @ p), axis=0)))
        logw.append(batch.log_w.copy())

    if 0 in sample_steps:
        record()
    for s in range(n_steps):
        batch.advance(s * dt, (s + 1) * dt)
        if s + 1 in sample_steps:
            record()
    samples = {k: np.array(v) for k, v in samples.items()}  # (n_times, R)
    logw = np.array(logw)
    if weighting == "none":
        logw = np.zeros_like(logw)
    records = []
    for c, seed in enumerate(seeds):
        rec = TrajectoryRecord(int(seed), batch.events[c])
        if keep_records:
            rec.observables = {k: v[:, c].copy() for k, v in samples.items()}
            rec.log_weight = logw[:, c].copy()
        rec.final_state_hash = hashlib.sha256(np.ascontiguousarray(batch.psi[:, c]).tobytes()).hexdigest()
        records.append(rec)
    return samples, logw, records


def weighted_estimate(values: np.ndarray, log_w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Weighted means and standard errors over the last axis (trajectories).

    Equal weights give the plain sample mean and ``stdev / sqrt(R)``.
    """
    R = values.shape[-1]
    w = np.exp(log_w - log_w.max(axis=-1, keepdims=True))
    W = w.sum(axis=-1)
    mean = (w * values).sum(axis=-1) / W
    var = (w ** 2 * (values - mean[..., None]) ** 2).sum(axis=-1) / W ** 2
    return mean, np.sqrt(var * R / (R - 1))


def trajectory_seeds(seed: int, R: int) -> list[int]:
    """Per-trajectory seeds derived from one master seed."""
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in np.random.SeedSequence(seed).spawn(R)]


def run_ensemble(model: LindbladModel, psi0: np.ndarray, T: float, dt: float, R: int,
                 observables: Mapping, seed: int, n_samples: int = 50, weighting: str = "survival",
                 workers: int | None = None, chunk: int = 10_000, keep_records: bool = False) -> EnsembleResult:
    """Average ``R`` independent trajectories.

    Observables are sampled at ``n_samples + 1`` evenly spaced times including
    ``t=0``. ``workers`` defaults to the ``OPENQ_WORKERS`` environment
    variable (1 if unset).
    """
    if R < 1:
        raise ValueError("need at least one trajectory")
    if weighting not in ("survival", "none"):
        raise ValueError(f"unknown weighting {weighting!r}")
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(T, 1):
        raise ValueError("T must be a multiple of dt")
    psi0 = _as_state(psi0, model.n_sites)
    system = TrajectorySystem(model)
    obs = _observable_ops(observables, model.n_sites, dense=model.n_sites <= 8)
    sample_steps = sorted({int(round(i * n_steps / n_samples)) for i in range(n_samples + 1)})
    times = np.array(sample_steps) * dt
    seeds = trajectory_seeds(seed, R)
    chunks = [seeds[i:i + chunk] for i in range(0, R, chunk)]
    args = [(system, psi0, T, dt, c, obs, set(sample_steps), weighting, keep_records) for c in chunks]
    workers = workers or workers_from_env()
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_run_chunk, args))
    else:
        parts = [_run_chunk(a) for a in args]
    samples = {k: np.concatenate([p[0][k] for p in parts], axis=1) for k in obs}
    logw = np.concatenate([p[1] for p in parts], axis=1)
    records = [r for p in parts for r in p[2]]
    estimates = {}
    for k, v in samples.items():
        if R >= 2:
            m, se = weighted_estimate(v, logw)
        else:
            m, se = v[:, 0], np.full(v.shape[0], np.nan)
        estimates[k] = EnsembleEstimate(k, times, m, se, R)
    mean_jumps = float(np.mean([len(r.jumps) for r in records]))
    scale = model.gamma * T * sum(c.alpha * (1 - c.eta) for c in model.active_channels)
    return EnsembleResult(estimates, records, mean_jumps, scale, weighting)
