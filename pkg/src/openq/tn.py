"""Vectorized density matrices as MPS, evolved by second-order TEBD.

Each site carries a physical index of dimension 4, ``p = 2 * ket + bra``,
so a product state has site tensors ``rho_i.reshape(1, 4, 1)``. The
two-site Liouvillian blocks act on ``(p_a, p_b)`` and use the same
row-major rule as the exact oracle, ``A rho B -> A kron B^T``.

A gate sequence is a symmetric sweep of half-step gates over bonds
``0..N-2`` and back. Applying gates in sweep order keeps the MPS in exact
mixed-canonical form with the center on the active bond, so every SVD
truncation is performed in an orthonormal frame even though the gates are
not unitary.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from .operators import I2, LindbladModel, PauliString, PAULI

TRACE_VEC = np.array([1, 0, 0, 1], dtype=complex)

# Unitary map from ket-bra components rho[k, b] to Pauli components Tr(s_mu rho)/sqrt(2).
# The Liouvillian is real in that basis, which halves storage and speeds up the SVDs.
PAULI_BASIS = np.array([P.T.reshape(-1) for P in (I2, PAULI["X"], PAULI["Y"], PAULI["Z"])]) / math.sqrt(2)
BASES = ("ketbra", "pauli")


class NonlinearUnsupportedError(ValueError):
    """The tensor-network engine only handles linear Lindbladians (eta = 0)."""


class AccuracyLossError(RuntimeError):
    def __init__(self, message: str, log: TruncationLog):
        super().__init__(message)
        self.log = log


class DegenerateTraceError(ZeroDivisionError):
    pass


class MPSState:
    """Finite MPS of a vectorized density matrix; tensors are ``(chi_l, 4, chi_r)``."""

    def __init__(self, tensors: Sequence[np.ndarray], center: int | None = None, basis: str = "ketbra"):
        if basis not in BASES:
            raise ValueError(f"unknown basis {basis!r}")
        self.basis = basis
        dtype = float if basis == "pauli" and all(np.isrealobj(t) for t in tensors) else complex
        self.tensors = [np.asarray(t, dtype=dtype) for t in tensors]
        for a, b in zip(self.tensors, self.tensors[1:]):
            if a.shape[2] != b.shape[0]:
                raise ValueError("bond dimensions do not match")
        if self.tensors[0].shape[0] != 1 or self.tensors[-1].shape[2] != 1:
            raise ValueError("open boundary bonds must have dimension 1")
        self.center = center

    @property
    def n_sites(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> list[int]:
        return [t.shape[2] for t in self.tensors[:-1]]

    def copy(self) -> MPSState:
        return MPSState([t.copy() for t in self.tensors], self.center, self.basis)

    def in_basis(self, basis: str) -> MPSState:
        """Copy with every physical index mapped to ``basis``; canonical form is kept (the map is unitary)."""
        if basis == self.basis:
            return self.copy()
        W = PAULI_BASIS if basis == "pauli" else PAULI_BASIS.conj().T
        tensors = [np.einsum("qp,lpr->lqr", W, A) for A in self.tensors]
        if basis == "pauli":
            imag = max(float(np.abs(A.imag).max()) for A in tensors)
            if imag < 1e-12 * max(float(np.abs(A).max()) for A in tensors):
                tensors = [A.real.copy() for A in tensors]
        return MPSState(tensors, self.center, basis)

    # canonical form -------------------------------------------------------

    def _left_qr(self, i: int) -> None:
        A = self.tensors[i]
        cl, d, cr = A.shape
        q, r = np.linalg.qr(A.reshape(cl * d, cr))
        self.tensors[i] = q.reshape(cl, d, q.shape[1])
        self.tensors[i + 1] = np.tensordot(r, self.tensors[i + 1], axes=(1, 0))

    def _right_qr(self, i: int) -> None:
        A = self.tensors[i]
        cl, d, cr = A.shape
        q, r = np.linalg.qr(A.reshape(cl, d * cr).T)
        self.tensors[i] = q.T.reshape(q.shape[1], d, cr)
        self.tensors[i - 1] = np.tensordot(self.tensors[i - 1], r.T, axes=(2, 0))

    def canonicalize(self, center: int) -> MPSState:
        """Bring the MPS into mixed-canonical form around ``center`` by QR sweeps."""
        if not 0 <= center < self.n_sites:
            raise IndexError(center)
        if self.center is None:
            for i in range(center):
                self._left_qr(i)
            for i in range(self.n_sites - 1, center, -1):
                self._right_qr(i)
        else:
            for i in range(self.center, center):
                self._left_qr(i)
            for i in range(self.center, center, -1):
                self._right_qr(i)
        self.center = center
        return self

    def isometry_residual(self) -> float:
        """Largest deviation from the left/right isometry conditions at the declared center."""
        if self.center is None:
            return math.inf
        worst = 0.0
        for i, A in enumerate(self.tensors):
            cl, d, cr = A.shape
            if i < self.center:
                m = A.reshape(cl * d, cr)
                worst = max(worst, np.abs(m.conj().T @ m - np.eye(cr)).max())
            elif i > self.center:
                m = A.reshape(cl, d * cr)
                worst = max(worst, np.abs(m @ m.conj().T - np.eye(cl)).max())
        return float(worst)

    # contractions ---------------------------------------------------------

    def to_vector(self) -> np.ndarray:
        """Dense ket-bra vector over site-interleaved indices ``(p_0, ..., p_{N-1})``."""
        if self.basis != "ketbra":
            return self.in_basis("ketbra").to_vector()
        v = self.tensors[0].reshape(4, -1)
        for A in self.tensors[1:]:
            v = np.tensordot(v, A, axes=(1, 0)).reshape(-1, A.shape[2])
        return v.reshape(-1)

    def to_density(self) -> np.ndarray:
        """Dense ``2^N x 2^N`` matrix (small N only)."""
        n = self.n_sites
        v = self.to_vector().reshape([2] * (2 * n))
        kets = list(range(0, 2 * n, 2))
        bras = list(range(1, 2 * n, 2))
        return v.transpose(kets + bras).reshape(2 ** n, 2 ** n)

    def contract_with(self, vectors: Sequence[np.ndarray]) -> complex:
        """Contract with a product covector given in the ket-bra basis."""
        if self.basis == "pauli":
            vectors = [np.asarray(v) @ PAULI_BASIS.conj().T for v in vectors]
        env = np.ones(1, dtype=complex)
        for A, v in zip(self.tensors, vectors):
            env = env @ np.tensordot(A, v, axes=(1, 0))
        return complex(env[0])

    def trace(self) -> complex:
        return self.contract_with([TRACE_VEC] * self.n_sites)

    def overlap(self, other: MPSState) -> complex:
        """``<self|other>`` (conjugating ``self``)."""
        if other.basis != self.basis:
            other = other.in_basis(self.basis)
        env = np.ones((1, 1), dtype=complex)
        for A, B in zip(self.tensors, other.tensors):
            env = np.tensordot(env, A.conj(), axes=(0, 0))        # (b, p, a')
            env = np.tensordot(env, B, axes=([0, 1], [0, 1]))      # (a', b')
        return complex(env[0, 0])

    def norm(self) -> float:
        return math.sqrt(max(self.overlap(self).real, 0.0))

    # checkpoints ----------------------------------------------------------

    def save(self, path, metadata: dict | None = None) -> None:
        arrays = {f"site_{i:04d}": A for i, A in enumerate(self.tensors)}
        header = {"n_sites": self.n_sites, "shapes": [list(A.shape) for A in self.tensors],
                  "center": self.center, "basis": self.basis, "metadata": metadata or {}}
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(json.dumps(header)), **arrays)

    @classmethod
    def load(cls, path) -> tuple[MPSState, dict]:
        with np.load(path) as data:
            header = json.loads(str(data["header"]))
            tensors = [data[f"site_{i:04d}"] for i in range(header["n_sites"])]
        for A, shape in zip(tensors, header["shapes"]):
            if list(A.shape) != shape:
                raise ValueError("checkpoint shape header does not match tensor")
        return cls(tensors, header["center"], header.get("basis", "ketbra")), header["metadata"]


def _check_local_density(r: np.ndarray) -> None:
    r = np.asarray(r)
    if r.shape != (2, 2):
        raise ValueError(f"local state must be 2x2, got {r.shape}")
    if not np.allclose(r, r.conj().T, atol=1e-12) or abs(np.trace(r) - 1) > 1e-12 \
            or np.linalg.eigvalsh((r + r.conj().T) / 2).min() < -1e-12:
        raise ValueError("local state is not a valid density matrix")


def product_density_mps(n_sites: int, local_states) -> MPSState:
    """Bond-dimension-1 MPS of ``rho_0 (x) rho_1 (x) ...``; one 2x2 state is repeated."""
    states = [local_states] * n_sites if np.ndim(local_states) == 2 else list(local_states)
    if len(states) != n_sites:
        raise ValueError("need one local state per site")
    for r in states:
        _check_local_density(r)
    return MPSState([np.asarray(r, dtype=complex).reshape(1, 4, 1) for r in states], center=0)


LOCAL_STATES = {
    "0": np.array([[1, 0], [0, 0]], dtype=complex),
    "1": np.array([[0, 0], [0, 1]], dtype=complex),
    "+": np.full((2, 2), 0.5, dtype=complex),
    "mixed": np.eye(2, dtype=complex) / 2,
}


def initial_product_states(n_sites: int, kind: str) -> list[np.ndarray]:
    """Named product initial states: ``zeros``, ``ones``, ``neel``, ``plus``, ``mixed``."""
    if kind == "zeros":
        return [LOCAL_STATES["0"]] * n_sites
    if kind == "ones":
        return [LOCAL_STATES["1"]] * n_sites
    if kind == "neel":
        return [LOCAL_STATES["01"[i % 2]] for i in range(n_sites)]
    if kind == "plus":
        return [LOCAL_STATES["+"]] * n_sites
    if kind == "mixed":
        return [LOCAL_STATES["mixed"]] * n_sites
    raise ValueError(f"unknown initial state {kind!r}")


# Liouvillian blocks ----------------------------------------------------------

def _superop(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``rho -> A rho B`` on two sites, reindexed to ``(p_a, p_b)`` rows and columns."""
    S = np.kron(A, B.T).reshape([2] * 8)
    # (ka, kb, ba, bb | ka', kb', ba', bb') -> (ka, ba, kb, bb | ...)
    return S.transpose(0, 2, 1, 3, 4, 6, 5, 7).reshape(16, 16)


def bond_generators(model: LindbladModel, t: float = 0.0) -> list[np.ndarray]:
    """Two-site 16x16 Liouvillian blocks whose sum is the full generator.

    Single-site dissipators are absorbed into the bond to their right, the
    last site into the final bond.
    """
    if not model.is_linear:
        raise NonlinearUnsupportedError("tensor-network engine supports eta = 0 only")
    n = model.n_sites
    eye4 = np.eye(4, dtype=complex)
    gens = []
    for h in model.hamiltonian.bond_terms():
        gens.append(-1j * (_superop(h, eye4) - _superop(eye4, h)))
    g = model.gamma_at(t)
    for ch in model.active_channels:
        if len(ch.sites) == 1:
            s = ch.sites[0]
            b = min(s, n - 2)
            L = np.kron(ch.matrix, I2) if b == s else np.kron(I2, ch.matrix)
        elif len(ch.sites) == 2 and ch.sites[1] == ch.sites[0] + 1:
            b, L = ch.sites[0], ch.matrix
        else:
            raise ValueError(f"channel {ch.label!r} is not local to one bond")
        LdL = L.conj().T @ L
        gens[b] = gens[b] + g * ch.alpha * (_superop(L, L.conj().T) - 0.5 * _superop(LdL, eye4)
                                            - 0.5 * _superop(eye4, LdL))
    return gens


@dataclass
class TEBDPlan:
    """Second-order Trotter plan built from layers of mutually commuting bond gates.

    ``ordering="sweep"`` applies half-step gates on bonds 0..N-2 and then
    N-2..0 (``2(N-1)`` gates per step). ``ordering="brick"`` applies half-step
    even bonds, full-step odd bonds and half-step even bonds again, which
    after fusing consecutive steps costs about ``N-1`` gates per step.
    """

    model: LindbladModel
    dt: float
    chi_max: int = 64
    svd_cutoff: float = 1e-10
    order: int = 2
    basis: str = "pauli"
    svd_method: str = "svd"
    ordering: str = "sweep"
    max_discarded: float | None = None
    layers: list[tuple[tuple[int, ...], float]] = field(default_factory=list)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.svd_method not in ("svd", "gram"):
            raise ValueError(f"unknown svd_method {self.svd_method!r}")
        if self.order != 2:
            raise ValueError("only second-order splittings are implemented")
        if not self.model.is_linear:
            raise NonlinearUnsupportedError("tensor-network engine supports eta = 0 only")
        bonds = range(self.model.n_sites - 1)
        h = self.dt / 2
        if self.ordering == "sweep":
            fwd = [((b,), h) for b in bonds]
            self.layers = fwd + fwd[::-1]
        elif self.ordering == "brick":
            even, odd = tuple(bonds[0::2]), tuple(bonds[1::2])
            self.layers = [(even, h), (odd, self.dt), (even, h)] if odd else [(even, self.dt)]
        else:
            raise ValueError(f"unknown ordering {self.ordering!r}")

    @property
    def gates(self) -> list[tuple[int, float]]:
        """One step as ``(bond, duration)`` pairs, before any fusion."""
        return [(b, tau) for bonds, tau in self.layers for b in bonds]

    @property
    def time_dependent(self) -> bool:
        return self.model.schedule.kind == "sinusoidal"

    def gate(self, bond: int, tau: float, t_mid: float = 0.0) -> np.ndarray:
        """``exp(tau * L_bond)`` as a 16x16 matrix (gamma evaluated at ``t_mid``)."""
        key = (bond, round(tau, 15), round(t_mid, 12) if self.time_dependent else 0.0)
        if key not in self._cache:
            gens = self._generators(t_mid)
            g = sla.expm(tau * gens[bond])
            if self.basis == "pauli":
                W2 = np.kron(PAULI_BASIS, PAULI_BASIS)
                g = W2 @ g @ W2.conj().T
                if np.abs(g.imag).max() > 1e-10:
                    raise ValueError("gate is not real in the Pauli basis; Hermiticity is broken")
                g = g.real.copy()
            self._cache[key] = g
        return self._cache[key]

    def _generators(self, t_mid: float):
        key = ("gen", round(t_mid, 12) if self.time_dependent else 0.0)
        if key not in self._cache:
            self._cache[key] = bond_generators(self.model, t_mid)
        return self._cache[key]

    def step_sequence(self, n_steps: int, t0: float = 0.0) -> list[tuple[int, float, float]]:
        """Gates for ``n_steps`` consecutive steps with adjacent identical layers fused.

        Fusion is exact for time-independent models because the fused gates
        share one generator. Layers alternate direction so the center moves
        little between gates.
        """
        layers = []
        for s in range(n_steps):
            t_mid = t0 + (s + 0.5) * self.dt
            for bonds, tau in self.layers:
                if layers and layers[-1][0] == bonds and not self.time_dependent:
                    layers[-1] = (bonds, layers[-1][1] + tau, t_mid)
                else:
                    layers.append((bonds, tau, t_mid))
        seq = []
        for i, (bonds, tau, t_mid) in enumerate(layers):
            for b in (bonds if i % 2 == 0 else bonds[::-1]):
                seq.append((b, tau, t_mid))
        return seq

    def with_dt(self, dt: float) -> TEBDPlan:
        return TEBDPlan(self.model, dt, self.chi_max, self.svd_cutoff, self.order, self.basis,
                        self.svd_method, self.ordering, self.max_discarded)


def local_liouvillian_gates(model: LindbladModel, dt: float, chi_max: int = 64,
                            svd_cutoff: float = 1e-10, basis: str = "pauli", svd_method: str = "svd",
                            ordering: str = "sweep", max_discarded: float | None = None) -> TEBDPlan:
    """Build the second-order plan; each 16x16 block is exponentiated densely on demand."""
    return TEBDPlan(model, dt, chi_max, svd_cutoff, basis=basis, svd_method=svd_method, ordering=ordering,
                    max_discarded=max_discarded)


@dataclass
class TruncationLog:
    step_discarded: list[float] = field(default_factory=list)
    step_dt: list[float] = field(default_factory=list)
    max_bond: int = 1
    bond_history: list[int] = field(default_factory=list)

    @property
    def cumulative(self) -> float:
        return float(sum(self.step_discarded))

    @property
    def max_step_discarded(self) -> float:
        return max(self.step_discarded, default=0.0)


def _svd(theta: np.ndarray):
    try:
        return sla.svd(theta, full_matrices=False, lapack_driver="gesdd", check_finite=False)
    except np.linalg.LinAlgError:
        return sla.svd(theta, full_matrices=False, lapack_driver="gesvd", check_finite=False)


GRAM_CUTOFF_FLOOR = 1e-7


def _rank(w_desc: np.ndarray, total: float, floor: float, chi_max: int, max_discarded: float | None) -> int:
    """Number of kept values given descending squared singular values ``w_desc``."""
    keep = int(np.count_nonzero(w_desc > floor))
    if max_discarded is not None:
        tail = total - np.cumsum(w_desc)  # tail[k-1] = weight dropped when keeping k
        keep = min(keep, int(np.argmax(tail <= max_discarded * total)) + 1)
    return max(1, min(keep, chi_max))


def _gram_factor(theta: np.ndarray, move_right: bool, cutoff: float, chi_max: int,
                 max_discarded: float | None = None):
    """Truncated factorization from the Gram matrix on the side that becomes an isometry.

    Orthonormality comes from ``eigh`` and the other factor is a projection
    of ``theta``, so no division by small singular values occurs. Singular
    values below ``GRAM_CUTOFF_FLOOR`` relative are not resolved and are
    always dropped.
    """
    th = theta.conj().T if np.iscomplexobj(theta) else theta.T
    G = theta @ th if move_right else th @ theta
    w, Q = sla.eigh(G, check_finite=False)
    w = np.clip(w[::-1], 0, None)
    total = float(np.sum(w))
    if total <= 0.0:
        raise DegenerateTraceError("state vanished under the gate")
    keep = _rank(w, total, max(cutoff, GRAM_CUTOFF_FLOOR) ** 2 * w[0], chi_max, max_discarded)
    discarded = max(total - float(np.sum(w[:keep])), 0.0) / total
    Q = np.ascontiguousarray(Q[:, ::-1][:, :keep])
    Qh = Q.conj().T if np.iscomplexobj(Q) else Q.T
    if move_right:
        return Q, Qh @ theta, keep, discarded
    return theta @ Q, Qh, keep, discarded


def _svd_factor(theta: np.ndarray, move_right: bool, cutoff: float, chi_max: int,
                max_discarded: float | None = None):
    U, s, Vh = _svd(theta)
    w = s ** 2
    total = float(np.sum(w))
    if total == 0.0:
        raise DegenerateTraceError("state vanished under the gate")
    keep = _rank(w, total, (cutoff * s[0]) ** 2, chi_max, max_discarded)
    discarded = float(np.sum(w[keep:])) / total
    U, s, Vh = U[:, :keep], s[:keep], Vh[:keep]
    if move_right:
        return U, s[:, None] * Vh, keep, discarded
    return U * s, Vh, keep, discarded


def apply_two_site_gate(mps: MPSState, bond: int, gate: np.ndarray, chi_max: int, svd_cutoff: float,
                        move_right: bool, method: str = "svd", max_discarded: float | None = None) -> float:
    """Apply a 16x16 gate on ``(bond, bond+1)``; returns the relative discarded weight.

    Singular values below ``svd_cutoff * s_max`` are dropped and at most
    ``chi_max`` are kept. With ``max_discarded`` the rank is further reduced
    to the smallest one whose relative discarded weight stays within it. The
    center ends on ``bond + 1`` when ``move_right`` and on ``bond`` otherwise.
    """
    if mps.center not in (bond, bond + 1):
        mps.canonicalize(bond)
    A, B = mps.tensors[bond], mps.tensors[bond + 1]
    cl, cr = A.shape[0], B.shape[2]
    theta = np.tensordot(A, B, axes=(2, 0)).reshape(cl, 16, cr)
    theta = np.einsum("pq,lqr->lpr", gate, theta).reshape(cl * 4, 4 * cr)
    factor = _gram_factor if method == "gram" else _svd_factor
    left, right, keep, discarded = factor(theta, move_right, svd_cutoff, chi_max, max_discarded)
    mps.tensors[bond] = left.reshape(cl, 4, keep)
    mps.tensors[bond + 1] = right.reshape(keep, 4, cr)
    mps.center = bond + 1 if move_right else bond
    return discarded


def _run_sequence(mps: MPSState, plan: TEBDPlan, seq) -> float:
    discarded = 0.0
    for i, (b, tau, t_mid) in enumerate(seq):
        nxt = seq[i + 1][0] if i + 1 < len(seq) else None
        move_right = nxt is None or nxt > b
        discarded += apply_two_site_gate(mps, b, plan.gate(b, tau, t_mid), plan.chi_max, plan.svd_cutoff, move_right,
                                         plan.svd_method, plan.max_discarded)
    return discarded


@dataclass
class TEBDResult:
    times: np.ndarray
    states: list[MPSState] | None
    observations: list[dict]
    log: TruncationLog
    final: MPSState


def tebd_evolve(mps: MPSState, plan: TEBDPlan, T: float, sample_every: int = 1,
                observe: Callable[[float, MPSState], dict] | None = None, store_states: bool = False,
                adaptive: bool = False, weight_ceiling: float = 1e-8, hard_ceiling: float | None = None,
                min_dt: float | None = None,
                until: Callable[[float, MPSState], bool] | None = None) -> TEBDResult:
    """Evolve to ``T`` with samples every ``sample_every`` steps of ``plan.dt``.

    With ``adaptive`` a step whose discarded weight exceeds ``weight_ceiling``
    is redone with half the step size (down to ``min_dt``). A step above
    ``hard_ceiling`` that cannot be refined further raises
    :class:`AccuracyLossError`. ``until(t, mps)`` is evaluated after each
    sample and ends the run early when it returns True.
    """
    n_steps = int(round(T / plan.dt))
    if abs(n_steps * plan.dt - T) > 1e-9 * max(T, 1):
        raise ValueError(f"T={T} is not a multiple of dt={plan.dt}")
    mps = mps.in_basis(plan.basis)
    log = TruncationLog(max_bond=max(mps.bond_dims, default=1))
    min_dt = min_dt if min_dt is not None else plan.dt / 64
    times, states, obs = [], [], []

    def record(t):
        times.append(t)
        if store_states:
            states.append(mps.copy())
        if observe is not None:
            obs.append(observe(t, mps))

    record(0.0)
    t = 0.0
    sample_dt = plan.dt * sample_every
    for k in range(1, n_steps // sample_every + 1):
        t_target = k * sample_dt
        # compare against half a step so rounding in t cannot add or drop a step
        while t_target - t > plan.dt / 2:
            n_sub = max(1, int(round((t_target - t) / plan.dt)))
            if adaptive:
                backup = mps.copy()
                w = _run_sequence(mps, plan, plan.step_sequence(1, t))
                if w > weight_ceiling and plan.dt / 2 >= min_dt:
                    mps = backup
                    plan = plan.with_dt(plan.dt / 2)
                    continue
                if hard_ceiling is not None and w > hard_ceiling:
                    log.step_discarded.append(w)
                    raise AccuracyLossError(f"discarded weight {w:.3g} above {hard_ceiling:g} at t={t:g}", log)
                log.step_discarded.append(w)
                log.step_dt.append(plan.dt)
                t += plan.dt
            else:
                w = _run_sequence(mps, plan, plan.step_sequence(n_sub, t))
                log.step_discarded.append(w)
                log.step_dt.append(plan.dt * n_sub)
                if hard_ceiling is not None and w > hard_ceiling:
                    raise AccuracyLossError(f"discarded weight {w:.3g} above {hard_ceiling:g} at t={t:g}", log)
                t += plan.dt * n_sub
            log.max_bond = max(log.max_bond, max(mps.bond_dims, default=1))
        t = t_target
        log.bond_history.append(max(mps.bond_dims, default=1))
        record(t_target)
        if until is not None and until(t_target, mps):
            break
    return TEBDResult(np.array(times), states if store_states else None, obs, log, mps)


# measurements ----------------------------------------------------------------

def _site_vector(op: np.ndarray, basis: str = "ketbra") -> np.ndarray:
    """Covector ``v`` with ``sum_p v[p] rho[p] = Tr(op rho)`` for one site."""
    v = np.asarray(op, dtype=complex).T.reshape(-1)
    if basis == "pauli":
        v = v @ PAULI_BASIS.conj().T
        if np.abs(v.imag).max() < 1e-14:
            v = v.real
    return v


def mps_expectation(mps: MPSState, operator: PauliString) -> complex:
    """``Tr(O rho) / Tr(rho)``; the division absorbs truncation-induced trace drift."""
    operator.check_within(mps.n_sites)
    vecs = [TRACE_VEC] * mps.n_sites
    for s, a in operator.sites:
        vecs[s] = _site_vector(PAULI[a])
    tr = mps.trace()
    if abs(tr) < 1e-10:
        raise DegenerateTraceError(f"|Tr rho| = {abs(tr):.3g}")
    return operator.coefficient * mps.contract_with(vecs) / tr


def _transfer(A: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.tensordot(A, v, axes=(1, 0))


def mps_local_expectations(mps: MPSState, axis: str = "Z") -> tuple[np.ndarray, np.ndarray]:
    """All ``<s_i>`` and ``<s_i s_j>`` for one Pauli axis, trace-normalized.

    Uses cached identity environments, ``O(N^2 chi^2)`` overall.
    """
    n = mps.n_sites
    vs = _site_vector(PAULI[axis], mps.basis)
    vi = _site_vector(I2, mps.basis)
    T_id = [_transfer(A, vi) for A in mps.tensors]
    T_op = [_transfer(A, vs) for A in mps.tensors]
    left = [np.ones(1)]
    for Tm in T_id:
        left.append(left[-1] @ Tm)
    right = [np.ones(1)]
    for Tm in reversed(T_id):
        right.append(Tm @ right[-1])
    right = right[::-1]  # right[i] = contraction of sites i..n-1
    tr = left[-1][0]
    if abs(tr) < 1e-10:
        raise DegenerateTraceError(f"|Tr rho| = {abs(tr):.3g}")
    single = np.array([left[i] @ T_op[i] @ right[i + 1] for i in range(n)]) / tr
    pair = np.zeros((n, n), dtype=np.result_type(tr, complex))
    for i in range(n):
        env = left[i] @ T_op[i]
        pair[i, i] = 1.0
        for j in range(i + 1, n):
            pair[i, j] = pair[j, i] = (env @ T_op[j] @ right[j + 1]) / tr
            env = env @ T_id[j]
    return single.real, pair.real


def operator_entanglement_entropy(mps: MPSState, cut: int) -> float:
    """Schmidt entropy (natural log) across the bond ``(cut, cut+1)`` of the normalized vectorized state."""
    if not 0 <= cut < mps.n_sites - 1:
        raise IndexError(cut)
    m = mps.copy().canonicalize(cut)
    A = m.tensors[cut]
    s = np.linalg.svd(A.reshape(-1, A.shape[2]), compute_uv=False)
    nrm = np.sum(s ** 2)
    if nrm == 0:
        raise DegenerateTraceError("zero-norm state")
    p = s ** 2 / nrm
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def mps_trace_distance_proxy(a: MPSState, b: MPSState) -> float:
    """Frobenius distance ``|rho_a - rho_b|_F`` of the trace-normalized densities."""
    if a.n_sites != b.n_sites:
        raise ValueError("states have different sizes")
    ta, tb = a.trace().real, b.trace().real
    d2 = a.overlap(a).real / ta ** 2 + b.overlap(b).real / tb ** 2 - 2 * a.overlap(b).real / (ta * tb)
    return math.sqrt(max(d2, 0.0))
