"""Exact reference dynamics for small chains.

Density matrices are plain ``(2^N, 2^N)`` complex arrays. Vectorization is
row-major, ``|rho>> [i * 2^N + j] = rho[i, j]``, so that
``vec(A rho B) = (A kron B^T) vec(rho)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .operators import LindbladModel, PauliString

DENSE_LIMIT = 6
MATRIX_FREE_LIMIT = 10


class NonlinearModelError(ValueError):
    """The requested linear-only construction got a channel with eta > 0."""


class StepSizeError(RuntimeError):
    def __init__(self, message: str, suggested_dt: float | None = None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class ShapeError(ValueError):
    pass


def n_sites_of(rho: np.ndarray) -> int:
    d = rho.shape[0]
    n = int(round(math.log2(d))) if d > 0 else -1
    if rho.ndim != 2 or rho.shape[1] != d or 2 ** n != d:
        raise ShapeError(f"not a 2^N x 2^N matrix: shape {rho.shape}")
    return n


def check_density(rho: np.ndarray, tol: float = 1e-10, eig_tol: float = 1e-8) -> None:
    n_sites_of(rho)
    if np.linalg.norm(rho - rho.conj().T) > tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise ValueError(f"density matrix trace is {np.trace(rho).real}")
    if np.linalg.eigvalsh((rho + rho.conj().T) / 2).min() < -eig_tol:
        raise ValueError("density matrix has a negative eigenvalue")


def vectorize(rho: np.ndarray) -> np.ndarray:
    n_sites_of(rho)
    return np.asarray(rho, dtype=complex).reshape(-1).copy()


def unvectorize(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec)
    d = int(round(math.sqrt(vec.size)))
    if vec.ndim != 1 or d * d != vec.size or (d & (d - 1)):
        raise ShapeError(f"vector of length {vec.size} is not 4^N")
    return vec.reshape(d, d).copy()


def product_density(local_states, n_sites: int | None = None) -> np.ndarray:
    """Tensor product of single-site density matrices (or one repeated)."""
    if isinstance(local_states, np.ndarray) and local_states.ndim == 2:
        local_states = [local_states] * n_sites
    rho = np.array([[1.0 + 0j]])
    for r in local_states:
        rho = np.kron(rho, r)
    return rho


def basis_density(bits: str) -> np.ndarray:
    d = 2 ** len(bits)
    rho = np.zeros((d, d), dtype=complex)
    k = int(bits, 2)
    rho[k, k] = 1
    return rho


def pure_density(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


@dataclass(frozen=True, eq=False)
class _Terms:
    """Sparse operators of a model on the full Hilbert space."""

    H: sp.csr_matrix
    L: tuple[sp.csr_matrix, ...]
    LdL: tuple[sp.csr_matrix, ...]
    alpha: np.ndarray
    eta: np.ndarray

    @classmethod
    def from_model(cls, model: LindbladModel, dense_below: int = 7) -> _Terms:
        n = model.n_sites
        chans = model.active_channels
        conv = (lambda m: m.toarray()) if n < dense_below else (lambda m: m.tocsr())
        L = tuple(conv(c.sparse(n)) for c in chans)
        return cls(
            conv(model.hamiltonian.sparse()),
            L,
            tuple(l.conj().T @ l for l in L),
            np.array([c.alpha for c in chans], dtype=float),
            np.array([c.eta for c in chans], dtype=float),
        )


def _herm(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def lindblad_rhs(model: LindbladModel, terms: _Terms | None = None, drift: str = "standard"
                 ) -> Callable[[np.ndarray, float], np.ndarray]:
    """Right-hand side ``f(rho, t)`` of the (possibly nonlinear) master equation.

    ``drift='standard'`` uses ``<L^dag L>`` in the nonlinear term (trace
    preserving); ``drift='literal'`` uses ``<L L^dag>`` as printed in the
    source equation, kept for comparison only.
    """
    if drift not in ("standard", "literal"):
        raise ValueError(f"unknown drift convention {drift!r}")
    terms = terms or _Terms.from_model(model)
    LLd = tuple(l @ l.conj().T for l in terms.L) if drift == "literal" else terms.LdL

    def rhs(rho: np.ndarray, t: float) -> np.ndarray:
        # every intermediate stays Hermitian, so right products are adjoints of left ones
        hr = terms.H @ rho
        out = -1j * (hr - _herm(hr))
        g = model.gamma_at(t)
        if g == 0:
            return out
        tr = np.trace(rho).real
        for L, LdL, Ld2, a, e in zip(terms.L, terms.LdL, LLd, terms.alpha, terms.eta):
            ar = LdL @ rho
            acc = -0.5 * (ar + _herm(ar))
            if e < 1:
                lr = L @ rho
                acc = acc + (1 - e) * (L @ _herm(lr))
            if e > 0:
                ev = _trace_product(Ld2, rho)
                acc = acc + e * (ev / tr) * rho
            out = out + (g * a) * acc
        return out

    return rhs


def _trace_product(A, rho: np.ndarray) -> float:
    """``Re Tr(A rho)`` without forming the product."""
    if sp.issparse(A):
        return float(np.real(A.multiply(rho.T).sum()))
    return float(np.real(np.sum(A * rho.T)))


def _dense(a):
    return a.toarray() if sp.issparse(a) else np.asarray(a)


def rk4_step(f, y, t, h):
    k1 = f(y, t)
    k2 = f(y + (h / 2) * k1, t + h / 2)
    k3 = f(y + (h / 2) * k2, t + h / 2)
    k4 = f(y + h * k3, t + h)
    return y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)


class LiouvillianAction:
    """Linear Lindbladian at a fixed time as a matrix (N <= 6) or matrix-free applicator (N <= 10)."""

    def __init__(self, model: LindbladModel, t: float = 0.0, mode: str | None = None):
        if not model.is_linear:
            raise NonlinearModelError("Liouvillian is only defined for eta = 0; use integrate_master_equation")
        n = model.n_sites
        if mode is None:
            mode = "dense" if n <= DENSE_LIMIT else "matrix-free"
        if mode == "dense" and n > DENSE_LIMIT:
            raise ValueError(f"dense Liouvillian limited to N <= {DENSE_LIMIT}")
        if n > MATRIX_FREE_LIMIT:
            raise ValueError(f"exact Liouvillian limited to N <= {MATRIX_FREE_LIMIT}")
        self.model, self.t, self.mode = model, t, mode
        self.n_sites = n
        self._terms = _Terms.from_model(model, dense_below=0)
        self.matrix = self._build_sparse() if mode == "dense" else None

    def _build_sparse(self) -> sp.csr_matrix:
        d = 2 ** self.n_sites
        eye = sp.identity(d, dtype=complex, format="csr")
        T = self._terms
        Lhat = -1j * (sp.kron(T.H, eye) - sp.kron(eye, T.H.T))
        g = self.model.gamma_at(self.t)
        for L, LdL, a in zip(T.L, T.LdL, T.alpha):
            Lhat = Lhat + (g * a) * (sp.kron(L, L.conj()) - 0.5 * sp.kron(LdL, eye)
                                     - 0.5 * sp.kron(eye, LdL.T))
        return Lhat.tocsr()

    def dense(self) -> np.ndarray:
        m = self.matrix if self.matrix is not None else self._build_sparse()
        return m.toarray()

    def apply(self, vec: np.ndarray) -> np.ndarray:
        """Matrix-free action on a vectorized operator (not assumed Hermitian)."""
        rho = unvectorize(vec)
        T = self._terms
        g = self.model.gamma_at(self.t)
        out = -1j * (T.H @ rho - (T.H.T @ rho.T).T)
        for L, LdL, a in zip(T.L, T.LdL, T.alpha):
            lr = L @ rho
            out += (g * a) * ((L.conj() @ lr.T).T - 0.5 * (LdL @ rho) - 0.5 * (LdL.T @ rho.T).T)
        return out.reshape(-1)

    def __matmul__(self, vec):
        return self.matrix @ vec if self.matrix is not None else self.apply(vec)


def build_liouvillian(model: LindbladModel, t: float = 0.0, mode: str | None = None) -> LiouvillianAction:
    return LiouvillianAction(model, t, mode)


def _as_operator(op, n_sites: int):
    if isinstance(op, PauliString):
        return op.sparse(n_sites)
    return op


@dataclass
class MasterEquationResult:
    times: np.ndarray
    states: list[np.ndarray] | None
    observables: dict[str, np.ndarray] = field(default_factory=dict)
    max_trace_drift: float = 0.0
    dt: float = 0.0
    observations: list = field(default_factory=list)


def integrate_master_equation(model: LindbladModel, rho0: np.ndarray, T: float, dt: float,
                              sample_every: int = 1, observables: Mapping | None = None,
                              store_states: bool = True, drift: str = "standard",
                              trace_tol: float = 1e-6, retries: int = 3,
                              observe: Callable[[float, np.ndarray], Any] | None = None) -> MasterEquationResult:
    """Fixed-step RK4 for ``d rho/dt = -i[H, rho] + gamma N[rho]``.

    No trace renormalization is applied; a drift beyond ``trace_tol`` halves
    ``dt`` and retries, raising :class:`StepSizeError` once retries run out.
    ``observe(t, rho)`` is called at every sample and its results are kept
    in ``observations``.
    """
    if dt <= 0 or T < dt * (1 - 1e-12):
        raise ValueError("need dt > 0 and T >= dt")
    n = n_sites_of(rho0)
    if n != model.n_sites:
        raise ShapeError(f"state has {n} sites, model has {model.n_sites}")
    if n > MATRIX_FREE_LIMIT:
        raise ValueError(f"exact integration limited to N <= {MATRIX_FREE_LIMIT}")
    for attempt in range(retries + 1):
        try:
            return _integrate(model, rho0, T, dt, sample_every, observables, store_states, drift, trace_tol,
                              observe)
        except StepSizeError as err:
            if attempt == retries or drift == "literal":
                raise
            sample_every *= 2
            dt = err.suggested_dt


def _integrate(model, rho0, T, dt, sample_every, observables, store_states, drift, trace_tol, observe=None):
    n = model.n_sites
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not a multiple of dt={dt}")
    rhs = lindblad_rhs(model, drift=drift)
    ops = {k: _as_operator(v, n) for k, v in (observables or {}).items()}
    rho = np.array(rho0, dtype=complex)
    times, states = [], []
    obs = {k: [] for k in ops}
    observations = []
    drift_max = 0.0

    def record(t, r):
        times.append(t)
        if observe is not None:
            observations.append(observe(t, r))
        if store_states:
            states.append(r.copy())
        for k, o in ops.items():
            obs[k].append(_trace_product(o, r))

    record(0.0, rho)
    for s in range(1, steps + 1):
        rho = rk4_step(rhs, rho, (s - 1) * dt, dt)
        d = abs(np.trace(rho) - 1)
        drift_max = max(drift_max, d)
        if d > trace_tol and drift == "standard":
            raise StepSizeError(f"trace drift {d:.3g} at t={s * dt:g}; try dt={dt / 2:g}", dt / 2)
        if s % sample_every == 0:
            record(s * dt, rho)
    return MasterEquationResult(np.array(times), states if store_states else None,
                                {k: np.array(v) for k, v in obs.items()}, drift_max, dt, observations)


def unitary_evolution(H, rho0: np.ndarray, t: float) -> np.ndarray:
    Hd = H.toarray() if sp.issparse(H) else H
    U = sla.expm(-1j * t * Hd)
    return U @ rho0 @ U.conj().T


class KrausInstrument:
    """Three-outcome detector instrument (no jump, undetected jump, discarded click).

    ``form`` selects the Kraus set; all three agree to first order in ``dt``:

    * ``'linear'``: ``K0 = I - i H dt - G dt``, ``K_jp = sqrt(g a (1-eta) dt) L``;
    * ``'exponential'``: ``K0 = exp(-i H dt - G dt)``;
    * ``'symmetric'``: ``K0 = E^2`` and ``K_jp = sqrt(g a (1-eta) dt) E L E`` with
      ``E = exp(-(i H + G) dt/2)``, a Strang-ordered instrument.

    Here ``G = (1/2) sum_k gamma alpha_k L_k^dag L_k``.
    """

    FORMS = ("linear", "exponential", "symmetric")

    def __init__(self, model: LindbladModel, dt: float, form: str = "symmetric"):
        if form not in self.FORMS:
            raise ValueError(f"unknown Kraus form {form!r}")
        self.model, self.dt, self.form = model, dt, form
        self._terms = _Terms.from_model(model)
        self._cache: dict[float, tuple] = {}

    def kraus_operators(self, t: float = 0.0):
        """``(K0, [(K_jp, K_disc), ...])`` at time ``t``."""
        g = self.model.gamma_at(t)
        if g in self._cache:
            return self._cache[g]
        T, dt = self._terms, self.dt
        H = _dense(T.H)
        G = sum((0.5 * g * a) * _dense(LdL) for LdL, a in zip(T.LdL, T.alpha)) if T.L else 0 * H
        if self.form == "linear":
            K0 = np.eye(H.shape[0]) - 1j * dt * H - dt * G
            wrap = lambda L: L
        elif self.form == "exponential":
            K0 = sla.expm(-1j * dt * H - dt * G)
            wrap = lambda L: L
        else:
            E = sla.expm(-(1j * H + G) * (dt / 2))
            K0 = E @ E
            wrap = lambda L: E @ L @ E
        jumps = []
        for L, a, e in zip(T.L, T.alpha, T.eta):
            Ld = wrap(_dense(L))
            jumps.append((math.sqrt(g * a * (1 - e) * dt) * Ld, math.sqrt(g * a * e * dt) * Ld))
        self._cache[g] = (K0, jumps)
        return self._cache[g]

    def step(self, rho: np.ndarray, t: float = 0.0) -> tuple[np.ndarray, float]:
        K0, jumps = self.kraus_operators(t)
        kept = K0 @ rho @ K0.conj().T
        p_disc = 0.0
        tr = np.trace(rho).real
        for (Kj, Kd), LdL, a, e in zip(jumps, self._terms.LdL, self._terms.alpha, self._terms.eta):
            if e < 1:
                kept = kept + Kj @ rho @ Kj.conj().T
            if e > 0:
                p_disc += self.model.gamma_at(t) * a * e * self.dt * _trace_product(LdL, rho) / tr
        p_keep = 1.0 - p_disc
        if p_keep <= 0:
            raise StepSizeError(f"p_keep={p_keep:.3g} <= 0; step too large", self.dt / 2)
        kept = (kept + _herm(kept)) / 2
        return kept / np.trace(kept).real, p_keep

    def unnormalized_map(self, t: float = 0.0) -> Callable[[np.ndarray], np.ndarray]:
        """Reduced map over the kept outcomes, linear in its argument."""
        K0, jumps = self.kraus_operators(t)
        ops = [K0] + [Kj for Kj, _ in jumps]
        return lambda E: sum(K @ E @ K.conj().T for K in ops)

    def full_map(self, t: float = 0.0) -> Callable[[np.ndarray], np.ndarray]:
        """Reduced map including discarded clicks (the record traced out)."""
        K0, jumps = self.kraus_operators(t)
        ops = [K0] + [K for pair in jumps for K in pair]
        return lambda E: sum(K @ E @ K.conj().T for K in ops)


def kraus_instrument_step(model: LindbladModel, rho: np.ndarray, dt: float, t: float = 0.0,
                          form: str = "symmetric") -> tuple[np.ndarray, float]:
    """One instrument step with detected clicks discarded and the state renormalized.

    Returns ``(rho_next, p_keep)`` where ``p_keep = 1 - sum_k gamma alpha_k
    eta_k dt <L_k^dag L_k>`` is the probability that no detected click occurred.
    """
    n_sites_of(rho)
    return KrausInstrument(model, dt, form).step(rho, t)


def kraus_evolve(model: LindbladModel, rho0: np.ndarray, T: float, dt: float,
                 form: str = "symmetric") -> tuple[np.ndarray, float]:
    """Repeated instrument steps; returns the final state and the overall keep probability."""
    inst = KrausInstrument(model, dt, form)
    rho = np.array(rho0, dtype=complex)
    log_keep = 0.0
    for s in range(int(round(T / dt))):
        rho, p = inst.step(rho, s * dt)
        log_keep += math.log(p)
    return rho, math.exp(log_keep)


def choi_matrix(channel: Callable[[np.ndarray], np.ndarray], dim: int) -> np.ndarray:
    """Choi matrix ``sum_ij |i><j| (x) channel(|i><j|)``."""
    C = np.zeros((dim * dim, dim * dim), dtype=complex)
    for i in range(dim):
        for j in range(dim):
            E = np.zeros((dim, dim), dtype=complex)
            E[i, j] = 1
            C[i * dim:(i + 1) * dim, j * dim:(j + 1) * dim] = channel(E)
    return C


@dataclass(frozen=True)
class SpectralGap:
    gap: float
    mixing_estimate: float
    n_zero: int
    unique_steady_state: bool
    no_mixing: bool


def liouvillian_spectral_gap(model: LindbladModel, zero_tol: float = 1e-9) -> SpectralGap:
    """``Delta = -max Re(lambda)`` over non-steady eigenvalues of the dense Liouvillian."""
    if model.n_sites > DENSE_LIMIT:
        raise ValueError(f"dense eigensolve limited to N <= {DENSE_LIMIT}")
    ev = np.linalg.eigvals(build_liouvillian(model, mode="dense").dense())
    zero = np.abs(ev) < zero_tol
    rest = ev[~zero]
    gap = float(-rest.real.max()) if rest.size else 0.0
    gap = max(gap, 0.0) if abs(gap) < zero_tol else gap
    no_mix = gap <= zero_tol
    return SpectralGap(0.0 if no_mix else gap, math.inf if no_mix else 1 / gap,
                       int(zero.sum()), int(zero.sum()) == 1, no_mix)


def steady_state(model: LindbladModel) -> np.ndarray:
    """Null vector of the Liouvillian, normalized to unit trace."""
    Lhat = build_liouvillian(model, mode="dense").matrix
    d = 2 ** model.n_sites
    # replace one equation with the trace condition
    trace_row = sp.csr_matrix(np.eye(d).reshape(1, -1).astype(complex))
    A = sp.vstack([Lhat[1:], trace_row]).tocsc()
    b = np.zeros(d * d, dtype=complex)
    b[-1] = 1
    rho = unvectorize(spla.spsolve(A, b))
    return (rho + rho.conj().T) / 2


def expectation(rho: np.ndarray, op) -> float:
    n = n_sites_of(rho)
    o = _as_operator(op, n)
    return float(np.real(np.sum((o @ rho).diagonal())) / np.trace(rho).real)
