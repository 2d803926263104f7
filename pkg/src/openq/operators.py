"""Spin-chain operators, jump channels and the Lindblad model container.

Conventions used across the whole package:

* qubit ``0`` is the most significant factor in Kronecker products;
* ``Z|0> = +|0>``;
* ``sigma_plus = |1><0|`` raises the computational-basis bit and
  ``sigma_minus = |0><1|`` lowers it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np
import scipy.sparse as sp

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_PLUS = np.array([[0, 0], [1, 0]], dtype=complex)
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)

PAULI = {"I": I2, "X": X, "Y": Y, "Z": Z}


class InvalidModelError(ValueError):
    """Raised when a model, channel or operator violates its invariants."""


class NegativeRateError(InvalidModelError):
    pass


class DegenerateOperatorError(ValueError):
    pass


@dataclass(frozen=True)
class PauliString:
    """A product of Pauli matrices on distinct sites times a coefficient.

    ``sites`` holds ``(site, axis)`` pairs with strictly increasing site
    indices; an empty tuple is the identity.
    """

    sites: tuple[tuple[int, str], ...] = ()
    coefficient: complex = 1.0

    def __post_init__(self):
        sites = tuple((int(s), str(a).upper()) for s, a in self.sites)
        object.__setattr__(self, "sites", sites)
        idx = [s for s, _ in sites]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise InvalidModelError(f"site indices must be strictly increasing: {idx}")
        if any(s < 0 for s in idx):
            raise InvalidModelError("negative site index")
        if any(a not in "XYZ" for _, a in sites):
            raise InvalidModelError(f"unknown Pauli axis in {sites}")

    @classmethod
    def single(cls, site: int, axis: str, coefficient: complex = 1.0) -> PauliString:
        return cls(((site, axis),), coefficient)

    @classmethod
    def pair(cls, i: int, a: str, j: int, b: str, coefficient: complex = 1.0) -> PauliString:
        if i > j:
            i, a, j, b = j, b, i, a
        return cls(((i, a), (j, b)), coefficient)

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(s for s, _ in self.sites)

    def check_within(self, n_sites: int) -> None:
        if any(s >= n_sites for s in self.support):
            raise InvalidModelError(f"{self} acts outside a chain of {n_sites} sites")

    def local_matrix(self) -> np.ndarray:
        """Dense matrix on the support (coefficient included)."""
        if not self.sites:
            return np.array([[self.coefficient]], dtype=complex)
        return self.coefficient * reduce(np.kron, [PAULI[a] for _, a in self.sites])

    def dense(self, n_sites: int) -> np.ndarray:
        return self.sparse(n_sites).toarray()

    def sparse(self, n_sites: int) -> sp.csr_matrix:
        self.check_within(n_sites)
        ops = [PAULI["I"]] * n_sites
        for s, a in self.sites:
            ops = ops[:s] + [PAULI[a]] + ops[s + 1:]
        return (self.coefficient * kron_all([sp.csr_matrix(o) for o in ops])).tocsr()

    def __str__(self) -> str:
        body = " ".join(f"{a}{s}" for s, a in self.sites) or "I"
        return f"{self.coefficient:g}*{body}"


def kron_all(ops):
    """Kronecker product of a list of dense or sparse matrices."""
    if any(sp.issparse(o) for o in ops):
        return reduce(lambda a, b: sp.kron(a, b, format="csr"), ops)
    return reduce(np.kron, ops)


def embed(local: np.ndarray, sites: Sequence[int], n_sites: int) -> sp.csr_matrix:
    """Embed an operator on adjacent ``sites`` into the full 2^N space."""
    sites = tuple(sites)
    if list(sites) != list(range(sites[0], sites[0] + len(sites))):
        raise InvalidModelError(f"embedding requires contiguous sites, got {sites}")
    if sites[0] < 0 or sites[-1] >= n_sites:
        raise InvalidModelError(f"sites {sites} outside chain of {n_sites}")
    if local.shape != (2 ** len(sites),) * 2:
        raise InvalidModelError(f"operator shape {local.shape} does not match support {sites}")
    left = sp.identity(2 ** sites[0], dtype=complex, format="csr")
    right = sp.identity(2 ** (n_sites - sites[-1] - 1), dtype=complex, format="csr")
    return sp.kron(sp.kron(left, sp.csr_matrix(local)), right, format="csr")


@dataclass(frozen=True)
class SpinChainHamiltonian:
    n_sites: int
    terms: tuple[PauliString, ...]
    J: float = 0.0
    h_x: float = 0.0
    h_z: float = 0.0

    def __post_init__(self):
        for t in self.terms:
            t.check_within(self.n_sites)
            sup = t.support
            if len(sup) > 2 or (len(sup) == 2 and sup[1] - sup[0] != 1):
                raise InvalidModelError(f"term {t} is not nearest-neighbour")
            if abs(complex(t.coefficient).imag) > 0:
                raise InvalidModelError(f"term {t} has a complex coefficient")

    def sparse(self) -> sp.csr_matrix:
        dim = 2 ** self.n_sites
        h = sp.csr_matrix((dim, dim), dtype=complex)
        for t in self.terms:
            h = h + t.sparse(self.n_sites)
        return h.tocsr()

    def dense(self) -> np.ndarray:
        return self.sparse().toarray()

    def bond_terms(self) -> list[np.ndarray]:
        """Two-site 4x4 blocks ``h_b`` on bonds ``(b, b+1)`` summing to H.

        Single-site terms are shared equally between the bonds touching the
        site, so the edge sites put their whole field on the edge bond.
        """
        n = self.n_sites
        blocks = [np.zeros((4, 4), dtype=complex) for _ in range(n - 1)]
        for t in self.terms:
            sup = t.support
            if len(sup) == 2:
                blocks[sup[0]] += t.local_matrix()
            elif len(sup) == 1:
                s = sup[0]
                m = t.local_matrix()
                bonds = [b for b in (s - 1, s) if 0 <= b < n - 1]
                for b in bonds:
                    lift = np.kron(m, I2) if b == s else np.kron(I2, m)
                    blocks[b] += lift / len(bonds)
            else:
                raise InvalidModelError("identity offsets are not supported in bond splitting")
        return blocks


def build_ising_hamiltonian(n_sites: int, J: float, h_x: float, h_z: float) -> SpinChainHamiltonian:
    """``H = J sum X_i X_{i+1} + h_x sum X_i + h_z sum Z_i`` with open ends."""
    if n_sites < 2:
        raise InvalidModelError(f"need at least 2 sites, got N={n_sites}")
    if not all(math.isfinite(v) for v in (J, h_x, h_z)):
        raise InvalidModelError("couplings must be finite")
    terms = [PauliString.pair(i, "X", i + 1, "X", J) for i in range(n_sites - 1)]
    terms += [PauliString.single(i, "X", h_x) for i in range(n_sites)]
    terms += [PauliString.single(i, "Z", h_z) for i in range(n_sites)]
    return SpinChainHamiltonian(n_sites, tuple(terms), float(J), float(h_x), float(h_z))


@dataclass(frozen=True, eq=False)
class JumpChannel:
    """A jump operator on adjacent ``sites`` with weight ``alpha`` and detector efficiency ``eta``."""

    matrix: np.ndarray
    sites: tuple[int, ...]
    alpha: float = 1.0
    eta: float = 0.0
    label: str = ""

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "sites", tuple(int(s) for s in self.sites))
        if m.shape != (2 ** len(self.sites),) * 2:
            raise InvalidModelError(f"channel {self.label!r}: matrix shape {m.shape} vs sites {self.sites}")
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise NegativeRateError(f"channel {self.label!r}: alpha must be >= 0, got {self.alpha}")
        if not 0.0 <= self.eta <= 1.0:
            raise InvalidModelError(f"channel {self.label!r}: eta must lie in [0, 1], got {self.eta}")

    @classmethod
    def from_pauli(cls, p: PauliString, alpha: float = 1.0, eta: float = 0.0, label: str = "") -> JumpChannel:
        return cls(p.local_matrix(), p.support, alpha, eta, label or str(p))

    def with_eta(self, eta: float) -> JumpChannel:
        return JumpChannel(self.matrix, self.sites, self.alpha, eta, self.label)

    def sparse(self, n_sites: int) -> sp.csr_matrix:
        return embed(self.matrix, self.sites, n_sites)


def build_boundary_channels(n_sites: int, mu: float, eta: float | Sequence[float] = 0.0) -> list[JumpChannel]:
    """Spin-flip baths on both chain ends.

    Rates are ``(1+mu, 1-mu)`` for ``(sigma+, sigma-)`` on site 0 and the
    reverse on site ``N-1``; the global dissipation strength lives on the
    model.
    """
    if n_sites < 2:
        raise InvalidModelError(f"need at least 2 sites, got N={n_sites}")
    if abs(mu) > 1:
        raise NegativeRateError(f"|mu| must be <= 1, got {mu}")
    etas = [float(eta)] * 4 if np.isscalar(eta) else [float(e) for e in eta]
    if len(etas) != 4:
        raise InvalidModelError("eta must be a scalar or one value per boundary channel")
    last = n_sites - 1
    spec = [
        (SIGMA_PLUS, 0, 1 + mu, "sigma+_0"),
        (SIGMA_MINUS, 0, 1 - mu, "sigma-_0"),
        (SIGMA_PLUS, last, 1 - mu, f"sigma+_{last}"),
        (SIGMA_MINUS, last, 1 + mu, f"sigma-_{last}"),
    ]
    return [JumpChannel(m, (s,), a, e, lab) for (m, s, a, lab), e in zip(spec, etas)]


def randomized_pauli_channels(n_sites: int, seed: int, n_jump_sites: int = 2,
                              eta: float = 0.0) -> list[JumpChannel]:
    """Random-site, random-axis Pauli jump operators (one draw per run)."""
    rng = np.random.default_rng(seed)
    sites = sorted(rng.choice(n_sites, size=n_jump_sites, replace=False).tolist())
    axes = rng.choice(list("XYZ"), size=n_jump_sites).tolist()
    return [JumpChannel.from_pauli(PauliString.single(s, a), 1.0, eta, f"{a}_{s}")
            for s, a in zip(sites, axes)]


@dataclass(frozen=True)
class Schedule:
    """Time dependence of the dissipation strength.

    ``kind`` is one of ``constant``, ``sinusoidal`` or ``random-sites``.
    Sinusoidal means ``gamma(t) = gamma_max |sin(pi t / t_total)|``; the
    random-site protocol keeps gamma constant and draws the channels from
    ``seed`` once per run.
    """

    kind: str = "constant"
    gamma_max: float | None = None
    t_total: float | None = None
    seed: int | None = None
    n_jump_sites: int = 2

    def __post_init__(self):
        if self.kind not in ("constant", "sinusoidal", "random-sites"):
            raise InvalidModelError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "sinusoidal":
            if self.gamma_max is None or self.t_total is None:
                raise InvalidModelError("sinusoidal schedule needs gamma_max and t_total")
            if not (math.isfinite(self.gamma_max) and self.gamma_max >= 0):
                raise InvalidModelError("gamma_max must be finite and >= 0")
            if not (math.isfinite(self.t_total) and self.t_total > 0):
                raise InvalidModelError("t_total must be finite and > 0")
        if self.kind == "random-sites" and self.seed is None:
            raise InvalidModelError("random-sites schedule requires an explicit seed")


@dataclass(frozen=True)
class LindbladModel:
    hamiltonian: SpinChainHamiltonian
    channels: tuple[JumpChannel, ...]
    gamma: float = 0.0
    schedule: Schedule = field(default_factory=Schedule)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise NegativeRateError(f"gamma must be finite and >= 0, got {self.gamma}")
        for ch in self.channels:
            if max(ch.sites) >= self.n_sites:
                raise InvalidModelError(f"channel {ch.label!r} acts outside the chain")

    @property
    def n_sites(self) -> int:
        return self.hamiltonian.n_sites

    @property
    def active_channels(self) -> tuple[JumpChannel, ...]:
        """Channels with nonzero weight; zero-rate channels do not contribute."""
        return tuple(ch for ch in self.channels if ch.alpha > 0)

    @property
    def is_linear(self) -> bool:
        return all(ch.eta == 0 for ch in self.active_channels)

    def gamma_at(self, t: float) -> float:
        if self.schedule.kind == "sinusoidal":
            return self.schedule.gamma_max * abs(math.sin(math.pi * t / self.schedule.t_total))
        return self.gamma

    def with_gamma(self, gamma: float) -> LindbladModel:
        return LindbladModel(self.hamiltonian, self.channels, gamma, self.schedule)

    def with_eta(self, eta: float) -> LindbladModel:
        return LindbladModel(self.hamiltonian, tuple(c.with_eta(eta) for c in self.channels),
                             self.gamma, self.schedule)


def boundary_driven_ising(n_sites: int, J: float = 1.0, h_x: float = -2.0, h_z: float = -2.0,
                          gamma: float = 0.1, mu: float = 0.5, eta: float | Sequence[float] = 0.0,
                          schedule: Schedule | None = None) -> LindbladModel:
    """Ising chain with boundary spin-flip baths, or random Pauli baths under the random-site schedule."""
    schedule = schedule or Schedule()
    h = build_ising_hamiltonian(n_sites, J, h_x, h_z)
    if schedule.kind == "random-sites":
        e = float(eta) if np.isscalar(eta) else float(eta[0])
        channels = randomized_pauli_channels(n_sites, schedule.seed, schedule.n_jump_sites, e)
    else:
        channels = build_boundary_channels(n_sites, mu, eta)
    if schedule.kind == "sinusoidal":
        gamma = schedule.gamma_max
    return LindbladModel(h, tuple(channels), gamma, schedule)


@dataclass(frozen=True, eq=False)
class JumpDecomposition:
    """``L = U exp(-H_D T_D) V`` up to the cutoff on zero singular values."""

    U: np.ndarray
    D: np.ndarray
    V: np.ndarray
    exponent: np.ndarray  # diagonal of H_D T_D
    b: float
    epsilon: float

    @property
    def diagonal_approx(self) -> np.ndarray:
        return np.diag(np.exp(-self.exponent))

    def reconstruct(self) -> np.ndarray:
        return self.U @ self.diagonal_approx @ self.V


def decompose_jump(L: np.ndarray, epsilon: float, expectation_D2: float) -> JumpDecomposition:
    """SVD of a jump operator with the diagonal factor written as an exponential.

    Zero singular values get the exponent ``b = ln(1/epsilon) + ln(1/<D^2>)``.
    """
    L = np.asarray(L, dtype=complex)
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if expectation_D2 <= 0:
        raise ValueError(f"<D^2> lower bound must be positive, got {expectation_D2}")
    if not np.any(L):
        raise InvalidModelError("jump operator is zero")
    U, s, V = np.linalg.svd(L)
    tol = max(L.shape) * np.finfo(float).eps * s[0]
    b = math.log(1 / epsilon) + math.log(1 / expectation_D2)
    nonzero = s > tol
    exponent = np.where(nonzero, -np.log(np.where(nonzero, s, 1.0)), b)
    D = np.where(nonzero, s, 0.0)
    return JumpDecomposition(U, np.diag(D), V, exponent, b, epsilon)


def spectral_norm(op, tol: float = 1e-8, max_iter: int = 10_000, dense_limit: int = 4096) -> float:
    """Largest singular value; dense SVD up to ``dense_limit`` rows, power iteration above."""
    n = op.shape[0]
    if n <= dense_limit:
        a = op.toarray() if sp.issparse(op) else np.asarray(op)
        return float(np.linalg.norm(a, 2))
    rng = np.random.default_rng(0)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    v /= np.linalg.norm(v)
    sigma = 0.0
    opH = op.conj().T
    for _ in range(max_iter):
        w = opH @ (op @ v)
        new = math.sqrt(float(np.linalg.norm(w)))
        v = w / np.linalg.norm(w)
        if abs(new - sigma) <= tol * max(new, 1.0):
            return new
        sigma = new
    return sigma


@dataclass(frozen=True, eq=False)
class NormalizedSplit:
    lambda1: float
    H1: np.ndarray
    lambda2: float
    H2: np.ndarray
    scale: float
    hermitian_only: bool = False

    def __iter__(self):
        return iter((self.lambda1, self.H1, self.lambda2, self.H2))

    def reconstruct(self) -> np.ndarray:
        return self.lambda1 * self.H1 - 1j * self.lambda2 * self.H2


def normalize_split(H_eff) -> NormalizedSplit:
    """Write ``H_eff / scale = l1 H1 - i l2 H2`` with unit-norm Hermitian H1, H2.

    ``scale = sqrt(|Herm|^2 + |AntiHerm|^2)`` in spectral norm, which makes
    ``l1^2 + l2^2 = 1`` exact.
    """
    H = H_eff.toarray() if sp.issparse(H_eff) else np.asarray(H_eff, dtype=complex)
    if not np.all(np.isfinite(H)):
        raise ValueError("H_eff has non-finite entries")
    herm = (H + H.conj().T) / 2
    # H = herm - i * anti with anti Hermitian
    anti = 1j * (H - H.conj().T) / 2
    n1, n2 = spectral_norm(herm), spectral_norm(anti)
    tiny = 1e-14 * max(1.0, float(np.abs(H).max(initial=0.0)))
    if n1 <= tiny and n2 <= tiny:
        raise DegenerateOperatorError("H_eff is zero")
    if n2 <= tiny:
        return NormalizedSplit(1.0, herm / n1, 0.0, np.zeros_like(H), n1, hermitian_only=True)
    if n1 <= tiny:
        return NormalizedSplit(0.0, np.zeros_like(H), 1.0, anti / n2, n2)
    scale = math.hypot(n1, n2)
    return NormalizedSplit(n1 / scale, herm / n1, n2 / scale, anti / n2, scale)


def effective_hamiltonian(model: LindbladModel, t: float = 0.0, psi: np.ndarray | None = None,
                          dense: bool = True):
    """No-jump generator ``H - (i gamma/2) sum_k alpha_k (L_k^dag L_k - <L_k^dag L_k>)``.

    The expectation shift is dropped when ``psi`` is None.
    """
    n = model.n_sites
    g = model.gamma_at(t)
    H = model.hamiltonian.sparse().astype(complex)
    for ch in model.active_channels:
        L = ch.sparse(n)
        LdL = (L.conj().T @ L).tocsr()
        shift = 0.0
        if psi is not None:
            shift = float(np.real(np.vdot(psi, LdL @ psi)) / np.real(np.vdot(psi, psi)))
        H = H - 0.5j * g * ch.alpha * (LdL - shift * sp.identity(2 ** n, format="csr"))
    return H.toarray() if dense else H.tocsr()
