"""Cost estimates for the jump-based quantum algorithm.

Every big-O constant is set to 1. Counts are rounded up to integers and
floored at 1. The numbers are meant for trend comparison across
parameters, not as absolute resource predictions.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .operators import JumpChannel, LindbladModel

CONSTANTS_NOTE = "constants=1 estimate"
MAX_COMMUTATOR_QUBITS = 12


@dataclass(frozen=True)
class ComplexityInput:
    """Parameters of the cost formulas.

    Attributes:
        lambda1: Weight of the Hermitian part of the normalized generator.
        lambda2: Weight of the anti-Hermitian part; ``lambda1^2 + lambda2^2 = 1``.
        T: Rescaled final time.
        epsilon: Target error.
        K: Even Trotter order.
        M_K: Number of terms in the anti-Hermitian part.
        C_bar: Average correlation length.
        dim: Lattice dimension (1, 2 or 3).
        N: Number of sites.
        xi: Worst-case correlation length.
        tau_c: Bath memory time; 0 means Markovian.
        lam: Interaction strength in the space-time bound.
    """

    lambda1: float
    lambda2: float
    T: float
    epsilon: float
    K: int = 2
    M_K: int = 1
    C_bar: float = 1.0
    dim: int = 1
    N: int = 1
    xi: float = 1.0
    tau_c: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("split weights must be nonnegative")
        if abs(self.lambda1 ** 2 + self.lambda2 ** 2 - 1) > 1e-12:
            raise ValueError("split weights must satisfy lambda1^2 + lambda2^2 = 1")
        if self.K < 2 or self.K % 2:
            raise ValueError("K must be even and >= 2")
        if self.dim not in (1, 2, 3):
            raise ValueError("dim must be 1, 2 or 3")
        for name in ("T", "epsilon", "C_bar", "lam"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v) or (name == "epsilon" and v == math.inf)):
                raise ValueError(f"{name} must be positive and finite")
        if self.M_K < 1 or self.N < 1:
            raise ValueError("M_K and N must be >= 1")
        if self.xi < 0 or self.tau_c < 0:
            raise ValueError("xi and tau_c must be >= 0")

    def with_(self, **kw) -> ComplexityInput:
        return replace(self, **kw)


def _exp(x: float) -> float:
    """``exp`` that saturates to ``inf`` instead of raising."""
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _count(x: float) -> int:
    """Round a real-valued count up and floor it at 1."""
    if math.isnan(x):
        raise ValueError("count is NaN")
    return max(1, math.ceil(x))


@dataclass(frozen=True)
class TrotterSteps:
    N1: int
    N2: int
    unitary_only: bool
    formula: str = ("N2 = ceil(((l1 l2 T)^(K+1) * 3/eps)^(1/K)); "
                    "N1 = ceil((l2 T)^((K+1)/K) / (max(1, N2_real) (eps/3)^(1/K)))")


def trotter_steps(inp: ComplexityInput) -> TrotterSteps:
    """Outer steps ``N2`` from the Trotter error budget ``eps/3`` and inner sub-steps ``N1``.

    ``N1`` divides by the unrounded ``N2`` floored at 1. Dividing by the
    rounded count would let ``N1`` drop when ``N2`` crosses an integer.
    """
    K, eps = inp.K, inp.epsilon
    n2_real = ((inp.lambda1 * inp.lambda2 * inp.T) ** (K + 1) * 3 / eps) ** (1 / K)
    n2 = _count(n2_real)
    n1 = _count((inp.lambda2 * inp.T) ** ((K + 1) / K) / (max(1.0, n2_real) * (eps / 3) ** (1 / K)))
    return TrotterSteps(n1, n2, inp.lambda2 == 0)


def domain_size(inp: ComplexityInput, N2: int) -> float:
    """``v = C_bar ln(M_K N2 / eps)``."""
    if not inp.C_bar > 0:
        raise ValueError("C_bar must be positive")
    return inp.C_bar * math.log(inp.M_K * N2 / inp.epsilon)


def channels_commute(channels: Sequence[JumpChannel], n_sites: int, gamma: float = 1.0,
                     atol: float = 1e-12) -> bool | None:
    """Whether the anti-Hermitian terms ``alpha_k L_k^dag L_k`` commute pairwise.

    Checked densely on the joint support of each pair; ``None`` when a
    support exceeds ``MAX_COMMUTATOR_QUBITS``.
    """
    from .operators import embed

    terms = [(ch.sites, ch.matrix.conj().T @ ch.matrix * ch.alpha * gamma) for ch in channels]
    for (sa, a), (sb, b) in itertools.combinations(terms, 2):
        if not set(sa) & set(sb):
            continue
        lo, hi = min(sa + sb), max(sa + sb)
        width = hi - lo + 1
        if width > MAX_COMMUTATOR_QUBITS:
            return None
        A = embed(a, [s - lo for s in sa], width).toarray()
        B = embed(b, [s - lo for s in sb], width).toarray()
        if np.abs(A @ B - B @ A).max() > atol:
            return False
    return True


@dataclass(frozen=True)
class SampleCost:
    general_per_step: float
    count_form: float
    commuting_per_run: float
    commuting: bool | None
    note: str = CONSTANTS_NOTE

    @property
    def selected(self) -> str:
        return "commuting_per_run" if self.commuting else "general_per_step"

    @property
    def value(self) -> float:
        return getattr(self, self.selected)


def sample_cost_nonhermitian(inp: ComplexityInput, channels: Sequence[JumpChannel] | None = None,
                             n_sites: int | None = None) -> SampleCost:
    """Sampling cost of the non-Hermitian part in three labelled forms.

    ``general_per_step``: ``M_K^2 (l2 T)^(1+1/K) e^(C^dim) eps^-(1+1/K)``.
    ``count_form``: ``N1 N2 M_K^2 e^(C^dim) / eps``.
    ``commuting_per_run``: ``M_K^2 (l1 l2 T)^(2+2/K) e^(C^dim) eps^-(1+2/K)``.
    """
    K, eps = inp.K, inp.epsilon
    locality = _exp(inp.C_bar ** inp.dim)
    general = inp.M_K ** 2 * (inp.lambda2 * inp.T) ** (1 + 1 / K) * locality * eps ** -(1 + 1 / K)
    steps = trotter_steps(inp)
    count = steps.N1 * steps.N2 * inp.M_K ** 2 * locality / eps
    commuting_run = inp.M_K ** 2 * (inp.lambda1 * inp.lambda2 * inp.T) ** (2 + 2 / K) * locality * eps ** -(1 + 2 / K)
    commuting = None
    if channels is not None:
        commuting = channels_commute(channels, n_sites or 1 + max(s for ch in channels for s in ch.sites))
    return SampleCost(general, count, commuting_run, commuting)


@dataclass(frozen=True)
class SpacetimeBound:
    m: int
    markovian: bool
    n_steps: int
    bound: float
    note: str = CONSTANTS_NOTE


def spacetime_bound(inp: ComplexityInput) -> SpacetimeBound:
    """Memory depth ``m``, step count and the ancilla x depth bound ``N xi (lam T)^(1+1/K) eps^(-1/K)``."""
    K, eps = inp.K, inp.epsilon
    steps_real = (inp.lam * inp.T) ** (1 / K) * eps ** (-1 / K)
    m = _count(inp.tau_c * steps_real)
    n_steps = _count(inp.lam * inp.T * steps_real)
    bound = inp.N * inp.xi * (inp.lam * inp.T) ** (1 + 1 / K) * eps ** (-1 / K)
    return SpacetimeBound(m, inp.tau_c == 0, n_steps, bound)


@dataclass(frozen=True)
class ComplexityReport:
    N1: int
    N2: int
    v: float
    S_NH: float
    S_NH_variants: dict
    spacetime: float
    m: int
    markovian: bool
    unitary_only: bool
    note: str = CONSTANTS_NOTE

    def as_row(self) -> dict:
        d = asdict(self)
        variants = d.pop("S_NH_variants")
        d.update({f"S_NH_{k}": v for k, v in variants.items()})
        return d


def complexity_report(inp: ComplexityInput, channels: Sequence[JumpChannel] | None = None) -> ComplexityReport:
    steps = trotter_steps(inp)
    cost = sample_cost_nonhermitian(inp, channels)
    st = spacetime_bound(inp)
    variants = {"general_per_step": cost.general_per_step, "count_form": cost.count_form,
                "commuting_per_run": cost.commuting_per_run}
    return ComplexityReport(steps.N1, steps.N2, domain_size(inp, steps.N2), cost.value, variants,
                            st.bound, st.m, st.markovian, steps.unitary_only)


def model_input(model: LindbladModel, T: float, epsilon: float, C_bar: float, xi: float, K: int = 2,
                tau_c: float = 1.0, lam: float = 1.0) -> ComplexityInput:
    """Fill the split weights and ``M_K`` from a model's effective generator (dense, small N)."""
    from .operators import effective_hamiltonian, normalize_split

    split = normalize_split(effective_hamiltonian(model))
    l1, l2 = split.lambda1, split.lambda2
    norm = math.hypot(l1, l2)
    return ComplexityInput(l1 / norm, l2 / norm, T, epsilon, K, max(1, len(model.active_channels)), C_bar,
                           1, model.n_sites, xi, tau_c, lam)
