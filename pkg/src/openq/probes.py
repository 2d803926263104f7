"""Complexity probes computed from state series.

Connected correlations, correlation lengths obtained by inverting the
exponential decay bound pair by pair, mixing times, correlation errors and
the minimal bond dimension search. Logarithms are natural throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import singledispatch
from typing import Mapping, Sequence

import numpy as np

from .io import write_csv
from .operators import LindbladModel, PauliString
from .tn import (MPSState, initial_product_states, local_liouvillian_gates, mps_local_expectations,
                 product_density_mps, tebd_evolve)

UNDEFINED_ZERO = "no-correlation"
UNDEFINED_SATURATED = "saturated"


# correlations ------------------------------------------------------------------

@singledispatch
def two_point(state, axis: str = "Z") -> tuple[np.ndarray, np.ndarray]:
    """Return ``(<s_i>, <s_i s_j>)`` for one Pauli axis.

    Engines plug in by registering a type or by exposing a ``two_point(axis)`` method.
    """
    if hasattr(state, "two_point"):
        return state.two_point(axis)
    raise TypeError(f"no two-point expectation interface for {type(state).__name__}")


@two_point.register
def _(state: MPSState, axis: str = "Z"):
    return mps_local_expectations(state, axis)


@two_point.register
def _(state: np.ndarray, axis: str = "Z"):
    rho = np.asarray(state)
    n = int(round(math.log2(rho.shape[0])))
    tr = np.trace(rho).real
    if axis == "Z":
        p = np.real(np.diag(rho)) / tr
        bits = (np.arange(2 ** n)[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1
        z = 1.0 - 2.0 * bits
        return z.T @ p, (z * p[:, None]).T @ z
    single = np.array([np.sum(PauliString.single(i, axis).sparse(n).multiply(rho.T)).real for i in range(n)]) / tr
    pair = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            P = PauliString.pair(i, axis, j, axis).sparse(n)
            pair[i, j] = pair[j, i] = np.sum(P.multiply(rho.T)).real / tr
    return single, pair


@dataclass(frozen=True)
class CorrelationMatrix:
    """Connected correlations ``c_ij = <s_i s_j> - <s_i><s_j>`` at time ``t``."""

    t: float
    c: np.ndarray
    axis: str = "Z"

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("correlation matrix must be square")
        if not np.allclose(c, c.T, atol=1e-10):
            raise ValueError("correlation matrix must be symmetric")
        object.__setattr__(self, "c", c)

    @property
    def n_sites(self) -> int:
        return self.c.shape[0]

    def at_distance(self, d: int) -> np.ndarray:
        return np.diagonal(self.c, offset=d).copy()

    def from_origin(self) -> np.ndarray:
        """``C_d = c_{0,d}`` for ``d = 1..N-1``."""
        return self.c[0, 1:].copy()


def connected_correlations(state, axis: str = "Z", t: float = 0.0) -> CorrelationMatrix:
    single, pair = two_point(state, axis)
    c = np.asarray(pair, dtype=float) - np.outer(single, single)
    np.fill_diagonal(c, 1.0 - np.asarray(single) ** 2)
    return CorrelationMatrix(t, (c + c.T) / 2, axis)


# correlation lengths ---------------------------------------------------------

@dataclass(frozen=True)
class PairLength:
    """A pairwise correlation length; ``value`` is NaN when undefined."""

    value: float
    reason: str = ""

    @property
    def defined(self) -> bool:
        return not self.reason


def pairwise_correlation_length(c: float, d: int, norms: float = 1.0) -> PairLength:
    """``C = -d / ln(|c| / norms)``, undefined for ``|c| = 0`` or ``|c| >= norms``."""
    if d < 1:
        raise ValueError("distance must be >= 1")
    if not norms > 0:
        raise ValueError("operator norms must be positive")
    r = abs(c) / norms
    if r == 0:
        return PairLength(math.nan, UNDEFINED_ZERO)
    if r >= 1:
        return PairLength(math.nan, UNDEFINED_SATURATED)
    return PairLength(-d / math.log(r), "")


def decay_bound(C: float, d: int, norms: float = 1.0) -> float:
    """``norms * exp(-d / C)``, the correlation implied by length ``C``."""
    return norms * math.exp(-d / C)


@dataclass(frozen=True)
class AveragedLength:
    value: float
    n_defined: int
    n_undefined: int
    jensen_lhs: float = math.nan
    jensen_rhs: float = math.nan
    jensen_applicable: bool = False
    concave_regime: bool = False
    reason: str = ""

    @property
    def defined(self) -> bool:
        return not self.reason

    @property
    def jensen_holds(self) -> bool | None:
        """``mean(e^{-d/C_i}) <= e^{-d/C_bar}``; ``None`` when ``min C_i < 1/2`` (check skipped)."""
        if not self.jensen_applicable:
            return None
        return self.jensen_lhs <= self.jensen_rhs * (1 + 1e-12)


def averaged_correlation_length(lengths: Sequence[PairLength | float], d: int) -> AveragedLength:
    """Arithmetic mean of the defined pairwise lengths at distance ``d`` plus the Jensen check.

    ``concave_regime`` records whether ``min C_i >= d/2``, where ``e^{-d/x}``
    is concave and the inequality is guaranteed.
    """
    vals = [x.value if isinstance(x, PairLength) else float(x) for x in lengths]
    defined = [v for v in vals if math.isfinite(v)]
    n_undef = len(vals) - len(defined)
    if not defined:
        return AveragedLength(math.nan, 0, n_undef, reason="all pairs undefined")
    cbar = float(np.mean(defined))
    lhs = float(np.mean([math.exp(-d / v) for v in defined]))
    rhs = math.exp(-d / cbar)
    cmin = min(defined)
    return AveragedLength(cbar, len(defined), n_undef, lhs, rhs, cmin >= 0.5, cmin >= d / 2)


@dataclass
class CorrelationLengthReport:
    t: float
    pair_lengths: dict[tuple[int, int], PairLength]
    averaged: dict[int, AveragedLength]
    xi: float
    max_abs_by_distance: dict[int, float]
    origin: np.ndarray

    @property
    def n_undefined(self) -> int:
        return sum(not p.defined for p in self.pair_lengths.values())


def correlation_length_report(cm: CorrelationMatrix) -> CorrelationLengthReport:
    """All single-site pair lengths, per-distance averages and the worst case ``xi``."""
    n = cm.n_sites
    pairs, averaged, peaks = {}, {}, {}
    for d in range(1, n):
        row = []
        for i in range(n - d):
            p = pairwise_correlation_length(cm.c[i, i + d], d)
            pairs[(i, i + d)] = p
            row.append(p)
        averaged[d] = averaged_correlation_length(row, d)
        peaks[d] = float(np.abs(cm.at_distance(d)).max())
    defined = [p.value for p in pairs.values() if p.defined]
    xi = max(defined) if defined else math.nan
    return CorrelationLengthReport(cm.t, pairs, averaged, xi, peaks, cm.from_origin())


def distance_averaged_peak(series: Sequence[CorrelationMatrix]) -> float:
    """``(1/(N-1)) sum_d max_t |C_d(t)|`` with ``C_d = c_{0,d}``."""
    origin = np.abs(np.array([cm.from_origin() for cm in series]))
    return float(origin.max(axis=0).mean())


# mixing and errors -----------------------------------------------------------

@dataclass(frozen=True)
class MixingTime:
    time: float | None
    epsilon: float

    @property
    def reached(self) -> bool:
        return self.time is not None


def mixing_time(times: Sequence[float], D: Sequence[float], epsilon: float) -> MixingTime:
    """First sampled time after which ``D`` stays below ``epsilon`` for the rest of the series."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    times, D = np.asarray(times, dtype=float), np.asarray(D, dtype=float)
    if times.shape != D.shape:
        raise ValueError("times and D must have the same length")
    above = np.flatnonzero(~(D < epsilon))
    if len(above) == 0:
        return MixingTime(float(times[0]) if len(times) else None, epsilon)
    if above[-1] + 1 >= len(times):
        return MixingTime(None, epsilon)
    return MixingTime(float(times[above[-1] + 1]), epsilon)


def correlation_error(c, c_ref) -> float:
    """Relative Frobenius error ``sqrt(sum (c - c_ref)^2 / sum c_ref^2)``; NaN if ``c_ref`` vanishes."""
    c = np.asarray(getattr(c, "c", c), dtype=float)
    c_ref = np.asarray(getattr(c_ref, "c", c_ref), dtype=float)
    if c.shape != c_ref.shape:
        raise ValueError("shape mismatch")
    denom = float(np.sum(c_ref ** 2))
    if denom == 0.0:
        return math.nan
    return math.sqrt(float(np.sum((c - c_ref) ** 2)) / denom)


@dataclass
class ChiMinResult:
    chi_min: int | None
    threshold: float
    chi_ref: int
    errors: dict[int, float]
    errors_by_time: dict[int, np.ndarray]
    times: np.ndarray

    @property
    def found(self) -> bool:
        return self.chi_min is not None


def correlation_series_tn(model: LindbladModel, T: float, chi: int, dt: float = 0.05, sample_every: int = 10,
                          initial: str = "zeros", axis: str = "Z", **plan_kw) -> list[CorrelationMatrix]:
    plan = local_liouvillian_gates(model, dt, chi_max=chi, **plan_kw)
    rho0 = product_density_mps(model.n_sites, initial_product_states(model.n_sites, initial))
    res = tebd_evolve(rho0, plan, T, sample_every=sample_every,
                      observe=lambda t, s: connected_correlations(s, axis, t))
    return res.observations


def chi_min_search(model: LindbladModel, t: float, threshold: float, chi_grid: Sequence[int],
                   chi_ref: int = 250, dt: float = 0.05, sample_every: int = 10,
                   reference: Sequence[CorrelationMatrix] | None = None, **plan_kw) -> ChiMinResult:
    """Smallest ``chi`` in the ascending grid whose final-time error against ``chi_ref`` is within ``threshold``.

    The time-resolved errors over the sampled grid are reported as well.
    """
    grid = list(chi_grid)
    if grid != sorted(grid) or not grid:
        raise ValueError("chi grid must be nonempty and ascending")
    ref = reference if reference is not None else correlation_series_tn(model, t, chi_ref, dt, sample_every, **plan_kw)
    errors, by_time = {}, {}
    chi_min = None
    for chi in grid:
        if math.isinf(threshold) and chi_min is None:
            chi_min = chi
        run = correlation_series_tn(model, t, chi, dt, sample_every, **plan_kw)
        by_time[chi] = np.array([correlation_error(a, b) for a, b in zip(run, ref)])
        errors[chi] = correlation_error(run[-1], ref[-1])
        if chi_min is None and errors[chi] <= threshold:
            chi_min = chi
    times = np.array([cm.t for cm in ref])
    return ChiMinResult(chi_min, threshold, chi_ref, errors, by_time, times)


# series and emitters ---------------------------------------------------------

@dataclass
class ProbeSeries:
    label: str
    times: np.ndarray
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if len(self.values) != len(self.times):
            raise ValueError("values and times differ in length")

    def to_csv(self, path):
        return write_csv(path, ["t", self.label], zip(self.times, self.values), self.metadata)


def write_correlations_csv(path, series: Sequence[CorrelationMatrix], metadata: Mapping | None = None):
    rows = [(cm.t, i, j, cm.c[i, j]) for cm in series for i in range(cm.n_sites) for j in range(i + 1, cm.n_sites)]
    return write_csv(path, ["t", "i", "j", "c_ij"], rows, dict(metadata or {}))


def write_lengths_csv(path, reports: Sequence[CorrelationLengthReport], metadata: Mapping | None = None):
    rows = [(r.t, d, a.value, r.xi, a.n_undefined) for r in reports for d, a in r.averaged.items()]
    meta = {"log": "natural", **dict(metadata or {})}
    return write_csv(path, ["t", "d", "C_bar", "xi", "n_undefined"], rows, meta)


def write_mixing_csv(path, results: Mapping[float, MixingTime], metadata: Mapping | None = None):
    rows = [(g, m.time if m.reached else "not-reached") for g, m in sorted(results.items())]
    meta = {"norm": "frobenius (trace-distance proxy)", **dict(metadata or {})}
    return write_csv(path, ["gamma", "t_mix"], rows, meta)


def write_errors_csv(path, result: ChiMinResult, metadata: Mapping | None = None):
    rows = [(chi, err) for chi, err in result.errors.items()]
    meta = {"chi_ref": result.chi_ref, "threshold": result.threshold,
            "chi_min": result.chi_min if result.found else "not-found", **dict(metadata or {})}
    return write_csv(path, ["chi", "epsilon"], rows, meta)
