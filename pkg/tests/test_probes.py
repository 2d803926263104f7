from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_density
from openq.operators import PauliString, boundary_driven_ising
from openq.oracle import integrate_master_equation, product_density
from openq.probes import (UNDEFINED_SATURATED, UNDEFINED_ZERO, CorrelationMatrix, averaged_correlation_length,
                          chi_min_search, connected_correlations, correlation_error, correlation_length_report,
                          correlation_series_tn, decay_bound, distance_averaged_peak, mixing_time,
                          pairwise_correlation_length, write_correlations_csv)
from openq.tn import initial_product_states, local_liouvillian_gates, product_density_mps, tebd_evolve


def dense_connected(rho: np.ndarray, n: int) -> np.ndarray:
    z = [PauliString.single(i, "Z").dense(n) for i in range(n)]
    m = np.array([np.trace(a @ rho).real for a in z])
    c = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            c[i, j] = np.trace(z[i] @ z[j] @ rho).real - m[i] * m[j]
    return c


class TestConnectedCorrelations:
    def test_product_state_has_no_correlations(self, rng):
        rho = product_density([random_density(1, rng) for _ in range(3)])
        c = connected_correlations(rho).c
        assert np.abs(c - np.diag(np.diag(c))).max() <= 1e-14

    def test_classical_correlation(self):
        rho = np.zeros((4, 4))
        rho[0, 0] = rho[3, 3] = 0.5
        assert connected_correlations(rho).c[0, 1] == pytest.approx(1.0)

    def test_dense_state_matches_direct_traces(self, rng):
        rho = random_density(3, rng)
        assert np.abs(connected_correlations(rho).c - dense_connected(rho, 3)).max() <= 1e-12

    def test_tensor_network_matches_densified(self):
        model = boundary_driven_ising(4, gamma=0.1)
        plan = local_liouvillian_gates(model, 0.05)
        mps = tebd_evolve(product_density_mps(4, initial_product_states(4, "zeros")), plan, 2.0).final
        rho = mps.to_density()
        rho = rho / np.trace(rho)
        assert np.abs(connected_correlations(mps).c - dense_connected(rho, 4)).max() <= 1e-8

    def test_evolved_oracle_state_is_correlated(self):
        model = boundary_driven_ising(4, gamma=0.1)
        rho = integrate_master_equation(model, product_density(initial_product_states(4, "zeros")), 2.0,
                                        1e-2, sample_every=200).states[-1]
        assert np.abs(connected_correlations(rho).c[0, 1]) > 1e-3

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            CorrelationMatrix(0.0, np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_origin_row(self):
        c = np.arange(16, dtype=float).reshape(4, 4)
        cm = CorrelationMatrix(0.0, c + c.T)
        assert np.array_equal(cm.from_origin(), (c + c.T)[0, 1:])
        assert np.array_equal(cm.at_distance(2), [(c + c.T)[0, 2], (c + c.T)[1, 3]])


class TestPairLength:
    def test_analytic_inversion(self):
        assert pairwise_correlation_length(math.exp(-2), 2).value == pytest.approx(1.0, rel=1e-14)

    def test_zero_correlation(self):
        p = pairwise_correlation_length(0.0, 1)
        assert not p.defined and p.reason == UNDEFINED_ZERO and math.isnan(p.value)

    @pytest.mark.parametrize("c", [1.0, -1.0, 1.5])
    def test_saturated(self, c):
        assert pairwise_correlation_length(c, 1).reason == UNDEFINED_SATURATED

    def test_sign_is_ignored(self):
        assert pairwise_correlation_length(-0.3, 2).value == pairwise_correlation_length(0.3, 2).value

    @pytest.mark.parametrize("kwargs", [{"d": 0}, {"norms": 0.0}])
    def test_rejects_bad_arguments(self, kwargs):
        args = {"c": 0.1, "d": 1, "norms": 1.0} | kwargs
        with pytest.raises(ValueError):
            pairwise_correlation_length(**args)

    @given(st.floats(1e-12, 1 - 1e-9), st.integers(1, 30), st.floats(0.1, 10))
    def test_round_trip(self, r, d, norms):
        c = r * norms
        C = pairwise_correlation_length(c, d, norms).value
        assert decay_bound(C, d, norms) == pytest.approx(c, rel=1e-12)


class TestAveragedLength:
    def test_equal_lengths(self):
        assert averaged_correlation_length([1.7] * 4, 3).value == pytest.approx(1.7)

    def test_two_lengths(self):
        avg = averaged_correlation_length([1.0, 3.0], 2)
        assert avg.value == 2.0
        assert avg.jensen_lhs == pytest.approx((math.exp(-2) + math.exp(-2 / 3)) / 2, rel=1e-14)
        assert avg.jensen_rhs == pytest.approx(math.exp(-1), rel=1e-14)
        assert avg.jensen_holds is True

    def test_check_skipped_for_short_lengths(self):
        avg = averaged_correlation_length([0.2, 3.0], 2)
        assert avg.jensen_holds is None

    def test_undefined_pairs_are_excluded(self):
        avg = averaged_correlation_length([pairwise_correlation_length(0.0, 1), 2.0, 4.0], 1)
        assert avg.value == 3.0 and avg.n_defined == 2 and avg.n_undefined == 1

    def test_all_undefined(self):
        avg = averaged_correlation_length([pairwise_correlation_length(0.0, 1)], 1)
        assert not avg.defined and math.isnan(avg.value)

    @given(st.lists(st.floats(0.5, 50), min_size=1, max_size=20), st.integers(1, 10))
    def test_jensen_in_concave_regime(self, lengths, d):
        lengths = [max(x, d / 2) for x in lengths]
        avg = averaged_correlation_length(lengths, d)
        assert avg.concave_regime and avg.jensen_holds is True

    def test_jensen_can_fail_outside_concave_regime(self):
        avg = averaged_correlation_length([1.0, 2.0], 3)
        assert avg.jensen_applicable and not avg.concave_regime
        assert avg.jensen_holds is False


class TestReport:
    def test_measured_state(self):
        model = boundary_driven_ising(5, gamma=0.2)
        series = correlation_series_tn(model, 2.0, 32, dt=0.05, sample_every=20)
        rep = correlation_length_report(series[-1])
        assert len(rep.pair_lengths) == 10
        for (i, j), p in rep.pair_lengths.items():
            if p.defined:
                c = abs(series[-1].c[i, j])
                assert decay_bound(p.value, j - i) == pytest.approx(c, rel=1e-12)
        for d, avg in rep.averaged.items():
            if avg.defined:
                assert avg.value <= rep.xi
        assert np.array_equal(rep.origin, series[-1].from_origin())

    def test_distance_averaged_peak(self):
        a = CorrelationMatrix(0.0, np.array([[1, 0.2, -0.5], [0.2, 1, 0], [-0.5, 0, 1.0]]))
        b = CorrelationMatrix(1.0, np.array([[1, -0.3, 0.1], [-0.3, 1, 0], [0.1, 0, 1.0]]))
        assert distance_averaged_peak([a, b]) == pytest.approx((0.3 + 0.5) / 2)


class TestMixingTime:
    def test_exponential_series(self):
        t = np.linspace(0, 10, 1001)
        res = mixing_time(t, np.exp(-t), math.exp(-3))
        assert abs(res.time - 3.0) <= 0.01 + 1e-12

    def test_transient_dip_is_ignored(self):
        res = mixing_time([0, 1, 2, 3, 4], [1.0, 1e-6, 1.0, 1e-6, 1e-6], 1e-3)
        assert res.time == 3

    def test_not_reached(self):
        assert not mixing_time([0, 1, 2], [1.0, 1e-6, 1.0], 1e-3).reached

    def test_closed_system_never_mixes(self):
        model = boundary_driven_ising(4, gamma=0.0)
        plan = local_liouvillian_gates(model, 0.05)
        res = tebd_evolve(product_density_mps(4, initial_product_states(4, "zeros")), plan, 5.0, store_states=True)
        from openq.tn import mps_trace_distance_proxy
        D = [mps_trace_distance_proxy(a, b) for a, b in zip(res.states, res.states[1:])]
        assert not mixing_time(res.times[1:], D, 1e-4).reached

    def test_rejects_nonpositive_epsilon(self):
        with pytest.raises(ValueError):
            mixing_time([0.0], [1.0], 0.0)


class TestCorrelationError:
    def test_identical(self, rng):
        c = rng.standard_normal((4, 4))
        assert correlation_error(c, c) == 0.0

    def test_zero_estimate(self, rng):
        assert correlation_error(np.zeros((3, 3)), rng.standard_normal((3, 3))) == pytest.approx(1.0)

    def test_zero_reference(self):
        assert math.isnan(correlation_error(np.ones((2, 2)), np.zeros((2, 2))))

    def test_independent_recomputation(self, rng):
        c, r = rng.standard_normal((6, 6)), rng.standard_normal((6, 6))
        expected = math.sqrt(sum((c[i, j] - r[i, j]) ** 2 for i in range(6) for j in range(6))
                             / sum(r[i, j] ** 2 for i in range(6) for j in range(6)))
        assert correlation_error(c, r) == pytest.approx(expected, rel=1e-12)


class TestChiMin:
    def test_infinite_threshold(self):
        res = chi_min_search(boundary_driven_ising(4, gamma=0.1), 0.5, math.inf, [2, 4], chi_ref=16)
        assert res.chi_min == 2

    def test_unreachable_threshold(self):
        res = chi_min_search(boundary_driven_ising(6, gamma=0.05), 2.0, 0.0, [2, 4], chi_ref=32)
        assert not res.found
        assert set(res.errors) == {2, 4}
        assert res.errors_by_time[2].shape == res.times.shape

    def test_reference_at_grid_top_is_exact(self):
        res = chi_min_search(boundary_driven_ising(5, gamma=0.1), 1.0, 1e-12, [4, 64], chi_ref=64)
        assert res.chi_min == 64 and res.errors[64] == 0.0

    def test_rejects_unsorted_grid(self):
        with pytest.raises(ValueError):
            chi_min_search(boundary_driven_ising(3), 0.5, 0.1, [4, 2])


def test_correlation_csv(tmp_path):
    cm = CorrelationMatrix(0.5, np.eye(3))
    path = tmp_path / "c.csv"
    write_correlations_csv(path, [cm], {"gamma": 0.1})
    text = path.read_text()
    assert text.startswith("#") and "0.5" in text
