"""Enumeration, exact gradients, and the statistical test helpers."""

import math

import numpy as np
import pytest

from stochinv import (
    InstanceTooLargeError,
    InvalidArgumentError,
    InvalidParameterError,
    SpanningTree,
    ThetaVector,
    TopK,
    Trace,
    TraceTable,
    chi_square_fit,
    enumerate_distribution,
    exact_gradient,
    hamming_distance,
    ks_exponential,
    run_struct,
    sample_utilities_matrix,
    trace_log_prob,
)
from conftest import complete_graph, representative_instances, seeded_theta


class TestEnumeration:
    def test_normalization_on_representatives(self):
        for _name, sdef in representative_instances():
            dist = enumerate_distribution(sdef, seeded_theta(sdef, 0))
            assert dist.total_prob == pytest.approx(1.0, abs=1e-9)

    def test_log_prob_agreement(self):
        for _name, sdef in representative_instances():
            theta = seeded_theta(sdef, 1)
            dist = enumerate_distribution(sdef, theta)
            for entry in dist.entries:
                lp = trace_log_prob(sdef, entry.trace, theta)
                assert abs(math.exp(lp) - entry.prob) <= 1e-9

    def test_marginals_consistent_with_entries(self):
        sdef = TopK(4, 2)
        dist = enumerate_distribution(sdef, seeded_theta(sdef, 2))
        rebuilt = {}
        for entry in dist.entries:
            enc = sdef.encode_value(entry.structure)
            rebuilt[enc] = rebuilt.get(enc, 0.0) + entry.prob
        for enc, p in dist.structure_marginals.items():
            assert p == pytest.approx(rebuilt[enc], abs=1e-12)

    def test_cap_raises_with_count(self):
        sdef = TopK(6, 6)
        with pytest.raises(InstanceTooLargeError) as err:
            enumerate_distribution(sdef, ThetaVector.constant(sdef.key_labels), max_traces=10)
        assert err.value.cap == 10
        assert err.value.reached == 11

    def test_kruskal_triangle_probabilities(self):
        sdef = SpanningTree(range(3), complete_graph(3))
        dist = enumerate_distribution(sdef, ThetaVector.constant(sdef.key_labels))
        assert len(dist) == 6
        for entry in dist.entries:
            assert entry.prob == pytest.approx(1 / 6, abs=1e-12)

    def test_full_selection_is_uniform_over_orders(self):
        sdef = TopK(3, 3)
        dist = enumerate_distribution(sdef, ThetaVector.constant(sdef.key_labels))
        assert len(dist) == 6
        for entry in dist.entries:
            assert entry.prob == pytest.approx(1 / 6, abs=1e-12)


class TestTraceTable:
    def test_matches_trace_log_prob_under_new_theta(self):
        for _name, sdef in representative_instances():
            theta0 = seeded_theta(sdef, 3)
            dist = enumerate_distribution(sdef, theta0)
            table = TraceTable(dist)
            theta1 = seeded_theta(sdef, 4)
            lps = table.log_probs(theta1)
            for i, entry in enumerate(dist.entries):
                assert lps[i] == pytest.approx(
                    trace_log_prob(sdef, entry.trace, theta1), abs=1e-10
                )

    def test_expected_value_reweights(self):
        sdef = TopK(3, 1)
        theta0 = ThetaVector.constant(sdef.key_labels)
        dist = enumerate_distribution(sdef, theta0)
        table = TraceTable(dist)
        losses = np.array([1.0 if 0 in e.structure else 0.0 for e in dist.entries])
        assert table.expected(theta0, losses) == pytest.approx(1 / 3)
        tilted = theta0.replace(np.array([-20.0, 0.0, 0.0]))
        assert table.expected(tilted, losses) == pytest.approx(1.0, abs=1e-6)


class TestExactGradient:
    def test_constant_loss_gives_zero(self):
        sdef = TopK(3, 2)
        theta = seeded_theta(sdef, 5)
        dist = enumerate_distribution(sdef, theta)
        g = exact_gradient(dist, sdef, theta, lambda x: 3.5)
        np.testing.assert_allclose(g.values, 0.0, atol=1e-8)

    def test_analytic_two_item_value(self):
        sdef = TopK(2, 1)
        theta = ThetaVector.constant(sdef.key_labels)
        dist = enumerate_distribution(sdef, theta)
        g = exact_gradient(dist, sdef, theta, lambda x: 1.0 if 0 in x else 0.0)
        np.testing.assert_allclose(g.values, [-0.25, 0.25], atol=1e-10)

    def test_matches_finite_differences_of_expected_loss(self):
        h = 1e-6
        for _name, sdef in representative_instances():
            theta = seeded_theta(sdef, 6)
            dist = enumerate_distribution(sdef, theta)
            table = TraceTable(dist)
            target, _t = run_struct(
                sdef, np.arange(sdef.n_keys, dtype=float)
            )
            loss = lambda x: float(hamming_distance(x, target))  # noqa: E731
            losses = np.array([loss(e.structure) for e in dist.entries])
            g = exact_gradient(dist, sdef, theta, loss).values
            for i in range(sdef.n_keys):
                up = theta.theta.copy()
                up[i] += h
                down = theta.theta.copy()
                down[i] -= h
                fd = (
                    table.expected(theta.replace(up), losses)
                    - table.expected(theta.replace(down), losses)
                ) / (2 * h)
                assert g[i] == pytest.approx(fd, abs=1e-6)


class TestChiSquare:
    def test_proportional_counts_are_perfect(self):
        sdef = TopK(3, 2)
        dist = enumerate_distribution(sdef, ThetaVector.constant(sdef.key_labels))
        counts = {e.trace: 600 * e.prob for e in dist.entries}
        stat, p = chi_square_fit(counts, dist)
        assert stat == pytest.approx(0.0, abs=1e-18)
        assert p == 1.0

    def test_sampled_counts_fit(self):
        sdef = TopK(3, 2)
        theta = seeded_theta(sdef, 7)
        dist = enumerate_distribution(sdef, theta)
        mat = sample_utilities_matrix(theta, 10**5, np.random.default_rng(8))
        counts = {}
        for row in mat:
            _x, t = run_struct(sdef, row)
            counts[t] = counts.get(t, 0) + 1
        _stat, p = chi_square_fit(counts, dist)
        assert p > 1e-3

    def test_skewed_counts_rejected(self):
        sdef = TopK(3, 2)
        dist = enumerate_distribution(sdef, ThetaVector.constant(sdef.key_labels))
        counts = {e.trace: round(10**5 * e.prob) for e in dist.entries}
        first = dist.entries[0].trace
        counts[first] *= 2
        _stat, p = chi_square_fit(counts, dist)
        assert p < 1e-3

    def test_support_mismatch_raises(self):
        sdef = TopK(3, 2)
        dist = enumerate_distribution(sdef, ThetaVector.constant(sdef.key_labels))
        bogus = Trace((((0, 0),), ((0, 0),)))
        with pytest.raises(InvalidArgumentError):
            chi_square_fit({bogus: 5}, dist)

    def test_small_cells_are_pooled(self):
        sdef = TopK(4, 2)
        theta = ThetaVector(sdef.key_labels, [-3.0, 0.0, 0.0, 3.0])
        dist = enumerate_distribution(sdef, theta)
        # rare traces get expected counts below 5 at this sample size
        n = 2000
        counts = {e.trace: round(n * e.prob) for e in dist.entries}
        stat, p = chi_square_fit(counts, dist)
        assert math.isfinite(stat) and 0.0 <= p <= 1.0


class TestKSExponential:
    def test_correct_rate_accepted(self):
        rng = np.random.default_rng(9)
        samples = rng.exponential(scale=0.5, size=10**4)
        _stat, p = ks_exponential(samples, 2.0)
        assert p > 1e-3

    def test_wrong_rate_rejected(self):
        rng = np.random.default_rng(10)
        samples = rng.exponential(scale=1.0, size=10**4)
        _stat, p = ks_exponential(samples, 2.0)
        assert p < 1e-3

    def test_minimum_sample_count_statistic_range(self):
        rng = np.random.default_rng(11)
        stat, _p = ks_exponential(rng.exponential(size=100), 1.0)
        assert 0.0 <= stat <= 1.0

    def test_bad_inputs_raise(self):
        rng = np.random.default_rng(12)
        good = rng.exponential(size=200)
        with pytest.raises(InvalidParameterError):
            ks_exponential(good, 0.0)
        with pytest.raises(InvalidArgumentError):
            ks_exponential(good[:50], 1.0)
        with pytest.raises(InvalidArgumentError):
            ks_exponential(good - 5.0, 1.0)
