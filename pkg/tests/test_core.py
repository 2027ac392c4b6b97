"""The recursion, trace probabilities, scores, and conditional sampling."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochinv import (
    Arborescence,
    InvalidTraceError,
    SpanningTree,
    StructureDefinitionError,
    ThetaVector,
    TopK,
    Trace,
    cond_jacobian_vjp,
    cond_sample,
    replay_conditional,
    run_struct,
    sample_utilities,
    trace_log_prob,
    trace_score,
    value_from_trace,
)
from conftest import (
    complete_digraph,
    representative_instances,
    seeded_theta,
)


class TestRunStruct:
    def test_top_k_hand_example(self):
        sdef = TopK(3, 2)
        x, t = run_struct(sdef, [0.3, 0.1, 0.5])
        assert x == frozenset({0, 1})
        assert t.winners() == (1, 0)

    def test_immediate_stop_gives_empty_value_and_trace(self):
        sdef = SpanningTree([0], [])
        x, t = run_struct(sdef, [])
        assert x == frozenset()
        assert t.levels == ()

    def test_kruskal_triangle_hand_example(self):
        sdef = SpanningTree([0, 1, 2], [(0, 1), (0, 2), (1, 2)])
        # edges sort to ((0,1), (0,2), (1,2)); weights a=0.2, b=0.9, c=0.5
        x, t = run_struct(sdef, [0.2, 0.9, 0.5])
        assert x == frozenset({(0, 1), (1, 2)})
        assert t.winners() == (0, 2)

    def test_tie_breaks_toward_lowest_key(self):
        sdef = TopK(3, 1)
        x, _t = run_struct(sdef, [0.5, 0.5, 0.5])
        assert x == frozenset({0})

    def test_trace_determines_value(self):
        for _name, sdef in representative_instances():
            theta = seeded_theta(sdef, 1)
            rng = np.random.default_rng(0)
            for _ in range(20):
                e = sample_utilities(theta, rng)
                x, t = run_struct(sdef, e)
                assert value_from_trace(sdef, t) == x

    def test_same_trace_implies_same_value(self):
        # Utilities drawn conditionally on one trace always rebuild it.
        for _name, sdef in representative_instances():
            theta = seeded_theta(sdef, 2)
            rng = np.random.default_rng(1)
            x0, t0 = run_struct(sdef, sample_utilities(theta, rng))
            for _ in range(20):
                e, _rec = cond_sample(sdef, t0, theta, rng)
                x, t = run_struct(sdef, e)
                assert t == t0
                assert x == x0

    def test_monotone_transforms_preserve_run(self):
        # All comparisons are argmins over values with a shared subtraction
        # history, so any strictly increasing transform of the utilities
        # gives the same run -- except for the arborescence, whose
        # contractions mix subtraction histories (affine maps still work
        # there, checked below).
        transforms = [lambda v: 3.0 * v, lambda v: v**2, lambda v: np.expm1(v)]
        for name, sdef in representative_instances():
            if name == "cle":
                continue
            theta = seeded_theta(sdef, 3)
            rng = np.random.default_rng(2)
            for _ in range(10):
                e = sample_utilities(theta, rng).values
                x0, t0 = run_struct(sdef, e)
                for f in transforms:
                    x, t = run_struct(sdef, f(e))
                    assert (x, t) == (x0, t0)

    def test_positive_affine_maps_preserve_every_run(self):
        for _name, sdef in representative_instances():
            theta = seeded_theta(sdef, 4)
            rng = np.random.default_rng(3)
            for _ in range(10):
                e = sample_utilities(theta, rng).values
                x0, t0 = run_struct(sdef, e)
                x, t = run_struct(sdef, 2.5 * e)
                assert (x, t) == (x0, t0)

    def test_stop_is_true_on_empty_keys_at_termination(self):
        for _name, sdef in representative_instances():
            theta = seeded_theta(sdef, 5)
            e = sample_utilities(theta, np.random.default_rng(4))
            _x, t = run_struct(sdef, e)
            K, R = sdef.initial_state()
            for level in t.levels:
                K, R = sdef.map(K, R, [w for _pi, w in level])
            assert sdef.stop(K, R)
            if not K:
                assert sdef.stop(frozenset(), R)


class TestTraceLogProb:
    def test_uniform_top_k_chain(self):
        sdef = TopK(3, 2)
        theta = ThetaVector.constant(sdef.key_labels)
        t = Trace((((0, 0),), ((0, 1),)))
        assert trace_log_prob(sdef, t, theta) == pytest.approx(-math.log(6), abs=1e-12)

    def test_rate_weighted_chain(self):
        # rates (2, 1, 1): p = (2/4) * (1/2) = 1/4 for winners (0, 1)
        sdef = TopK(3, 2)
        theta = ThetaVector(sdef.key_labels, [-math.log(2.0), 0.0, 0.0])
        t = Trace((((0, 0),), ((0, 1),)))
        assert trace_log_prob(sdef, t, theta) == pytest.approx(math.log(0.25), abs=1e-12)

    def test_masked_winner_contributes_zero(self):
        sdef = TopK(2, 1)
        theta = ThetaVector(sdef.key_labels, [0.0, 0.0], [True, False])
        assert trace_log_prob(sdef, Trace((((0, 0),),)), theta) == 0.0

    def test_masked_loser_is_impossible(self):
        sdef = TopK(2, 1)
        theta = ThetaVector(sdef.key_labels, [0.0, 0.0], [True, False])
        assert trace_log_prob(sdef, Trace((((0, 1),),)), theta) == -math.inf

    def test_two_masked_keys_in_a_partition_rejected(self):
        sdef = TopK(2, 1)
        theta = ThetaVector(sdef.key_labels, [0.0, 0.0], [True, True])
        with pytest.raises(StructureDefinitionError):
            trace_log_prob(sdef, Trace((((0, 0),),)), theta)

    def test_infeasible_traces_raise(self):
        sdef = TopK(3, 2)
        theta = ThetaVector.constant(sdef.key_labels)
        with pytest.raises(InvalidTraceError):
            trace_log_prob(sdef, Trace((((0, 0),),)), theta)  # too short
        with pytest.raises(InvalidTraceError):
            trace_log_prob(
                sdef, Trace((((0, 0),), ((0, 1),), ((0, 2),))), theta
            )  # too long
        with pytest.raises(InvalidTraceError):
            trace_log_prob(sdef, Trace((((0, 0),), ((0, 0),))), theta)  # reused winner
        with pytest.raises(InvalidTraceError):
            trace_log_prob(sdef, Trace((((1, 0),), ((0, 1),))), theta)  # bad index

    def test_shift_invariance(self):
        for _name, sdef in representative_instances():
            theta = seeded_theta(sdef, 6)
            rng = np.random.default_rng(5)
            _x, t = run_struct(sdef, sample_utilities(theta, rng))
            base = trace_log_prob(sdef, t, theta)
            for c in (-7.5, -1.0, 0.3, 12.0):
                shifted = theta.replace(theta.theta + c)
                assert trace_log_prob(sdef, t, shifted) == pytest.approx(
                    base, abs=1e-12
                )

    def test_deep_thetas_do_not_overflow(self):
        sdef = TopK(4, 2)
        theta = ThetaVector(sdef.key_labels, [50.0, -50.0, 48.0, -47.0])
        _x, t = run_struct(sdef, sample_utilities(theta, np.random.default_rng(6)))
        assert math.isfinite(trace_log_prob(sdef, t, theta))


class TestTraceScore:
    def test_two_item_softmax(self):
        sdef = TopK(2, 1)
        theta = ThetaVector.constant(sdef.key_labels)
        g = trace_score(sdef, Trace((((0, 0),),)), theta)
        np.testing.assert_allclose(g.values, [-0.5, 0.5], atol=1e-15)

    def test_deterministic_trace_scores_zero(self):
        sdef = TopK(2, 1)
        theta = ThetaVector(sdef.key_labels, [0.0, 0.0], [True, False])
        g = trace_score(sdef, Trace((((0, 0),),)), theta)
        assert np.all(g.values == 0.0)

    def test_matches_finite_differences_everywhere(self):
        h = 1e-6
        for _name, sdef in representative_instances():
            theta = seeded_theta(sdef, 7)
            rng = np.random.default_rng(7)
            for _ in range(3):
                _x, t = run_struct(sdef, sample_utilities(theta, rng))
                g = trace_score(sdef, t, theta).values
                for i in range(sdef.n_keys):
                    up = theta.theta.copy()
                    up[i] += h
                    down = theta.theta.copy()
                    down[i] -= h
                    fd = (
                        trace_log_prob(sdef, t, theta.replace(up))
                        - trace_log_prob(sdef, t, theta.replace(down))
                    ) / (2 * h)
                    assert g[i] == pytest.approx(fd, abs=1e-6)


class TestConditionalSampling:
    def test_event_and_residual_expectations(self):
        # d=2, k=1, unit rates, winner 0: E[e0] = 1/2, E[e1] = 1/2 + 1.
        sdef = TopK(2, 1)
        theta = ThetaVector.constant(sdef.key_labels)
        t = Trace((((0, 0),),))
        rng = np.random.default_rng(8)
        values = np.array(
            [cond_sample(sdef, t, theta, rng)[0].values for _ in range(10**5)]
        )
        assert values[:, 0].mean() == pytest.approx(0.5, abs=0.02)
        assert values[:, 1].mean() == pytest.approx(1.5, abs=0.03)

    def test_round_trip_reproduces_trace(self):
        for _name, sdef in representative_instances():
            theta = seeded_theta(sdef, 8)
            rng = np.random.default_rng(9)
            for _ in range(300):
                e = sample_utilities(theta, rng)
                _x, t = run_struct(sdef, e)
                e_cond, _rec = cond_sample(sdef, t, theta, rng)
                _x2, t2 = run_struct(sdef, e_cond)
                assert t2 == t

    def test_record_replay_is_bit_exact(self):
        for _name, sdef in representative_instances():
            theta = seeded_theta(sdef, 9)
            rng = np.random.default_rng(10)
            for _ in range(20):
                _x, t = run_struct(sdef, sample_utilities(theta, rng))
                e_cond, rec = cond_sample(sdef, t, theta, rng)
                replayed = replay_conditional(rec, theta)
                assert np.array_equal(replayed.values, e_cond.values)

    def test_each_utility_decomposes_into_minima_plus_residual(self):
        # Every conditional utility is a sum of noise/sum(rates) terms, one
        # per event whose partition held the key, plus its own residual.
        for _name, sdef in representative_instances():
            theta = seeded_theta(sdef, 12)
            rates = np.exp(-theta.theta)
            rng = np.random.default_rng(15)
            _x, t = run_struct(sdef, sample_utilities(theta, rng))
            e_cond, rec = cond_sample(sdef, t, theta, rng)
            for k in range(sdef.n_keys):
                sums, resid = rec.utility_terms(k)
                total = sum(eps / rates[list(keys)].sum() for eps, keys in sums)
                if resid is not None:
                    total += resid / rates[k]
                assert e_cond.values[k] == pytest.approx(total, rel=1e-12, abs=1e-300)

    def test_infeasible_trace_raises(self):
        sdef = TopK(2, 1)
        theta = ThetaVector(sdef.key_labels, [0.0, 0.0], [True, False])
        with pytest.raises(InvalidTraceError):
            cond_sample(sdef, Trace((((0, 1),),)), theta, np.random.default_rng(0))

    def test_caller_masked_keys_stay_zero(self):
        sdef = TopK(3, 2)
        theta = ThetaVector(sdef.key_labels, [0.0, 0.0, 0.0], [False, True, False])
        rng = np.random.default_rng(11)
        _x, t = run_struct(sdef, sample_utilities(theta, rng))
        e_cond, _rec = cond_sample(sdef, t, theta, rng)
        assert e_cond[1] == 0.0

    def test_masked_survivors_through_contraction(self):
        # A 4-vertex arborescence run that contracts keeps one winner
        # masked into the deeper level; the round trip must still hold.
        sdef = Arborescence(range(4), complete_digraph(4), 0)
        theta = seeded_theta(sdef, 10)
        rng = np.random.default_rng(12)
        contracted = 0
        for _ in range(500):
            e = sample_utilities(theta, rng)
            _x, t = run_struct(sdef, e)
            if len(t.levels) > 1:
                contracted += 1
            e_cond, _rec = cond_sample(sdef, t, theta, rng)
            _x2, t2 = run_struct(sdef, e_cond)
            assert t2 == t
        assert contracted > 0


class TestConditionalJacobian:
    def test_zero_vector_gives_zero(self):
        sdef = TopK(2, 1)
        theta = ThetaVector.constant(sdef.key_labels)
        _e, rec = cond_sample(sdef, Trace((((0, 0),),)), theta, np.random.default_rng(1))
        out = cond_jacobian_vjp(rec, theta, np.zeros(2))
        assert np.all(out.values == 0.0)

    def test_single_event_analytic_value(self):
        # One event, unit rates, eps = 1: d e_0 / d theta_0 = 1 * 1 / 2^2.
        from stochinv import CondBuildRecord

        theta = ThetaVector((0, 1), [0.0, 0.0])
        rec = CondBuildRecord((0, 1), ((0, 1.0, (0, 1)),), ())
        out = cond_jacobian_vjp(rec, theta, np.array([1.0, 0.0]))
        np.testing.assert_allclose(out.values, [0.25, 0.25], atol=1e-15)

    def test_matches_frozen_noise_finite_differences(self):
        h = 1e-6
        rng_v = np.random.default_rng(13)
        for _name, sdef in representative_instances():
            theta = seeded_theta(sdef, 11)
            rng = np.random.default_rng(14)
            _x, t = run_struct(sdef, sample_utilities(theta, rng))
            _e, rec = cond_sample(sdef, t, theta, rng)
            v = rng_v.normal(size=sdef.n_keys)
            analytic = cond_jacobian_vjp(rec, theta, v).values
            for i in range(sdef.n_keys):
                up = theta.theta.copy()
                up[i] += h
                down = theta.theta.copy()
                down[i] -= h
                fd = (
                    v @ replay_conditional(rec, theta.replace(up)).values
                    - v @ replay_conditional(rec, theta.replace(down)).values
                ) / (2 * h)
                assert analytic[i] == pytest.approx(
                    fd, rel=1e-4, abs=1e-10
                )


class TestDefinitionContracts:
    def test_bad_partition_is_rejected(self):
        class Broken(TopK):
            def split(self, K, R):
                return [tuple(sorted(K))[:-1]] if len(K) > 1 else [tuple(K)]

        sdef = Broken(3, 2)
        with pytest.raises(StructureDefinitionError):
            run_struct(sdef, [0.1, 0.2, 0.3])

    def test_non_shrinking_map_is_rejected(self):
        class Broken(TopK):
            def map(self, K, R, winners):
                return K, R - 1

        sdef = Broken(3, 2)
        with pytest.raises(StructureDefinitionError):
            run_struct(sdef, [0.1, 0.2, 0.3])

    @given(st.integers(1, 6), st.integers(0, 10**6))
    @settings(max_examples=40, deadline=None)
    def test_argsort_trace_equals_numpy_argsort(self, d, seed):
        from stochinv import Argsort

        sdef = Argsort(d)
        e = np.random.default_rng(seed).random(d)
        x, t = run_struct(sdef, e)
        assert x == tuple(np.argsort(e, kind="stable"))
        assert t.winners() == x
