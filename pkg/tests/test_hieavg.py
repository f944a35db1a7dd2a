import numpy as np
import pytest

from bhfl.core import EmptyAggregationError, as_weights
from bhfl.hieavg import (ESTIMATED, EXCLUDED, TIMELY, DecayParams, InsufficientHistoryError,
                         SubmissionHistory, d_fedavg_edge, d_fedavg_global, decay_factor,
                         estimate_delayed, hieavg_edge, hieavg_global, mean_weight_difference,
                         replay_aggregate, t_fedavg_edge, t_fedavg_global)

DECAY = DecayParams(0.9, 0.9)


def history_of(*vectors, estimated_from=None):
    hist = SubmissionHistory()
    for ix, v in enumerate(vectors, start=1):
        est = estimated_from is not None and ix >= estimated_from
        hist.record(ix, as_weights(v), estimated=est)
    return hist


class TestMeanWeightDifference:
    def test_single_difference(self):
        assert np.array_equal(mean_weight_difference(history_of([0], [1])), [1.0])

    def test_mean_of_two_diffs(self):
        # brute force: diffs are [1] and [2], mean [1.5]
        hist = history_of([0], [1], [3])
        diffs = [np.array([1.0]), np.array([2.0])]
        assert np.array_equal(mean_weight_difference(hist), sum(diffs) / 2)
        assert np.array_equal(mean_weight_difference(hist), [1.5])

    def test_constant_history(self):
        assert np.array_equal(mean_weight_difference(history_of([4], [4], [4])), [0.0])

    def test_insufficient_history(self):
        with pytest.raises(InsufficientHistoryError):
            mean_weight_difference(history_of([1]))

    def test_windowed_mean_uses_recent_diffs(self):
        hist = SubmissionHistory(window=2)
        for ix, v in enumerate(([0], [10], [11], [12]), start=1):
            hist.record(ix, as_weights(v))
        assert np.array_equal(hist.mean_difference(), [1.0])


class TestDecayFactor:
    def test_one_missed_round(self):
        assert decay_factor(DECAY, 1) == pytest.approx(0.81, abs=1e-15)

    def test_three_missed_rounds(self):
        assert decay_factor(DECAY, 3) == pytest.approx(0.9 * 0.9 ** 3, abs=1e-15)
        assert decay_factor(DECAY, 3) == pytest.approx(0.6561, abs=1e-12)

    def test_stays_positive_for_large_misses(self):
        val = decay_factor(DecayParams(0.9, 0.05), 60)
        assert 0 < val < 1e-60

    def test_strictly_decreasing(self):
        vals = [decay_factor(DECAY, r) for r in range(1, 30)]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_rejects_zero_missed(self):
        with pytest.raises(ValueError):
            decay_factor(DECAY, 0)

    def test_rejects_bad_params(self):
        with pytest.raises(ValueError):
            DecayParams(1.0, 0.9)
        with pytest.raises(ValueError):
            DecayParams(0.9, 0.0)


class TestEstimateDelayed:
    def test_formula(self):
        hist = history_of([1], [3])
        assert np.array_equal(estimate_delayed(hist), [5.0])

    def test_constant_history_estimates_last(self):
        hist = history_of([2], [2], [2])
        assert np.array_equal(estimate_delayed(hist), [2.0])

    def test_chained_from_mean_difference(self):
        hist = history_of([0], [1], [3])
        assert np.array_equal(estimate_delayed(hist), [4.5])

    def test_estimate_feeds_forward(self):
        hist = history_of([1], [3])
        estimate_delayed(hist)
        assert len(hist) == 3
        assert hist.missed_rounds == 1
        # a second estimate extrapolates from the first
        assert np.array_equal(estimate_delayed(hist), [7.0])
        assert hist.missed_rounds == 2

    def test_real_submission_resets_counter(self):
        hist = history_of([1], [3])
        estimate_delayed(hist)
        hist.record(hist.last_round + 1, as_weights([6]))
        assert hist.missed_rounds == 0
        assert np.array_equal(hist.last_real_weights, [6.0])

    def test_telescoping(self):
        # r consecutive estimates from a frozen history land on
        # last_real + r * mean_diff exactly
        base = history_of([0.0, 10.0], [1.0, 12.0], [2.0, 14.0])
        delta = mean_weight_difference(base)
        last_real = base.last_weights.copy()
        for r in range(1, 6):
            est = estimate_delayed(base)
            assert np.array_equal(est, last_real + r * delta)
            assert base.missed_rounds == r


class TestEdgeAggregate:
    def test_uniform_mean_when_all_timely(self):
        rep = hieavg_edge({0: as_weights([1, 3]), 1: as_weights([3, 5])}, {}, DECAY, 2)
        assert np.array_equal(rep.aggregate, [2.0, 4.0])
        assert rep.coefficient_mass == 1.0
        assert rep.statuses == {0: TIMELY, 1: TIMELY}

    def test_one_straggler_worked_example(self):
        hist = history_of([1], [3])
        rep = hieavg_edge({0: as_weights([2])}, {1: hist}, DECAY, 2, rnd=10)
        # (1/2) * (2 + 0.81 * 5), checked with plain python arithmetic
        assert rep.aggregate[0] == pytest.approx((2 + 0.81 * 5) / 2, abs=1e-12)
        assert rep.aggregate[0] == pytest.approx(3.025, abs=1e-12)
        assert rep.coefficient_mass == pytest.approx((1 + 0.81) / 2, abs=1e-12)
        assert rep.statuses == {0: TIMELY, 1: ESTIMATED}

    def test_all_stragglers_brute_force(self):
        hists = {j: history_of([float(j)], [float(j + 1 + j)]) for j in range(4)}
        missed = {j: h.missed_rounds + 1 for j, h in hists.items()}
        expected = np.zeros(1)
        for j, h in hists.items():
            gamma = 0.9 * 0.9 ** missed[j]
            est = h.last_weights + h.mean_difference()
            expected = expected + gamma * est
        expected /= 4
        rep = hieavg_edge({}, hists, DECAY, 4, rnd=9)
        assert np.allclose(rep.aggregate, expected, rtol=0, atol=1e-15)

    def test_mass_law(self):
        hists = {2: history_of([0], [1]), 3: history_of([5], [5], [5])}
        rep = hieavg_edge({0: as_weights([1]), 1: as_weights([2])}, hists, DECAY, 4)
        gammas = [0.81, 0.81]
        assert rep.coefficient_mass == pytest.approx((2 + sum(gammas)) / 4, abs=1e-12)

    def test_renormalize_rescales_aggregate(self):
        hist = history_of([1], [3])
        rep = hieavg_edge({0: as_weights([2])}, {1: hist}, DECAY, 2, rnd=5,
                          renormalize=True)
        # reported mass stays the raw applied share; the vector is rescaled
        assert rep.coefficient_mass == pytest.approx((1 + 0.81) / 2, abs=1e-12)
        assert rep.aggregate[0] == pytest.approx((2 + 0.81 * 5) / 1.81, abs=1e-12)
        assert sum(c for _, _, c in rep.contributions) == pytest.approx(1.0, abs=1e-12)

    def test_straggler_without_history_raises(self):
        with pytest.raises(InsufficientHistoryError):
            hieavg_edge({0: as_weights([1])}, {1: history_of([2])}, DECAY, 2)

    def test_population_mismatch(self):
        with pytest.raises(ValueError):
            hieavg_edge({0: as_weights([1])}, {}, DECAY, 2)


class TestGlobalAggregate:
    def test_equal_weights(self):
        rep = hieavg_global({0: (as_weights([1]), 5), 1: (as_weights([3]), 5)}, {},
                            DECAY, 10)
        assert np.array_equal(rep.aggregate, [2.0])

    def test_device_count_weighting(self):
        rep = hieavg_global({0: (as_weights([0]), 4), 1: (as_weights([10]), 1)}, {},
                            DECAY, 5)
        assert rep.aggregate[0] == pytest.approx(0.8 * 0 + 0.2 * 10, abs=1e-12)
        assert rep.aggregate[0] == pytest.approx(2.0, abs=1e-12)

    def test_straggler_edge_worked_example(self):
        hist = history_of([2], [4])
        w1 = as_weights([1])
        rep = hieavg_global({0: (w1, 1)}, {1: (hist, 1)}, DECAY, 2, rnd=7)
        # 0.5 * w1 + (0.81 * 1 / 2) * 6
        assert rep.aggregate[0] == pytest.approx(0.5 * 1 + 0.405 * 6, abs=1e-12)
        assert rep.coefficient(1) == pytest.approx(0.405, abs=1e-12)

    def test_reduces_to_plain_weighting_without_stragglers(self):
        rng = np.random.default_rng(0)
        ws = {i: (rng.normal(size=6), int(rng.integers(1, 9))) for i in range(4)}
        total = sum(j for _, j in ws.values())
        expected = sum(j / total * w for w, j in ws.values())
        rep = hieavg_global(ws, {}, DECAY, total)
        assert np.allclose(rep.aggregate, expected, rtol=1e-12)
        assert rep.coefficient_mass == pytest.approx(1.0, abs=1e-12)


class TestBenchmarkAggregators:
    def test_t_fedavg_matches_plain_mean_without_stragglers(self):
        rng = np.random.default_rng(1)
        ws = {j: rng.normal(size=4) for j in range(5)}
        a = hieavg_edge(dict(ws), {}, DECAY, 5).aggregate
        b = t_fedavg_edge(dict(ws), [], 5).aggregate
        assert np.allclose(a, b, atol=1e-12)

    def test_t_fedavg_renormalized_singleton(self):
        rep = t_fedavg_edge({0: as_weights([4])}, [1], 2)
        assert np.array_equal(rep.aggregate, [4.0])
        assert rep.statuses == {0: TIMELY, 1: EXCLUDED}
        assert rep.coefficient_mass == 1.0

    def test_t_fedavg_three_of_five(self):
        rep = t_fedavg_edge({0: as_weights([1]), 1: as_weights([2]), 2: as_weights([3])},
                            [3, 4], 5)
        assert rep.aggregate[0] == pytest.approx(np.mean([1, 2, 3]), abs=1e-12)

    def test_t_fedavg_zero_timely_raises(self):
        with pytest.raises(EmptyAggregationError):
            t_fedavg_edge({}, [0, 1], 2)

    def test_t_fedavg_global_renormalizes_over_present(self):
        rep = t_fedavg_global({0: (as_weights([2]), 4), 2: (as_weights([6]), 4)}, [1])
        assert rep.aggregate[0] == pytest.approx(4.0, abs=1e-12)

    def test_d_fedavg_freezes_last_real(self):
        hist = history_of([4])
        rep = d_fedavg_edge({0: as_weights([2])}, {1: hist}, 2)
        assert rep.aggregate[0] == pytest.approx(3.0, abs=1e-12)

    def test_d_fedavg_ignores_estimates(self):
        hist = history_of([1], [3])
        estimate_delayed(hist)  # appends [5] as an estimate
        rep = d_fedavg_edge({0: as_weights([2])}, {1: hist}, 2)
        assert rep.aggregate[0] == pytest.approx((2 + 3) / 2, abs=1e-12)

    def test_d_fedavg_contribution_frozen_across_rounds(self):
        hist = history_of([7])
        for _ in range(10):
            rep = d_fedavg_edge({0: as_weights([1])}, {1: hist}, 2)
            assert rep.aggregate[0] == pytest.approx(4.0, abs=1e-12)

    def test_d_fedavg_empty_history_raises(self):
        with pytest.raises(InsufficientHistoryError):
            d_fedavg_edge({0: as_weights([1])}, {1: SubmissionHistory()}, 2)

    def test_d_fedavg_global_full_population(self):
        hist = history_of([6])
        rep = d_fedavg_global({0: (as_weights([0]), 3)}, {1: (hist, 1)}, 4)
        assert rep.aggregate[0] == pytest.approx(0.75 * 0 + 0.25 * 6, abs=1e-12)


class TestStragglerFreeEquivalence:
    def test_all_three_agree_without_stragglers(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            ws = {j: rng.normal(size=5) for j in range(6)}
            a = hieavg_edge(dict(ws), {}, DECAY, 6).aggregate
            b = t_fedavg_edge(dict(ws), [], 6).aggregate
            c = d_fedavg_edge(dict(ws), {}, 6).aggregate
            assert np.allclose(a, b, rtol=1e-12) and np.allclose(b, c, rtol=1e-12)
            ge = {i: (rng.normal(size=5), int(rng.integers(1, 7))) for i in range(4)}
            total = sum(j for _, j in ge.values())
            ga = hieavg_global(dict(ge), {}, DECAY, total).aggregate
            gb = t_fedavg_global(dict(ge), []).aggregate
            gc = d_fedavg_global(dict(ge), {}, total).aggregate
            assert np.allclose(ga, gb, rtol=1e-12) and np.allclose(gb, gc, rtol=1e-12)


class TestReplay:
    def test_contributions_replay_bitwise(self):
        rng = np.random.default_rng(3)
        hists = {3: history_of(rng.normal(size=4), rng.normal(size=4))}
        timely = {j: rng.normal(size=4) for j in range(3)}
        rep = hieavg_edge(timely, hists, DECAY, 4, rnd=11)
        assert np.array_equal(replay_aggregate(rep.contributions), rep.aggregate)
