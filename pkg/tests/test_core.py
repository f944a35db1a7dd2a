import numpy as np
import pytest

from bhfl.core import (DimensionError, EmptyAggregationError, ParticipantId, RoundClock,
                       Topology, as_weights, axpy, weighted_mean)


class TestAxpy:
    def test_zero_scaling(self):
        out = axpy(0.0, as_weights([5, 5]), as_weights([1, 2]))
        assert np.array_equal(out, [1.0, 2.0])

    def test_identity(self):
        out = axpy(1.0, as_weights([1, 2]), as_weights([0, 0]))
        assert np.array_equal(out, [1.0, 2.0])

    def test_elementwise(self):
        # oracle: per-coordinate arithmetic done by hand below
        a, x, y = 2.0, as_weights([1, -1]), as_weights([3, 3])
        expected = np.array([a * 1 + 3, a * -1 + 3])
        assert np.array_equal(axpy(a, x, y), expected)
        assert np.array_equal(axpy(a, x, y), [5.0, 1.0])

    def test_inputs_unmodified(self):
        x, y = as_weights([1, 2]), as_weights([3, 4])
        axpy(2.0, x, y)
        assert np.array_equal(x, [1, 2]) and np.array_equal(y, [3, 4])

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            axpy(1.0, as_weights([1, 2]), as_weights([1, 2, 3]))


class TestWeightedMean:
    def test_singleton(self):
        assert np.array_equal(weighted_mean([as_weights([2, 4])], [1.0]), [2.0, 4.0])

    def test_arithmetic_mean(self):
        out = weighted_mean([as_weights([1, 3]), as_weights([3, 5])], [0.5, 0.5])
        assert np.array_equal(out, [2.0, 4.0])

    def test_direct_summation(self):
        ws = [as_weights([1, 0]), as_weights([0, 1]), as_weights([1, 1])]
        cs = [0.2, 0.3, 0.5]
        expected = sum(c * w for w, c in zip(ws, cs))  # independent summation
        out = weighted_mean(ws, cs)
        assert np.allclose(out, expected, rtol=0, atol=0)
        assert np.allclose(out, [0.7, 0.8], atol=1e-15)

    def test_empty_input(self):
        with pytest.raises(EmptyAggregationError):
            weighted_mean([], [])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            weighted_mean([as_weights([1]), as_weights([1, 2])], [0.5, 0.5])

    def test_uniform_coeffs_match_mean(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(1, 8))
            ws = [rng.normal(size=6) for _ in range(n)]
            out = weighted_mean(ws, [1.0 / n] * n)
            ref = np.mean(ws, axis=0)
            assert np.allclose(out, ref, rtol=1e-12)

    def test_deterministic_order_stable(self):
        rng = np.random.default_rng(1)
        ws = [rng.normal(size=16) for _ in range(7)]
        cs = list(rng.random(7))
        first = weighted_mean(ws, cs)
        for _ in range(3):
            assert np.array_equal(weighted_mean(ws, cs), first)

    def test_preserves_finiteness(self):
        rng = np.random.default_rng(2)
        ws = [rng.uniform(-1e99, 1e99, size=4) for _ in range(5)]
        out = weighted_mean(ws, [0.2] * 5)
        assert np.all(np.isfinite(out))


class TestTopology:
    def test_counts(self):
        topo = Topology((5, 5, 5, 5, 5))
        assert topo.n_edges == 5 and topo.total_devices == 25

    def test_uniform_builder(self):
        assert Topology.uniform(3, 4).devices_per_edge == (4, 4, 4)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            Topology(())

    def test_rejects_zero_devices(self):
        with pytest.raises(ValueError):
            Topology((5, 0))


class TestRoundClock:
    def test_flat_step_strictly_increases(self):
        flats = [RoundClock(t, k, 2, 10, 2).flat_step
                 for t in range(1, 11) for k in range(1, 3)]
        assert all(b > a for a, b in zip(flats, flats[1:]))

    def test_rejects_small_warmup(self):
        with pytest.raises(ValueError):
            RoundClock(1, 1, 2, 10, 1)

    def test_bounds(self):
        with pytest.raises(ValueError):
            RoundClock(1, 3, 2, 10, 2)
        with pytest.raises(ValueError):
            RoundClock(11, 1, 2, 10, 2)


class TestParticipantId:
    def test_device_needs_index(self):
        with pytest.raises(ValueError):
            ParticipantId("device", 0)

    def test_topology_bounds(self):
        topo = Topology((2, 3))
        assert ParticipantId("device", 1, 2).in_topology(topo)
        assert not ParticipantId("device", 1, 3).in_topology(topo)
        assert not ParticipantId("edge", 2).in_topology(topo)

    def test_as_weights_rejects_nan(self):
        with pytest.raises(ValueError):
            as_weights([1.0, float("nan")])
