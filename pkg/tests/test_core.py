import math
import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rdbounds.core import (FiniteMetricSpace, RngStream, binary_entropy, format_float, golden_section_max,
                           make_distribution, ordered_map, replica_stream, rng_substream, second_moments,
                           sigma_m, sigma_m_center, sigma_m_continuous, stream_hash, uniform)
from rdbounds.errors import InvalidDistribution, InvalidSpace, UnknownPoint

line = lambda *xs: FiniteMetricSpace.from_points(list(xs))


class TestFiniteMetricSpace:
    def test_rejects_asymmetric(self):
        with pytest.raises(InvalidSpace):
            FiniteMetricSpace.from_matrix([[0, 1], [2, 0]])

    def test_rejects_nonzero_diagonal(self):
        with pytest.raises(InvalidSpace):
            FiniteMetricSpace.from_matrix([[1e-6, 1], [1, 0]])

    def test_rejects_triangle_violation(self):
        d = [[0, 1, 3], [1, 0, 1], [3, 1, 0]]
        with pytest.raises(InvalidSpace, match="triangle"):
            FiniteMetricSpace.from_matrix(d)

    def test_triangle_tolerance_admits_rounding(self):
        eps = 5e-10
        FiniteMetricSpace.from_matrix([[0, 1, 2 + eps], [1, 0, 1], [2 + eps, 1, 0]])

    def test_embedding_must_match(self):
        with pytest.raises(InvalidSpace):
            FiniteMetricSpace(("a", "b"), np.array([[0, 2.0], [2.0, 0]]), np.array([[0.0], [1.0]]))

    def test_duplicate_labels(self):
        with pytest.raises(InvalidSpace):
            FiniteMetricSpace.from_points([0.0, 1.0], labels=["x", "x"])

    def test_arrays_are_read_only(self):
        s = line(0, 1)
        with pytest.raises(ValueError):
            s.dist[0, 1] = 5.0

    def test_index_and_diameter(self):
        s = FiniteMetricSpace.from_points([[0, 0], [3, 4]], labels=["o", "p"])
        assert s.index("p") == 1
        assert s.diameter == pytest.approx(5.0)
        with pytest.raises(UnknownPoint):
            s.index("q")


class TestMakeDistribution:
    def test_normalizes(self):
        mu = make_distribution(line(0, 1, 2), [1, 1, 2])
        np.testing.assert_allclose(mu.weights, [0.25, 0.25, 0.5])
        assert mu.normalization == 4.0

    def test_degenerate_support(self):
        mu = make_distribution(line(0, 1), [0, 5])
        np.testing.assert_array_equal(mu.weights, [0.0, 1.0])
        assert list(mu.support) == [1]

    @pytest.mark.parametrize("raw", [[-1, 2], [0, 0], [1, math.nan]])
    def test_rejects(self, raw):
        with pytest.raises(InvalidDistribution):
            make_distribution(line(0, 1), raw)

    def test_length_mismatch(self):
        with pytest.raises(InvalidDistribution):
            make_distribution(line(0, 1), [1, 2, 3])

    def test_restricted_drops_zero_mass(self):
        mu = make_distribution(line(0, 1, 2), [1, 0, 1]).restricted()
        assert mu.space.points == (0, 2)
        np.testing.assert_allclose(mu.space.dist, [[0, 2], [2, 0]])

    @given(st.lists(st.floats(0, 1e6), min_size=1, max_size=30).filter(lambda w: sum(w) > 0))
    def test_sum_to_one(self, raw):
        mu = make_distribution(line(*range(len(raw))), raw)
        assert abs(mu.weights.sum() - 1) <= 1e-12


class TestSigmaM:
    def test_point_mass(self):
        assert sigma_m(make_distribution(line(0, 1, 5), [0, 1, 0])) == 0.0

    def test_two_points(self):
        assert sigma_m(uniform(line(0, 2))) == pytest.approx(math.sqrt(2))

    def test_three_points_center(self):
        mu = uniform(line(0, 1, 2))
        assert sigma_m(mu) == pytest.approx(math.sqrt(2 / 3))
        assert sigma_m_center(mu) == 1

    def test_minimum_ranges_over_all_points(self):
        # the center 1 carries no mass but still minimizes
        mu = make_distribution(line(0, 1, 2), [1, 0, 1])
        assert sigma_m(mu) == pytest.approx(1.0)

    def test_continuous_refinement_uses_barycenter(self):
        mu = uniform(line(0, 2))
        assert sigma_m_continuous(mu) == pytest.approx(1.0)
        assert sigma_m_continuous(make_distribution(FiniteMetricSpace.from_matrix([[0, 1], [1, 0]]), [1, 1])) is None

    @given(st.integers(1, 12), st.integers(0, 2**32 - 1))
    def test_bounded_by_diameter(self, k, seed):
        g = np.random.default_rng(seed)
        mu = make_distribution(FiniteMetricSpace.from_points(g.normal(size=(k, 2))), g.uniform(0.01, 1, k))
        assert sigma_m(mu) <= mu.space.diameter + 1e-12
        assert sigma_m_continuous(mu) <= sigma_m(mu) + 1e-12
        assert second_moments(mu).shape == (k,)


class TestRngStreams:
    def test_same_stream_same_draws(self):
        a = rng_substream(42, 0).generator().standard_normal(100)
        b = rng_substream(42, 0).generator().standard_normal(100)
        np.testing.assert_array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = rng_substream(42, 0).generator().standard_normal(100)
        b = rng_substream(42, 1).generator().standard_normal(100)
        assert not np.array_equal(a, b)

    def test_clt_mean(self):
        x = rng_substream(42, 0).generator().standard_normal(10**6)
        assert abs(x.mean()) <= 4 / math.sqrt(10**6)

    def test_replica_stream_is_hash_of_experiment_and_replica(self):
        s = replica_stream(7, "toy", 3)
        assert s == RngStream(7, stream_hash("toy", 3))
        assert replica_stream(7, "toy", 4) != s

    def test_stream_hash_is_stable(self):
        # fixed across interpreter runs: blake2b of the repr, not Python's salted hash
        assert stream_hash("toy", 3) == stream_hash("toy", 3)
        assert 0 <= stream_hash("x") < 2**64

    def test_child_streams(self):
        s = RngStream(1, 2)
        assert s.child("a") != s.child("b")
        assert s.child("a").seed == 1

    def test_negative_and_large_ids_wrap(self):
        rng_substream(-1, 2**70).generator().random()


class TestHelpers:
    def test_ordered_map_preserves_order(self):
        seen = []
        lock = threading.Lock()

        def f(x):
            with lock:
                seen.append(x)
            return x * x

        assert ordered_map(f, list(range(20)), threads=4) == [x * x for x in range(20)]
        assert ordered_map(f, [3], threads=4) == [9]

    def test_golden_section(self):
        x, fx = golden_section_max(lambda t: -(t - 0.3) ** 2, 0, 1, tol=1e-12)
        assert x == pytest.approx(0.3, abs=1e-6)
        assert fx == pytest.approx(0.0, abs=1e-12)

    def test_binary_entropy(self):
        assert float(binary_entropy(0.5)) == pytest.approx(math.log(2))
        assert float(binary_entropy(0.0)) == 0.0
        assert float(binary_entropy(1.0)) == 0.0

    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_format_float_round_trips(self, x):
        assert float(format_float(x)) == x
