import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from rdbounds.core import replica_stream
from rdbounds.errors import InvalidDesign, InvalidTruth
from rdbounds.erm_lab import (WeakLqSpec, erm_sparse_trial, project_weak_lq, quantize_weak_lq,
                              sparse_rd_bound, sparse_width_G, weak_lq_radius)
from rdbounds.erm_lab.experiments import entropy_monotone, quantizer_study
from rdbounds.erm_lab.sparse import (budget_for_step, coordinate_weak_radii, dyadic_budget_grid,
                                     empirical_risk, extremal_truth, quantizer_step, random_unit_design,
                                     weak_lq_samples)


def grid_radius(x, q, points=100_001):
    """sup over a t-grid of t * #{|x_i| > t}^(1/q)."""
    mags = np.abs(x)
    t = np.linspace(0, mags.max(), points)
    counts = (mags[None, :] > t[:, None]).sum(axis=1)
    return float(np.max(t * counts ** (1 / q))), t[1] - t[0]


class TestWeakLqSpec:
    def test_fields(self):
        spec = WeakLqSpec(0.5, 4.0, 3)
        assert spec.R == pytest.approx(2.0)
        assert np.allclose(spec.caps(), [4.0, 1.0, 4 / 9])

    @pytest.mark.parametrize("q, r, d", [(0.0, 1, 3), (1.0, 1, 3), (0.5, 0, 3), (0.5, 1, 0)])
    def test_rejects(self, q, r, d):
        with pytest.raises(ValueError):
            WeakLqSpec(q, r, d)

    def test_contains(self):
        spec = WeakLqSpec(0.5, 1.0, 3)
        assert spec.contains([0.25, -1.0, 0.1])
        assert not spec.contains([0.3, 1.0, 0.0])


class TestRadius:
    def test_zero(self):
        assert weak_lq_radius(np.zeros(5), 0.5) == 0.0

    @pytest.mark.parametrize("q", [0.2, 0.5, 0.9])
    def test_extremal_sequence(self, q):
        x = np.arange(1, 9, dtype=float) ** (-1 / q)
        assert weak_lq_radius(x, q) == pytest.approx(1.0, rel=1e-14)

    @pytest.mark.parametrize("seed", range(10))
    def test_grid_oracle(self, seed):
        rng = np.random.default_rng(seed)
        q = rng.uniform(0.2, 0.9)
        x = rng.standard_normal(6)
        approx, step = grid_radius(x, q)
        exact = weak_lq_radius(x, q)
        assert approx <= exact + 1e-12
        assert exact - approx <= step * 6 ** (1 / q)

    def test_membership_agrees(self, rng):
        spec = WeakLqSpec(0.5, 1.5, 6)
        for _ in range(50):
            x = rng.standard_normal(6) * 0.6
            assert spec.contains(x) == (weak_lq_radius(x, 0.5) <= 1.5 * (1 + 1e-12))


def brute_force_projection_distance(x, spec, per_axis=41):
    axis = np.linspace(-spec.r, spec.r, per_axis)
    grid = np.array(list(itertools.product(axis, repeat=spec.d)))
    mags = -np.sort(-np.abs(grid), axis=1)
    feasible = np.all(mags <= spec.caps() * (1 + 1e-12), axis=1)
    return float(np.min(np.linalg.norm(grid[feasible] - x, axis=1))), axis[1] - axis[0]


class TestProjection:
    def test_inside_is_identity(self):
        spec = WeakLqSpec(0.5, 1.0, 3)
        x = np.array([0.2, -0.9, 0.05])
        assert np.array_equal(project_weak_lq(x, spec), x)

    def test_single_cap(self):
        assert np.allclose(project_weak_lq([5.0], WeakLqSpec(0.5, 1.0, 1)), [1.0])

    def test_keeps_positions_and_signs(self):
        spec = WeakLqSpec(0.5, 1.0, 3)
        out = project_weak_lq([-0.1, 3.0, -2.0], spec)
        assert np.allclose(out, [-0.1, 1.0, -0.25])

    @given(st.integers(0, 10_000))
    def test_properties(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 20))
        spec = WeakLqSpec(float(rng.uniform(0.1, 0.95)), float(rng.uniform(0.1, 3)), d)
        x = 2 * rng.standard_normal(d)
        p = project_weak_lq(x, spec)
        assert spec.contains(p)
        assert np.all(np.abs(p) <= np.abs(x))
        assert np.array_equal(project_weak_lq(p, spec), p)

    @pytest.mark.parametrize("seed", range(100))
    def test_brute_force_grid(self, seed):
        rng = np.random.default_rng(seed)
        spec = WeakLqSpec(float(rng.uniform(0.2, 0.9)), float(rng.uniform(0.5, 2.0)), 3)
        x = rng.uniform(-1.5, 1.5, 3) * spec.r
        d_proj = float(np.linalg.norm(project_weak_lq(x, spec) - x))
        d_grid, h = brute_force_projection_distance(x, spec)
        assert d_proj <= d_grid + 1e-12
        assert d_grid <= d_proj + h * math.sqrt(3)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            project_weak_lq([1.0, 2.0], WeakLqSpec(0.5, 1.0, 3))


class TestSparseTrial:
    def test_zero_noise_orthogonal(self, rng):
        spec = WeakLqSpec(0.5, 1.0, 16)
        b_star = extremal_truth(spec, rng)
        trial = erm_sparse_trial("orthogonal_identity", b_star, spec, 64, rng=rng, noise_scale=0.0)
        assert np.array_equal(trial.estimate, b_star)
        assert trial.squared_error == 0.0
        assert not trial.heuristic

    def test_orthogonal_key_inequality(self):
        spec = WeakLqSpec(0.5, 1.0, 64)
        for kind in ("gaussian", "rademacher_scaled", "uniform_scaled"):
            for r in range(20):
                stream = replica_stream(3, f"unit/sparse/{kind}", r)
                b_star = extremal_truth(spec, np.random.default_rng(r))
                trial = erm_sparse_trial("orthogonal_identity", b_star, spec, 128, kind, stream)
                assert trial.squared_error <= trial.generalization_term + 1e-9

    def test_orthogonal_non_gaussian_explicit_design(self):
        # the estimate projects X^T Y / n; rebuild it from the same stream
        spec = WeakLqSpec(0.5, 1.0, 4)
        b_star = np.zeros(4)
        trial = erm_sparse_trial("orthogonal_identity", b_star, spec, 10, "rademacher_scaled",
                                 np.random.default_rng(8))
        gen = np.random.default_rng(8)
        q_mat, _ = np.linalg.qr(gen.standard_normal((10, 4)))
        w = gen.integers(0, 2, size=10) * 2.0 - 1.0
        xi = q_mat.T @ w / math.sqrt(10)
        assert np.allclose(trial.estimate, project_weak_lq(xi, spec), atol=1e-15)

    def test_orthogonal_non_gaussian_needs_n_at_least_d(self, rng):
        spec = WeakLqSpec(0.5, 1.0, 16)
        with pytest.raises(InvalidDesign):
            erm_sparse_trial("orthogonal_identity", np.zeros(16), spec, 8, "uniform_scaled", rng)

    def test_general_design_beats_truth(self):
        spec = WeakLqSpec(0.5, 1.0, 32)
        n = 64
        rng = np.random.default_rng(12)
        b_star = extremal_truth(spec, rng)
        design = random_unit_design(n, 32, rng)
        trial = erm_sparse_trial(design, b_star, spec, n, "gaussian", np.random.default_rng(5))
        w = np.random.default_rng(5).standard_normal(n)
        y = design @ b_star + w
        assert trial.heuristic
        assert spec.contains(trial.estimate)
        assert empirical_risk(design, y, trial.estimate) <= empirical_risk(design, y, b_star) + 1e-6

    def test_random_unit_columns_design(self, rng):
        spec = WeakLqSpec(0.5, 1.0, 8)
        trial = erm_sparse_trial("random_unit_columns", np.zeros(8), spec, 32, "gaussian", rng, starts=3)
        assert trial.heuristic
        assert trial.squared_error <= trial.generalization_term + 1e-6

    def test_invalid_design(self, rng):
        spec = WeakLqSpec(0.5, 1.0, 4)
        with pytest.raises(InvalidDesign):
            erm_sparse_trial(np.ones((10, 4)) * 2.0, np.zeros(4), spec, 10, "gaussian", rng)
        with pytest.raises(InvalidDesign):
            erm_sparse_trial("banded", np.zeros(4), spec, 10, "gaussian", rng)
        with pytest.raises(InvalidDesign):
            erm_sparse_trial(random_unit_design(10, 5, rng), np.zeros(4), spec, 10, "gaussian", rng)

    def test_invalid_truth(self, rng):
        spec = WeakLqSpec(0.5, 1.0, 4)
        with pytest.raises(InvalidTruth):
            erm_sparse_trial("orthogonal_identity", [1.0, 1.0, 0, 0], spec, 10, "gaussian", rng)

    def test_random_unit_design_columns(self, rng):
        x = random_unit_design(20, 7, rng)
        assert np.allclose(np.linalg.norm(x, axis=0), math.sqrt(20))

    def test_extremal_truth_hits_every_cap(self, rng):
        spec = WeakLqSpec(0.4, 2.0, 10)
        b = extremal_truth(spec, rng)
        assert np.allclose(np.sort(np.abs(b))[::-1], spec.caps())
        assert weak_lq_radius(b, 0.4) == pytest.approx(2.0)


class TestRdBound:
    def test_below_one(self):
        assert sparse_rd_bound(0.5, 1.0, 1.0, math.e) <= 1.0
        assert sparse_rd_bound(0.3, 1.0, 2.0, math.e) <= 1.0

    def test_arithmetic(self):
        assert sparse_rd_bound(0.5, 1.0, 0.1, math.e) == pytest.approx(10 ** (2 / 3), rel=1e-14)
        assert sparse_rd_bound(0.5, 1.0, 0.1, math.e) == pytest.approx(4.6416, abs=1e-4)

    def test_threshold(self):
        with pytest.raises(ValueError):
            sparse_rd_bound(0.5, 1.0, 0.1, 2.0)
        assert sparse_rd_bound(0.5, 1.0, 0.1, 1.5, d_threshold=1.0) > 0

    @pytest.mark.parametrize("q", [0.2, 0.5, 0.8])
    @pytest.mark.parametrize("E", [0.01, 1.0, 7.0])
    def test_integral_reproduces_width_moment(self, q, E):
        r, d = 1.3, 100.0
        integral, _ = quad(lambda s: math.sqrt(sparse_rd_bound(q, r, s, d)), 0, math.sqrt(E), limit=200)
        ratio = integral / sparse_width_G(q, r, d, E)
        assert ratio == pytest.approx((2 - q) / (2 - 2 * q), rel=1e-7)

    def test_width_moment_examples(self):
        assert sparse_width_G(0.5, 1.0, math.e, 0.0) == 0.0
        assert sparse_width_G(0.5, 1.0, math.e, 1.0) == pytest.approx(1.0)
        with pytest.raises(ValueError):
            sparse_width_G(0.5, 1.0, math.e, -1.0)


class TestQuantizer:
    def test_huge_budget_gives_zero(self, rng):
        z = weak_lq_samples(WeakLqSpec(0.5, 1.0, 4), 500, rng)
        res = quantize_weak_lq(z, 0.5, 1.0, 1e6)
        assert np.all(res.samples == 0)
        assert res.mean_abs_gap == pytest.approx(np.abs(z).sum(axis=1).mean(), rel=1e-14)
        assert res.empirical_entropy == 0.0

    def test_half_grid_step(self, rng):
        z = rng.uniform(-1, 1, size=(1000, 1))
        # one coordinate with weak radius <= 1, so the budget is not rescaled
        assert coordinate_weak_radii(z, 0.5)[0] <= 1.0
        for b in (0.1, 0.5, 2.0):
            res = quantize_weak_lq(z, 0.5, 1.0, b)
            assert res.steps[0] == pytest.approx((b / 3) ** 2, rel=1e-12)
        assert quantizer_step(0.5, 1.0, 0.6) == pytest.approx(0.04, rel=1e-14)

    def test_step_and_budget_are_inverse(self):
        for q in (0.2, 0.5, 0.8):
            step = quantizer_step(q, 1.7, 0.3)
            assert budget_for_step(q, 1.7**q, step) == pytest.approx(0.3, rel=1e-12)

    def test_truncates_toward_zero_on_grid(self, rng):
        z = rng.standard_normal((300, 3)) * 0.2
        res = quantize_weak_lq(z, 0.5, 1.0, 0.2)
        assert np.all(np.abs(res.samples) <= np.abs(z) + 1e-15)
        ratio = res.samples / res.steps
        assert np.allclose(ratio, np.round(ratio), atol=1e-9)
        assert np.all(np.abs(z - res.samples) < res.steps)

    def test_budgets_never_exceed_total(self):
        q = 0.5
        # deterministic Z = (1, 2^(-1/q)) is in wB_q(1) but its coordinate radii sum past 1
        z = np.tile([1.0, 2 ** (-1 / q)], (10, 1))
        res = quantize_weak_lq(z, q, 1.0, 0.3)
        assert np.sum(coordinate_weak_radii(z, q) ** q) == pytest.approx(1.5)
        assert res.budgets.sum() == pytest.approx(0.3)
        assert res.mean_abs_gap <= 0.3

    @pytest.mark.parametrize("q", [0.3, 0.5, 0.8])
    def test_gap_within_budget(self, q):
        rng = np.random.default_rng(int(q * 10))
        z = weak_lq_samples(WeakLqSpec(q, 1.0, 6), 5000, rng)
        for b in (0.05, 0.2, 1.0):
            res = quantize_weak_lq(z, q, 1.0, b)
            assert res.mean_abs_gap <= b + 3 * res.gap_se

    def test_entropy_monotone_over_dyadic_grid(self):
        cells = quantizer_study([0.3, 0.6], seed=2, budgets=6, d=4, samples=3000)
        assert entropy_monotone(cells)
        assert all(c.gap_holds for c in cells)
        top = [c for c in cells if c.q == 0.3][-1]
        assert top.entropy == 0.0

    def test_dyadic_grid_doubles_steps(self):
        grid = dyadic_budget_grid(0.4, 0.01, 5)
        steps = [quantizer_step(0.4, 1.0, b) for b in grid]
        assert np.allclose(np.diff(np.log2(steps)), 1.0)

    def test_samples_lie_in_ball(self, rng):
        spec = WeakLqSpec(0.5, 2.0, 7)
        z = weak_lq_samples(spec, 200, rng)
        assert all(spec.contains(row) for row in z)

    def test_rejects(self):
        with pytest.raises(ValueError):
            quantize_weak_lq(np.zeros((3, 2)), 0.5, 1.0, 0.0)
        with pytest.raises(ValueError):
            quantize_weak_lq(np.zeros((3, 2)), 1.5, 1.0, 1.0)
