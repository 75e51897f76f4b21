import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import zeta

from rdbounds.core import replica_stream
from rdbounds.errors import InvalidTruth, UnsupportedBeta
from rdbounds.erm_lab import (IDENTITY, EllipsoidSpec, LipschitzMap, c_beta, default_truncation,
                              ellipsoid_projection, ellipsoid_widths, erm_mean_trial, project_ellipsoid,
                              smooth_truth, sobolev_ellipsoid, sobolev_width_limits, toy_interval_trial,
                              truncation_tail, width_moment_G)
from rdbounds.erm_lab.noise import NOISE_KINDS, mean_noise, noise


def projected_gradient_oracle(x, axes, iterations=100_000):
    """min |A u - x|^2 over |u| <= 1 with A = diag(axes), by projected gradient."""
    a = np.asarray(axes, float)
    u = np.zeros_like(x)
    step = 1.0 / (2 * a.max() ** 2)
    for _ in range(iterations):
        u = u - step * 2 * a * (a * u - x)
        norm = np.linalg.norm(u)
        if norm > 1:
            u /= norm
    return a * u


class TestEllipsoidSpec:
    def test_sobolev_axes(self):
        assert np.allclose(sobolev_ellipsoid(1, 3).semi_axes, [1, 1 / 2, 1 / 3], rtol=1e-15)
        assert np.allclose(sobolev_ellipsoid(0.75, 2).semi_axes, [1, 2**-0.75], rtol=1e-15)

    @pytest.mark.parametrize("beta", [0.4, 0.5, -1.0])
    def test_unsupported_beta(self, beta):
        with pytest.raises(UnsupportedBeta):
            sobolev_ellipsoid(beta, 5)

    @pytest.mark.parametrize("axes", [[1.0, 2.0], [1.0, 0.0], [], [1.0, np.nan]])
    def test_rejects_bad_axes(self, axes):
        with pytest.raises(ValueError):
            EllipsoidSpec(axes)

    def test_sobolev_flag_requires_exact_axes(self):
        with pytest.raises(ValueError):
            EllipsoidSpec([1.0, 0.6], beta=1.0)

    def test_membership(self):
        spec = EllipsoidSpec([2.0, 1.0])
        assert spec.contains([2.0, 0.0])
        assert spec.contains([math.sqrt(2), math.sqrt(0.5)])
        assert not spec.contains([2.0, 0.1])

    def test_dimension_one_needs_positive(self):
        with pytest.raises(ValueError):
            sobolev_ellipsoid(1.0, 0)


class TestTruncation:
    def test_default_dimension(self):
        assert default_truncation(4096, 1.0) == 16 * 32
        assert default_truncation(1000, 1.0) == 10 * 32
        assert default_truncation(1024, 2.0) == 4 * 32

    @pytest.mark.parametrize("beta, dim", [(1.0, 10), (0.75, 100), (2.0, 3)])
    def test_tail_matches_direct_sum(self, beta, dim):
        i = np.arange(dim + 1, 2_000_001, dtype=float)
        direct = np.sum(i ** (-2 * beta))
        # remainder past 2e6 from the integral test
        direct += (2_000_000.5) ** (1 - 2 * beta) / (2 * beta - 1)
        assert truncation_tail(beta, dim) == pytest.approx(direct, rel=1e-6)


class TestProjection:
    def test_interior_is_identity(self):
        spec = sobolev_ellipsoid(1.0, 4)
        x = np.array([0.3, 0.1, 0.0, -0.05])
        res = ellipsoid_projection(x, spec)
        assert np.array_equal(res.point, x)
        assert res.multiplier == 0.0

    def test_axis_point(self):
        spec = sobolev_ellipsoid(1.0, 4)
        assert np.allclose(project_ellipsoid([2.0, 0, 0, 0], spec), [1.0, 0, 0, 0], atol=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_projected_gradient_oracle(self, seed):
        rng = np.random.default_rng(seed)
        spec = sobolev_ellipsoid(1.0, 5)
        x = 2 * rng.standard_normal(5)
        oracle = projected_gradient_oracle(x, spec.semi_axes)
        assert np.max(np.abs(project_ellipsoid(x, spec) - oracle)) <= 1e-6

    @given(st.integers(0, 10_000))
    def test_kkt_idempotent_nonexpansive(self, seed):
        rng = np.random.default_rng(seed)
        dim = int(rng.integers(1, 30))
        spec = EllipsoidSpec(np.sort(rng.uniform(0.01, 3, dim))[::-1])
        x, y = 3 * rng.standard_normal((2, dim))
        px = ellipsoid_projection(x, spec)
        assert px.kkt_residual < 1e-10
        assert spec.contains(px.point, tol=1e-10)
        assert np.allclose(project_ellipsoid(px.point, spec), px.point, atol=1e-12)
        py = project_ellipsoid(y, spec)
        assert np.linalg.norm(px.point - py) <= np.linalg.norm(x - y) + 1e-12

    def test_far_point_with_tiny_axes(self):
        spec = EllipsoidSpec(np.array([1.0, 1e-6, 1e-9]))
        res = ellipsoid_projection(np.array([1e6, 1e6, 1e6]), spec)
        assert res.kkt_residual < 1e-10
        assert spec.contains(res.point, tol=1e-10)

    def test_rejects_bad_input(self):
        spec = sobolev_ellipsoid(1.0, 3)
        with pytest.raises(ValueError):
            project_ellipsoid([1.0, 2.0], spec)
        with pytest.raises(ValueError):
            project_ellipsoid([1.0, np.inf, 0.0], spec)


class TestWidths:
    def test_dudley_limit_at_three_halves(self):
        _, dudley = sobolev_width_limits(1.5)
        assert dudley == pytest.approx(2.0, rel=1e-15)
        finite = ellipsoid_widths(sobolev_ellipsoid(1.5, 2**20)).dudley_sum
        assert finite == pytest.approx(2.0 - 2.0**-20, rel=1e-12)

    def test_sharp_width_limit_is_sqrt_zeta_two(self):
        sharp, _ = sobolev_width_limits(1.0)
        assert sharp == pytest.approx(math.pi / math.sqrt(6), rel=1e-13)
        assert sharp == pytest.approx(1.2825, abs=1e-4)

    @pytest.mark.parametrize("beta", [0.55, 0.75, 2.0])
    def test_sharp_width_limit_against_zeta(self, beta):
        assert sobolev_width_limits(beta)[0] == pytest.approx(math.sqrt(zeta(2 * beta)), rel=1e-12)

    def test_truncated_sharp_width(self):
        spec = sobolev_ellipsoid(1.0, 1000)
        w = ellipsoid_widths(spec)
        assert w.sharp_width == pytest.approx(math.sqrt(zeta(2.0) - truncation_tail(1.0, 1000)), rel=1e-12)

    def test_localized_saturates(self):
        spec = sobolev_ellipsoid(1.0, 50)
        w = ellipsoid_widths(spec)
        assert w.localized(1.0) == pytest.approx(math.sqrt(5) * w.sharp_width, rel=1e-14)
        assert w.localized(5.0) == pytest.approx(math.sqrt(5) * w.sharp_width, rel=1e-14)

    def test_localized_small_eps(self):
        spec = EllipsoidSpec([1.0, 0.5, 0.1])
        w = ellipsoid_widths(spec)
        assert w.localized(0.04) == pytest.approx(math.sqrt(5 * (0.04 + 0.04 + 0.01)), rel=1e-14)
        assert w.localized(0.0) == 0.0
        with pytest.raises(ValueError):
            w.localized(-1.0)

    def test_dudley_dyadic_terms(self):
        spec = EllipsoidSpec([1.0, 0.9, 0.8, 0.7, 0.6])
        # dyadic indices 1, 2, 4
        expected = 1.0 + math.sqrt(2) * 0.9 + 2 * 0.7
        assert ellipsoid_widths(spec).dudley_sum == pytest.approx(expected, rel=1e-15)


class TestConstants:
    def test_beta_one(self):
        small, big = c_beta(1.0)
        assert small == pytest.approx(1.5 * 4 ** (1 / 3), rel=1e-14)
        assert small == pytest.approx(2.38110, abs=1e-5)
        assert big == pytest.approx(10.52440, abs=1e-5)

    def test_near_half_grows_like_inverse_sqrt(self):
        betas = [0.51, 0.505, 0.501]
        scaled = [c_beta(b)[1] * math.sqrt(2 * b - 1) for b in betas]
        # leading order: c_beta ~ sqrt(2 / (2 beta - 1)), so C_beta sqrt(2 beta - 1) -> 4 sqrt 2
        assert all(abs(s - 4 * math.sqrt(2)) < 0.35 for s in scaled)
        ratios = [scaled[i + 1] / scaled[i] for i in range(2)]
        assert all(abs(r - 1) < 0.05 for r in ratios)
        assert abs(scaled[2] - 4 * math.sqrt(2)) < abs(scaled[0] - 4 * math.sqrt(2))

    def test_beta_two(self):
        small, big = c_beta(2.0)
        expected = (1.5 + 1 / 6) * (2 / 12) ** (-1 / 5)
        assert small == pytest.approx(expected, rel=1e-14)
        assert big == 4 * small + 1

    def test_unsupported(self):
        with pytest.raises(UnsupportedBeta):
            c_beta(0.5)

    def test_width_moment(self):
        assert width_moment_G(1.0, 0.0) == 0.0
        assert width_moment_G(1.0, 1.0) == pytest.approx(10.52440, abs=1e-5)
        for beta in (0.75, 1.0, 3.0):
            ratio = width_moment_G(beta, 2.0) / width_moment_G(beta, 1.0)
            assert ratio == pytest.approx(2 ** ((2 * beta - 1) / (4 * beta)), rel=1e-14)
        with pytest.raises(ValueError):
            width_moment_G(1.0, -1.0)

    @pytest.mark.parametrize("func", [lambda b: c_beta(b)[1], lambda b: width_moment_G(b, 0.3)])
    def test_continuity_on_grid(self, func):
        grid = np.linspace(0.6, 4.0, 2001)
        vals = np.array([func(b) for b in grid])
        jumps = np.abs(np.diff(vals))
        # a jump would stand out against the neighbouring increments
        assert np.all(jumps[1:-1] <= 3 * np.maximum(jumps[:-2], jumps[2:]) + 1e-12)


class TestNoise:
    @pytest.mark.parametrize("kind", NOISE_KINDS)
    def test_unit_variance_and_centered(self, kind, rng):
        x = noise(kind, 200_000, rng)
        assert abs(x.mean()) < 4 / math.sqrt(200_000)
        assert x.var() == pytest.approx(1.0, abs=0.02)

    @pytest.mark.parametrize("kind", NOISE_KINDS)
    def test_mean_noise_variance(self, kind, rng):
        m = mean_noise(kind, 50, 20_000, rng)
        assert m.var() * 50 == pytest.approx(1.0, abs=0.05)

    def test_unknown_kind(self, rng):
        with pytest.raises(ValueError):
            noise("cauchy", 3, rng)
        with pytest.raises(ValueError):
            mean_noise("gaussian", 0, 3, rng)


class TestErmMeanTrial:
    def test_zero_noise_recovers_truth(self, rng):
        spec = sobolev_ellipsoid(1.0, 20)
        m = smooth_truth(spec)
        trial = erm_mean_trial(spec, IDENTITY, m, 100, "gaussian", rng, noise_scale=0.0)
        assert np.allclose(trial.estimate, m, atol=1e-15)
        assert trial.squared_error == 0.0

    def test_identity_beats_random_candidates(self):
        spec = sobolev_ellipsoid(1.0, 6)
        m = smooth_truth(spec)
        rng = np.random.default_rng(4)
        trial = erm_mean_trial(spec, IDENTITY, m, 10, "gaussian", rng)
        # recover the sample mean from the same stream
        xbar = m + mean_noise("gaussian", 10, 6, np.random.default_rng(4))
        g = rng.standard_normal((10_000, 6))
        cand = spec.semi_axes * g / np.linalg.norm(g, axis=1, keepdims=True) * rng.uniform(size=(10_000, 1)) ** (1 / 6)
        risk_erm = np.sum((xbar - trial.estimate) ** 2)
        risks = np.sum((xbar - cand) ** 2, axis=1)
        assert risk_erm <= risks.min()
        assert not trial.heuristic

    def test_rate_at_4096(self):
        n = 4096
        spec = sobolev_ellipsoid(1.0, default_truncation(n, 1.0))
        errs = [erm_mean_trial(spec, IDENTITY, np.zeros(spec.dim), n, "gaussian",
                               replica_stream(1, "unit/ellipsoid", r)).squared_error for r in range(50)]
        ratio = np.mean(errs) / n ** (-2 / 3)
        assert 1 / 3 <= ratio <= 3

    @pytest.mark.parametrize("kind", NOISE_KINDS)
    def test_key_inequality_exact_erm(self, kind):
        spec = sobolev_ellipsoid(1.0, 40)
        for r in range(30):
            trial = erm_mean_trial(spec, IDENTITY, smooth_truth(spec, 0.9), 64, kind,
                                   replica_stream(2, "unit/key", r))
            assert trial.squared_error <= trial.generalization_term + 1e-9

    def test_soft_clip_heuristic(self):
        spec = sobolev_ellipsoid(1.0, 8)
        phi = LipschitzMap("soft_clip", 0.8)
        theta = smooth_truth(spec, 0.5)
        m = phi(theta)
        trial = erm_mean_trial(spec, phi, m, 50, "gaussian", np.random.default_rng(3))
        assert trial.heuristic
        assert spec.contains(phi.preimage(trial.estimate), tol=1e-9)
        xbar = m + mean_noise("gaussian", 50, 8, np.random.default_rng(3))
        # ERM objective at the estimate is no worse than at the truth
        assert np.sum((xbar - trial.estimate) ** 2) <= np.sum((xbar - m) ** 2) + 1e-6
        assert trial.squared_error <= trial.generalization_term + 1e-6

    def test_rejects_non_member_truth(self, rng):
        spec = sobolev_ellipsoid(1.0, 3)
        with pytest.raises(InvalidTruth):
            erm_mean_trial(spec, IDENTITY, [2.0, 0, 0], 10, "gaussian", rng)
        with pytest.raises(InvalidTruth):
            erm_mean_trial(spec, IDENTITY, [0.0, 0.0], 10, "gaussian", rng)
        with pytest.raises(InvalidTruth):
            erm_mean_trial(spec, LipschitzMap("soft_clip", 0.5), [0.6, 0, 0], 10, "gaussian", rng)

    def test_records_stream(self):
        stream = replica_stream(9, "unit/stream", 3)
        spec = sobolev_ellipsoid(1.0, 3)
        trial = erm_mean_trial(spec, IDENTITY, np.zeros(3), 10, "gaussian", stream)
        assert (trial.seed, trial.stream_id) == (stream.seed, stream.stream_id)

    def test_deterministic_given_stream(self):
        spec = sobolev_ellipsoid(1.0, 30)
        a = erm_mean_trial(spec, IDENTITY, np.zeros(30), 100, "uniform_scaled", replica_stream(5, "unit/det", 0))
        b = erm_mean_trial(spec, IDENTITY, np.zeros(30), 100, "uniform_scaled", replica_stream(5, "unit/det", 0))
        assert a.squared_error == b.squared_error

    def test_toy_interval_clips_mean(self):
        trial = toy_interval_trial(0.9, 4, "gaussian", np.random.default_rng(0))
        xbar = 0.9 + mean_noise("gaussian", 4, 1, np.random.default_rng(0))[0]
        assert trial.estimate[0] == pytest.approx(min(max(xbar, -1.0), 1.0), abs=1e-15)

    def test_lipschitz_map_validation(self):
        with pytest.raises(ValueError):
            LipschitzMap("relu")
        with pytest.raises(ValueError):
            LipschitzMap("soft_clip", 1.5)

    def test_smooth_truth_energy(self):
        spec = sobolev_ellipsoid(1.0, 25)
        assert spec.gauge(smooth_truth(spec, 0.3)) == pytest.approx(0.3, rel=1e-14)
        with pytest.raises(ValueError):
            smooth_truth(spec, 1.5)
