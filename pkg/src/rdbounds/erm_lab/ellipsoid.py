"""Axis-aligned ellipsoids: projection, width functionals, and mean-estimation ERM.

The ellipsoid with semi-axes a_1 >= a_2 >= ... > 0 is {t : sum t_i^2 / a_i^2 <= 1};
the Sobolev case uses a_i = i^(-beta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import zeta

from ..core import RngStream
from ..errors import InvalidTruth, UnsupportedBeta
from .noise import check_noise_kind, mean_noise
from .trials import ErmTrial

MEMBERSHIP_TOL = 1e-12
PROJECTION_TOL = 1e-12
TRUNCATION_FACTOR = 32


@dataclass(frozen=True, eq=False)
class EllipsoidSpec:
    semi_axes: np.ndarray
    beta: float | None = None

    def __post_init__(self):
        a = np.array(self.semi_axes, dtype=float).ravel()
        if a.size == 0 or not np.all(np.isfinite(a)) or np.any(a <= 0):
            raise ValueError("semi-axes must be finite and strictly positive")
        if np.any(np.diff(a) > 0):
            raise ValueError("semi-axes must be nonincreasing")
        if self.beta is not None:
            if self.beta <= 0.5:
                raise UnsupportedBeta(f"smoothness {self.beta} must exceed 1/2")
            expected = np.arange(1, a.size + 1, dtype=float) ** (-float(self.beta))
            if not np.allclose(a, expected, rtol=1e-12, atol=0):
                raise ValueError("semi-axes do not follow i^(-beta)")
        a.setflags(write=False)
        object.__setattr__(self, "semi_axes", a)

    @property
    def dim(self) -> int:
        return self.semi_axes.size

    def gauge(self, x) -> float:
        """sum x_i^2 / a_i^2; the point is inside iff this is at most 1."""
        x = np.asarray(x, dtype=float)
        return float(np.sum((x / self.semi_axes) ** 2))

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        return self.gauge(x) <= 1.0 + tol


def sobolev_ellipsoid(beta: float, dim: int) -> EllipsoidSpec:
    if beta <= 0.5:
        raise UnsupportedBeta(f"smoothness {beta} must exceed 1/2")
    if dim < 1:
        raise ValueError("dimension must be at least 1")
    return EllipsoidSpec(np.arange(1, dim + 1, dtype=float) ** (-float(beta)), float(beta))


def default_truncation(n: int, beta: float) -> int:
    """ceil(n^(1/(2 beta + 1))) * 32 coordinates for a sample of size n."""
    return int(math.ceil(n ** (1.0 / (2.0 * beta + 1.0)) - 1e-12)) * TRUNCATION_FACTOR


def truncation_tail(beta: float, dim: int) -> float:
    """sum_{i > dim} i^(-2 beta): squared radius the truncation leaves out."""
    return float(zeta(2.0 * beta, dim + 1))


# --- projection ------------------------------------------------------------------------


@dataclass(frozen=True)
class EllipsoidProjection:
    point: np.ndarray
    multiplier: float  # lambda in z_i = x_i a_i^2 / (a_i^2 + lambda)
    kkt_residual: float
    iterations: int


def ellipsoid_projection(x, spec: EllipsoidSpec, tol: float = PROJECTION_TOL,
                         max_iter: int = 200) -> EllipsoidProjection:
    """Euclidean projection onto the ellipsoid, with its multiplier and KKT residual.

    For an outside point the multiplier solves sum (x_i a_i / (a_i^2 + lam))^2 = 1,
    a decreasing convex equation in lam, by Newton steps kept inside a
    bisection bracket. The KKT residual is the larger of the constraint
    violation and the stationarity error scaled by max(1, max |x_i|).
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (spec.dim,) or not np.all(np.isfinite(x)):
        raise ValueError("point must be finite with one coordinate per axis")
    a2 = spec.semi_axes**2
    if spec.gauge(x) <= 1.0:
        return EllipsoidProjection(x.copy(), 0.0, 0.0, 0)
    xa2 = (x * spec.semi_axes) ** 2

    def excess(lam):
        r = xa2 / (a2 + lam) ** 2
        return r.sum() - 1.0, -2.0 * np.sum(r / (a2 + lam))

    lo, hi = 0.0, math.sqrt(xa2.sum())  # excess(hi) <= 0
    lam = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        val, slope = excess(lam)
        if abs(val) <= tol:
            break
        if val > 0:
            lo = lam
        else:
            hi = lam
        step = lam - val / slope
        lam = step if lo < step < hi else 0.5 * (lo + hi)
        if hi - lo <= 4 * np.finfo(float).eps * max(hi, 1e-300):
            break
    z = x * a2 / (a2 + lam)
    # relative to |x| so far-away points are not penalized for cancellation
    stationarity = np.max(np.abs(z - x + lam * z / a2)) / max(1.0, float(np.max(np.abs(x))))
    residual = max(abs(spec.gauge(z) - 1.0), float(stationarity))
    return EllipsoidProjection(z, float(lam), residual, it)


def project_ellipsoid(x, spec: EllipsoidSpec, tol: float = PROJECTION_TOL) -> np.ndarray:
    return ellipsoid_projection(x, spec, tol).point


# --- widths and constants --------------------------------------------------------------


@dataclass(frozen=True)
class EllipsoidWidths:
    sharp_width: float  # sqrt(sum a_i^2)
    dudley_sum: float  # sum over 2^k <= D of 2^(k/2) a_{2^k}
    localized: Callable[[float], float]  # eps -> sqrt(5 sum min(a_i^2, eps))


def ellipsoid_widths(spec: EllipsoidSpec) -> EllipsoidWidths:
    a = spec.semi_axes
    a2 = a * a
    sharp = math.sqrt(float(np.sum(a2)))
    k = np.arange(0, int(math.floor(math.log2(spec.dim))) + 1)
    dyadic = 2**k
    dyadic = dyadic[dyadic <= spec.dim]
    dudley = float(np.sum(np.sqrt(dyadic.astype(float)) * a[dyadic - 1]))

    def localized(eps: float) -> float:
        if eps < 0:
            raise ValueError("eps must be nonnegative")
        return math.sqrt(5.0 * float(np.sum(np.minimum(a2, eps))))

    return EllipsoidWidths(sharp, dudley, localized)


def _power_sum_limit(s: float, head: int = 1000) -> float:
    """sum_{i >= 1} i^(-s) for s > 1: explicit head plus an Euler-Maclaurin tail."""
    i = np.arange(1, head, dtype=float)
    body = float(np.sum(i ** (-s)))
    N = float(head)
    tail = (N ** (1 - s) / (s - 1) + 0.5 * N ** (-s) + s * N ** (-s - 1) / 12
            - s * (s + 1) * (s + 2) * N ** (-s - 3) / 720
            + s * (s + 1) * (s + 2) * (s + 3) * (s + 4) * N ** (-s - 5) / 30240)
    return body + tail


def sobolev_width_limits(beta: float) -> tuple[float, float]:
    """(sharp_width, dudley_sum) of the untruncated Sobolev ellipsoid.

    The Dudley sum is summed term by term until the geometric remainder is
    below 1e-17 relative.
    """
    if beta <= 0.5:
        raise UnsupportedBeta(f"smoothness {beta} must exceed 1/2")
    sharp = math.sqrt(_power_sum_limit(2.0 * beta))
    ratio = 2.0 ** (0.5 - beta)
    terms = int(math.ceil(math.log(1e-17 * (1 - ratio)) / math.log(ratio))) + 1
    k = np.arange(terms, dtype=float)
    dudley = float(np.sum(np.exp2(k / 2) * np.exp2(-beta * k)))
    return sharp, dudley


def c_beta(beta: float) -> tuple[float, float]:
    """(c_beta, C_beta = 4 c_beta + 1) of the ellipsoid width-moment bound."""
    if beta <= 0.5:
        raise UnsupportedBeta(f"smoothness {beta} must exceed 1/2")
    gap = 2.0 * beta - 1.0
    small = ((1 + beta) / 2 + 1 / (2 * gap)) * (beta / (4 * gap)) ** (-1.0 / (1 + 2 * beta))
    return small, 4.0 * small + 1.0


def width_moment_exponent(beta: float) -> float:
    return (2.0 * beta - 1.0) / (4.0 * beta)


def width_moment_G(beta: float, second_moment: float) -> float:
    """C_beta * E^((2 beta - 1) / (4 beta)): width bound at second moment E."""
    if second_moment < 0:
        raise ValueError("second moment must be nonnegative")
    _, big = c_beta(beta)
    if second_moment == 0:
        return 0.0
    return big * second_moment ** width_moment_exponent(beta)


# --- Lipschitz images and ERM ----------------------------------------------------------


@dataclass(frozen=True)
class LipschitzMap:
    """Coordinatewise map: identity, or soft_clip x -> kappa * tanh(x) (Lipschitz kappa <= 1)."""

    kind: str = "identity"
    kappa: float = 1.0

    def __post_init__(self):
        if self.kind not in ("identity", "soft_clip"):
            raise ValueError(f"unknown map {self.kind!r}")
        if self.kind == "soft_clip" and not 0 < self.kappa <= 1:
            raise ValueError("soft_clip needs 0 < kappa <= 1")

    def __call__(self, theta: np.ndarray) -> np.ndarray:
        return theta if self.kind == "identity" else self.kappa * np.tanh(theta)

    def derivative(self, theta: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return np.ones_like(theta)
        return self.kappa * (1.0 - np.tanh(theta) ** 2)

    def preimage(self, m: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return m
        ratio = m / self.kappa
        if np.any(np.abs(ratio) >= 1):
            raise InvalidTruth("point is outside the range of soft_clip")
        return np.arctanh(ratio)


IDENTITY = LipschitzMap()


def smooth_truth(spec: EllipsoidSpec, energy: float = 0.5) -> np.ndarray:
    """m_i proportional to a_i / i, scaled so that sum m_i^2 / a_i^2 = energy."""
    if not 0 <= energy <= 1:
        raise ValueError("energy must lie in [0, 1]")
    i = np.arange(1, spec.dim + 1, dtype=float)
    m = spec.semi_axes / i
    return m * math.sqrt(energy / spec.gauge(m))


def _as_generator(rng) -> tuple[np.random.Generator, int, int]:
    if isinstance(rng, RngStream):
        return rng.generator(), rng.seed, rng.stream_id
    return rng, 0, 0


def _random_in_ellipsoid(spec: EllipsoidSpec, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal(spec.dim)
    radius = rng.uniform() ** (1.0 / spec.dim)
    return spec.semi_axes * g / np.linalg.norm(g) * radius


def _fit_image(spec: EllipsoidSpec, phi: LipschitzMap, target: np.ndarray, starts: list[np.ndarray],
               max_iter: int = 5000, rel_tol: float = 1e-9) -> tuple[np.ndarray, float]:
    """Projected gradient for min over theta in the ellipsoid of |phi(theta) - target|^2."""
    best, best_val = None, math.inf
    for theta in starts:
        theta = project_ellipsoid(theta, spec)
        resid = phi(theta) - target
        val = float(resid @ resid)
        step = 1.0 / (2.0 * phi.kappa**2)
        for _ in range(max_iter):
            grad = 2.0 * resid * phi.derivative(theta)
            while True:
                cand = project_ellipsoid(theta - step * grad, spec)
                r_c = phi(cand) - target
                v_c = float(r_c @ r_c)
                move = cand - theta
                # sufficient decrease for a projected step
                if v_c <= val + grad @ move + (move @ move) / (2 * step) or step < 1e-16:
                    break
                step *= 0.5
            done = val - v_c <= rel_tol * max(val, 1e-300)
            theta, resid, val = cand, r_c, min(v_c, val)
            step *= 2.0
            if done:
                break
        if val < best_val:
            best, best_val = theta, val
    return phi(best), best_val


def erm_mean_trial(spec: EllipsoidSpec, lipschitz_map: LipschitzMap, truth, n: int,
                   noise_kind: str = "gaussian", rng=None, noise_scale: float = 1.0,
                   starts: int = 20) -> ErmTrial:
    """Mean estimation over T = phi(ellipsoid) from n noisy observations.

    The identity map gives the exact minimizer (projection of the sample
    mean); soft_clip runs multi-start projected gradient and is flagged
    heuristic.
    """
    check_noise_kind(noise_kind)
    m = np.asarray(truth, dtype=float).ravel()
    if m.shape != (spec.dim,) or not np.all(np.isfinite(m)):
        raise InvalidTruth("truth must be finite with one coordinate per axis")
    theta_true = lipschitz_map.preimage(m)
    if not spec.contains(theta_true):
        raise InvalidTruth("truth lies outside the constraint set")
    gen, seed, stream_id = _as_generator(rng if rng is not None else np.random.default_rng(0))
    xbar = m + noise_scale * mean_noise(noise_kind, n, spec.dim, gen)
    if lipschitz_map.kind == "identity":
        estimate = project_ellipsoid(xbar, spec)
        heuristic = False
    else:
        inner = np.clip(xbar / lipschitz_map.kappa, -1 + 1e-9, 1 - 1e-9)
        init = [np.arctanh(inner), np.zeros(spec.dim)]
        init += [_random_in_ellipsoid(spec, gen) for _ in range(max(starts - 2, 0))]
        estimate, _ = _fit_image(spec, lipschitz_map, xbar, init)
        heuristic = True
    diff = estimate - m
    return ErmTrial(m, estimate, int(n), float(diff @ diff), float(2.0 * diff @ (xbar - m)),
                    seed, stream_id, heuristic)


def toy_interval_trial(truth: float, n: int, noise_kind: str = "gaussian", rng=None) -> ErmTrial:
    """ERM over the interval [-1, 1]: the sample mean clipped to the interval."""
    return erm_mean_trial(EllipsoidSpec([1.0]), IDENTITY, [truth], n, noise_kind, rng)
