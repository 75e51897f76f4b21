"""Two weak-moment bounds interpolate to a bound on the mean.

If a nonnegative X has sup_t t^a P[X > A t] <= 1 and sup_t t^b P[X > B t] <= 1
with a < 1 < b, then P[X > s] <= min(1, (A/s)^a, (B/s)^b). Integrating and
splitting at the crossing s* with (A/s*)^a = (B/s*)^b gives

    E X <= (1/(1-a) + 1/(b-1)) A^alpha B^(1-alpha),   alpha/a + (1-alpha)/b = 1.

The constant is attained in the limit B/A -> infinity by the extremal law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _ordered(a: float, b: float) -> tuple[float, float]:
    lo, hi = min(a, b), max(a, b)
    if not (0 < lo < 1 < hi) or not (math.isfinite(hi)):
        raise ValueError("exponents must straddle 1: 0 < min(a, b) < 1 < max(a, b)")
    return lo, hi


def interpolation_exponent(a: float, b: float) -> float:
    """alpha in (0, 1) with alpha/a + (1 - alpha)/b = 1."""
    _ordered(a, b)
    return a * (b - 1) / (b - a)


def interpolation_constant(a: float, b: float) -> float:
    """1/(1 - a) + 1/(b - 1) for a < 1 < b (symmetric in the pair)."""
    lo, hi = _ordered(a, b)
    return 1.0 / (1.0 - lo) + 1.0 / (hi - 1.0)


def tail_integral(A: float, B: float, a: float, b: float) -> float:
    """Integral over s > 0 of min(1, (A/s)^a, (B/s)^b): the mean of the extremal law.

    Each piece is a power c * s^(-p) with p in {0, a, b}, never 1, so every
    interval between knots integrates in closed form.
    """
    _ordered(a, b)
    if A <= 0 or B <= 0:
        raise ValueError("scales must be positive")
    pieces = ((1.0, 0.0), (A**a, a), (B**b, b))  # (c, p): c * s^(-p)
    cross = (B**b / A**a) ** (1.0 / (b - a))
    edges = [0.0] + sorted({A, B, cross}) + [math.inf]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        mid = 2.0 * lo if math.isinf(hi) else (hi / 2.0 if lo == 0 else math.sqrt(lo * hi))
        c, p = min(pieces, key=lambda cp: cp[0] * mid ** -cp[1])
        upper = 0.0 if math.isinf(hi) else hi ** (1 - p)
        lower = lo ** (1 - p) if lo > 0 else 0.0
        total += c * (upper - lower) / (1 - p)
    return total


def weak_scale(samples, exponent: float) -> float:
    """Smallest A with sup_t t^exponent P[X > A t] <= 1 under the empirical law of ``samples``."""
    x = np.sort(np.asarray(samples, dtype=float))[::-1]
    if x.size == 0 or np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite and nonnegative")
    # sup over t is approached as t rises to each order statistic: x_(k)^p * k / N
    k = np.arange(1, x.size + 1)
    return float(np.max(x**exponent * k / x.size) ** (1.0 / exponent))


@dataclass(frozen=True)
class InterpolationCheck:
    mean: float
    scale_a: float
    scale_b: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.mean <= self.bound * (1 + 1e-12)


def interpolation_check(samples, a: float, b: float) -> InterpolationCheck:
    """Empirical mean against the interpolated bound with the tightest admissible scales."""
    alpha = interpolation_exponent(a, b)
    sa, sb = weak_scale(samples, a), weak_scale(samples, b)
    bound = interpolation_constant(a, b) * sa**alpha * sb ** (1 - alpha)
    return InterpolationCheck(float(np.mean(samples)), sa, sb, bound)
