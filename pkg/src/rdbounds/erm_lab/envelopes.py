"""Closed-form auxiliary functions used by the width and entropy estimates."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.optimize import root
from scipy.special import gammainc

from ..rate_distortion import gaussian_penalized_rate

_INV_E = math.exp(-1.0)


def f_func(x: float) -> float:
    """x sqrt(ln(1/x)) on (0, 1/e), and the constant 1/e from there on."""
    if x <= 0:
        raise ValueError("f is defined for x > 0")
    if x >= _INV_E:
        return _INV_E
    return x * math.sqrt(math.log(1.0 / x))


@lru_cache(maxsize=1)
def envelope_tangency() -> tuple[float, float]:
    """(a1, a2): where the common tangent touches x ln(1/x) and ln x.

    Solves ln(1/a1) - 1 = 1/a2 (equal slopes) and a1 = ln a2 - 1 (equal
    intercepts) with a 2-D root finder.
    """
    def system(v):
        a1, a2 = v
        return [math.log(1.0 / a1) - 1.0 - 1.0 / a2, a1 - (math.log(a2) - 1.0)]

    sol = root(system, [0.3, 3.5], method="hybr", tol=1e-14)
    a1, a2 = (float(v) for v in sol.x)
    if not sol.success or max(abs(r) for r in system((a1, a2))) > 1e-12:
        raise ArithmeticError("tangency system did not converge")
    return a1, a2


def g_env(x: float) -> float:
    """Concave envelope of max(x ln(1/x), ln x) on (0, inf)."""
    if x <= 0:
        raise ValueError("g is defined for x > 0")
    a1, a2 = envelope_tangency()
    if x < a1:
        return x * math.log(1.0 / x)
    if x > a2:
        return math.log(x)
    return a1 + x / a2  # common tangent: intercept a1, slope 1/a2


def penalized_integral_ratio(t: float) -> tuple[float, float]:
    """(t * int_0^{1/t} f(1/u^2) du, 4 f(t)) with f the Gaussian penalized rate.

    The integral is done by adaptive quadrature, split at u = 1 where f
    changes branch.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    upper = 1.0 / t

    def integrand(u):
        return gaussian_penalized_rate(1.0 / (u * u)) if u > 0 else math.inf

    pieces = [(0.0, min(upper, 1.0))]
    if upper > 1.0:
        pieces.append((1.0, upper))
    total = sum(quad(integrand, lo, hi, limit=200, epsabs=1e-13, epsrel=1e-12)[0] for lo, hi in pieces)
    return t * total, 4.0 * gaussian_penalized_rate(t)


def penalized_integral_closed_form(t: float) -> float:
    """t * int_0^{1/t} f(1/u^2) du evaluated in closed form."""
    u0 = 1.0 / t
    if u0 <= 1.0:
        inner = 1.5 * u0 + u0 * math.log(1.0 / u0)
    else:
        inner = 2.0 - 0.5 / u0
    return t * inner


def f_integral_ratio(t: float) -> tuple[float, float]:
    """(t * int_0^{1/t} f(1/u^2) du, 4 f(t)) for f = :func:`f_func`.

    f(1/u^2) is 1/e up to u = sqrt(e); past it, u = e^s turns the integrand
    into sqrt(2 s) e^(-s), an incomplete gamma function of order 3/2.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    upper = 1.0 / t
    flat = min(upper, math.sqrt(math.e))
    total = flat * _INV_E
    if upper > flat:
        s_hi = math.log(upper)
        total += math.sqrt(2.0) * math.gamma(1.5) * (gammainc(1.5, s_hi) - gammainc(1.5, 0.5))
    return t * total, 4.0 * f_func(t)


def f_grid(x: np.ndarray) -> np.ndarray:
    return np.array([f_func(float(v)) for v in np.ravel(x)])
