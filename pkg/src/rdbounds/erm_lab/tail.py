"""Fixed-point bound on the log moment generating function of the squared ERM error.

With a power-law width-moment function G(E) = coefficient * E^exponent, the
bound psi_bar is the largest psi >= 0 with psi <= RHS(psi), where

    RHS(psi) = sup_{eps >= 0} { -eps / C + (2 K C lam / sqrt n) G((eps + psi) / lam)
                                + K C sqrt(8 eps lam (eps + psi) / n) }.

C = K = 1 is the log-Sobolev form; the sub-Gaussian form takes C and K as
parameters. RHS is concave in psi, so {psi : psi <= RHS(psi)} is an interval
starting at 0 and its right end is found by bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import golden_section_max
from ..errors import Diverged, UnsupportedGrowth
from .ellipsoid import c_beta, width_moment_exponent
from .sparse import _check_q

PSI_CAP = 1e6
SUBGAUSSIAN_K = 432.0


@dataclass(frozen=True)
class PowerLawG:
    coefficient: float
    exponent: float

    def __post_init__(self):
        if self.coefficient < 0:
            raise ValueError("coefficient must be nonnegative")
        if self.exponent < 0:
            raise ValueError("exponent must be nonnegative")

    def __call__(self, second_moment: float) -> float:
        if self.coefficient == 0 or second_moment <= 0:
            return 0.0
        return self.coefficient * second_moment**self.exponent


def ellipsoid_G(beta: float) -> PowerLawG:
    return PowerLawG(c_beta(beta)[1], width_moment_exponent(beta))


def sparse_G(q: float, r: float, d: float) -> PowerLawG:
    _check_q(q)
    return PowerLawG(math.sqrt(math.log(d)) * r ** (q / (2 - q)), (1 - q) / (2 - q))


@dataclass(frozen=True)
class _Rhs:
    lam: float
    n: float
    width: PowerLawG
    c_const: float
    k_const: float

    def term(self, eps: float, psi: float) -> float:
        lam, n, c, k = self.lam, self.n, self.c_const, self.k_const
        val = -eps / c + 2.0 * k * c * lam / math.sqrt(n) * self.width((eps + psi) / lam)
        return val + k * c * math.sqrt(8.0 * eps * lam * (eps + psi) / n)

    def linear_coefficient(self) -> float:
        """Slope of the eps -> inf asymptote of the sqrt term minus the eps / C term."""
        return self.k_const * self.c_const * math.sqrt(8.0 * self.lam / self.n) - 1.0 / self.c_const

    def __call__(self, psi: float) -> float:
        scale = max(psi, self.lam, 1.0)
        logs = np.linspace(math.log(scale) - 40.0, math.log(scale) + 30.0, 281)
        vals = [self.term(math.exp(s), psi) for s in logs]
        j = int(np.argmax(vals))
        if j == len(logs) - 1:
            raise Diverged("inner supremum over eps is unbounded")
        lo, hi = logs[max(j - 1, 0)], logs[min(j + 1, len(logs) - 1)]
        _, best = golden_section_max(lambda s: self.term(math.exp(s), psi), lo, hi, tol=1e-12)
        return max(best, vals[j], self.term(0.0, psi))


def psi_bound(lam: float, n: float, width: PowerLawG, variant: str = "log_sobolev",
              c_const: float = 1.0, k_const: float = SUBGAUSSIAN_K, psi_cap: float = PSI_CAP,
              rel_tol: float = 1e-10, abs_tol: float = 1e-14) -> float:
    """Largest psi >= 0 with psi <= RHS(psi); see the module docstring."""
    if not (lam > 0 and n > 0):
        raise ValueError("lam and n must be positive")
    if width.exponent >= 1:
        raise UnsupportedGrowth(f"width exponent {width.exponent} must be below 1")
    if variant == "log_sobolev":
        c_const, k_const = 1.0, 1.0
    elif variant != "subgaussian":
        raise ValueError(f"unknown variant {variant!r}")
    rhs = _Rhs(float(lam), float(n), width, float(c_const), float(k_const))
    if rhs.linear_coefficient() >= 0:
        raise Diverged("the sqrt term grows at least as fast as the eps penalty")
    if rhs(0.0) <= 0.0:
        # RHS concave and RHS(0) = 0: psi_bar > 0 only if the right slope at 0 reaches 1
        if rhs(1e-12) < 1e-12:
            return 0.0
    hi = 1.0
    while rhs(hi) >= hi:
        if hi >= psi_cap:
            raise Diverged(f"no crossing below psi = {psi_cap:g}")
        hi = min(2.0 * hi, psi_cap)
    lo = 0.0
    while hi - lo > max(rel_tol * hi, abs_tol):
        mid = 0.5 * (lo + hi)
        if rhs(mid) >= mid:
            lo = mid
        else:
            hi = mid
    return lo


def tail_from_psi(psi_bar: float, lam: float, t: float) -> float:
    """min(1, exp(psi_bar - lam t^2)): Chernoff bound on P(|m_hat - m| > t)."""
    if lam <= 0 or t < 0 or psi_bar < 0:
        raise ValueError("need lam > 0, t >= 0 and psi_bar >= 0")
    return min(1.0, math.exp(psi_bar - lam * t * t))


def tail_threshold(psi_bar: float, lam: float, level: float) -> float:
    """The t at which the tail bound equals ``level`` (0 < level < 1)."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    return math.sqrt((psi_bar + math.log(1.0 / level)) / lam)


def empirical_log_mgf(squared_errors, lam: float) -> float:
    """ln mean exp(lam * e) computed stably."""
    e = lam * np.asarray(squared_errors, dtype=float)
    top = float(e.max())
    return top + math.log(float(np.mean(np.exp(e - top))))
