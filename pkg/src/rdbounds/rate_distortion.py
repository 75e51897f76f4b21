"""Rate-distortion functions of discrete sources under squared-distance distortion.

All rates are in nats. The reproduction alphabet is the set of points of the
source's metric space. The solver works in slope form: for a multiplier
``beta`` it computes

    L(beta) = min over channels of  I(U; Z) + beta * E d^2(U, Z)
            = min over output laws q of  -sum_i p_i log sum_j q_j exp(-beta d_ij^2)

by Blahut-Arimoto sweeps followed by constrained-Newton polishing of the same
convex objective in ``q``. The gap ``max_j c_j - 1`` bounds the suboptimality of
``L`` at every iterate, so returned values carry a certificate.

The rate at a distortion target ``D`` is the Legendre value
``max_beta L(beta) - beta * D``, located by bisection on ``log(beta)``.
"""

from __future__ import annotations

import bisect
import csv
import heapq
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import nnls
from scipy.special import gammaln

from .core import (
    DiscreteDistribution,
    FiniteMetricSpace,
    binary_entropy,
    format_float,
    make_distribution,
    second_moments,
    sigma_m,
)
from .errors import GridTooNarrow, InfiniteKl, InvalidSpace, InvalidType, SizeLimit


def logsumexp(a: np.ndarray, axis: int | None = None):
    """ln sum exp(a) for finite-max input; scipy's version costs ~10x more per call on small arrays."""
    top = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - top), axis=axis, keepdims=True)) + top
    return out.item() if axis is None else np.squeeze(out, axis=axis)

# Multipliers on the rate-distortion integral giving the two-sided width bounds.
UPPER_CONSTANT = 48.0
UPPER_CONSTANT_SHARP = 8.0 * math.sqrt(2.0)

DEFAULT_GRID_POINTS = 128
DEFAULT_GRID_FLOOR = 1e-3
MAX_BISECTIONS = 60
DEFAULT_INTEGRAL_TOLERANCE = 1e-5
MAX_REFINEMENT_SOLVES = 400


# --- information measures ------------------------------------------------------------


def _weights(x) -> np.ndarray:
    return np.asarray(x.weights if isinstance(x, DiscreteDistribution) else x, dtype=float)


def entropy(mu) -> float:
    """Shannon entropy in nats, 0 log 0 = 0."""
    w = _weights(mu)
    w = w[w > 0]
    return float(-(w * np.log(w)).sum())


def kl(nu, mu) -> float:
    """D(nu || mu) in nats. Raises :class:`InfiniteKl` if nu charges a null point of mu."""
    a, b = _weights(nu), _weights(mu)
    if a.shape != b.shape:
        raise ValueError("distributions live on different alphabets")
    if np.any((a > 0) & (b <= 0)):
        raise InfiniteKl("support of nu is not contained in support of mu")
    m = a > 0
    return float((a[m] * (np.log(a[m]) - np.log(b[m]))).sum())


def zero_distortion_rate(mu: DiscreteDistribution) -> float:
    """R(0): entropy after merging support points at distance zero."""
    s = mu.support
    d = mu.space.dist[np.ix_(s, s)]
    w = mu.weights[s]
    label = -np.ones(len(s), dtype=int)
    for i in range(len(s)):
        if label[i] < 0:
            label[(d[i] == 0) & (label < 0)] = i
    merged = np.bincount(label, weights=w)
    return entropy(merged[merged > 0])


# --- slope-form solver ----------------------------------------------------------------


def _squared_distances(mu: DiscreteDistribution, reproduction) -> np.ndarray:
    emb = mu.space.embedding
    if emb is None:
        raise InvalidSpace("a custom reproduction alphabet needs a Euclidean embedding")
    rep = np.asarray(reproduction, dtype=float)
    if rep.ndim != 2 or rep.shape[1] != emb.shape[1] or not np.all(np.isfinite(rep)):
        raise InvalidSpace("reproduction points must be finite rows in the embedding dimension")
    diff = emb[mu.support][:, None, :] - rep[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    if np.any(d2.min(axis=1) > 1e-18):
        raise InvalidSpace("the reproduction alphabet must contain every support point")
    return d2


def densified_alphabet(mu: DiscreteDistribution, per_axis: int = 9) -> np.ndarray:
    """The embedded points of the space plus a regular grid over their bounding box.

    The infimum defining R allows reproductions anywhere, so a denser
    alphabet can only lower the computed rates.
    """
    emb = mu.space.embedding
    if emb is None:
        raise InvalidSpace("densification needs a Euclidean embedding")
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(emb.min(axis=0), emb.max(axis=0))]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, emb.shape[1])
    return np.unique(np.vstack([emb, grid]), axis=0)


@dataclass(frozen=True)
class SlopePoint:
    """Solution of the Lagrangian problem at one multiplier."""

    beta: float
    lagrangian: float  # L(beta)
    distortion: float  # E d^2 under the optimal channel
    rate: float  # L - beta * distortion
    q: np.ndarray = field(repr=False)
    gap: float = 0.0  # certified bound on L's suboptimality


class SlopeSolver:
    """Blahut-Arimoto with Newton polishing for a fixed source.

    ``check_monotone`` asserts that the objective never increases across
    sweeps, which is cheap and catches numerical breakdowns early.
    """

    def __init__(self, mu: DiscreteDistribution, tol: float = 1e-12, ba_sweeps: int = 5,
                 check_monotone: bool = True, reproduction: np.ndarray | None = None):
        dist = mu.space.dist
        if not np.all(np.isfinite(dist)):
            raise InvalidSpace("non-finite distance")
        s = mu.support
        self.mu = mu
        self.p = mu.weights[s]
        if reproduction is None:
            self.d2 = dist[s, :] ** 2  # sources x reproductions
        else:
            self.d2 = _squared_distances(mu, reproduction)
        self.k = self.d2.shape[1]
        moments = self.p @ self.d2
        self.sigma_m_sq = float(moments.min())
        self.center = int(np.argmin(moments))
        self.tol = tol
        self.ba_sweeps = ba_sweeps
        self.check_monotone = check_monotone
        self.evaluations = 0
        self._cache: dict[float, SlopePoint] = {}

    # objective pieces; logq may hold -inf
    def _terms(self, logq: np.ndarray, logK: np.ndarray):
        M = logq[None, :] + logK
        logZ = logsumexp(M, axis=1)
        F = -float(self.p @ logZ)
        W = np.exp(logK - logZ[:, None])  # K_ij / Z_i
        c = self.p @ W
        return F, logZ, W, c

    def solve(self, beta: float, warm: np.ndarray | None = None) -> SlopePoint:
        beta = float(beta)
        hit = self._cache.get(beta)
        if hit is not None:
            return hit
        if warm is None:
            warm = self._nearest_q(beta)
        pt = self._solve(beta, warm)
        self._cache[beta] = pt
        self.evaluations += 1
        return pt

    def _nearest_q(self, beta: float) -> np.ndarray | None:
        if not self._cache:
            return None
        keys = np.fromiter(self._cache.keys(), dtype=float)
        b = keys[np.argmin(np.abs(np.log(keys) - math.log(beta)))]
        return self._cache[b].q

    def _solve(self, beta: float, warm: np.ndarray | None) -> SlopePoint:
        k = self.k
        logK = -beta * self.d2
        if warm is None:
            q = np.full(k, 1.0 / k)
        else:
            # keep every atom alive so the sweeps can move mass back if needed
            q = 0.999 * np.asarray(warm, dtype=float) + 0.001 / k
        with np.errstate(divide="ignore"):
            logq = np.log(q)
        F, logZ, W, c = self._terms(logq, logK)
        for _ in range(self.ba_sweeps):
            if c.max() - 1.0 <= self.tol:
                break
            with np.errstate(divide="ignore"):
                logq = logq + np.log(c)
            logq -= logsumexp(logq)
            F_new, logZ, W, c = self._terms(logq, logK)
            if self.check_monotone:
                assert F_new <= F + 1e-12 * max(1.0, abs(F)), "objective increased during a sweep"
            F = F_new
        q = np.exp(logq)
        q, F, logZ, W, c = self._polish(q, logK, F, logZ, W, c)
        gap = max(float(c.max()) - 1.0, 0.0)
        with np.errstate(divide="ignore"):
            logq = np.log(q)
        Q = np.exp(logq[None, :] + logK - logZ[:, None])
        D = float(self.p @ np.sum(Q * self.d2, axis=1))
        D = max(D, 0.0)
        rate = max(F - beta * D, 0.0)
        q.setflags(write=False)
        return SlopePoint(beta, F, D, rate, q, gap)

    def _polish(self, q, logK, F, logZ, W, c, max_iter: int = 500):
        """Constrained-Newton steps: NNLS on the quadratic model, then a line search.

        The second-order model of the objective around q is
        ||sqrt(p) (W x - 2)||^2 / 2 up to a constant; a heavily weighted row keeps
        x on the simplex. Candidate atoms are the current support plus every atom
        whose gradient entry exceeds one. Falls back to a plain sweep if the
        search direction fails to descend.
        """
        tol = self.tol
        sp = np.sqrt(self.p)
        rho = 1e3
        for _ in range(max_iter):
            gap = c.max() - 1.0
            if gap <= tol:
                break
            cols = np.flatnonzero((q > 0) | (c > 1.0))
            A = np.vstack([sp[:, None] * W[:, cols], np.full((1, len(cols)), rho)])
            b = np.append(2.0 * sp, rho)
            x, _ = nnls(A, b, maxiter=100 * len(cols))
            moved = False
            if x.sum() > 0:
                target = np.zeros_like(q)
                target[cols] = x / x.sum()
                d = target - q
                slope = -float(c @ d)
                t = 1.0
                for _ in range(50):
                    qn = np.clip(q + t * d, 0.0, None)
                    qn /= qn.sum()
                    with np.errstate(divide="ignore"):
                        Fn, logZn, Wn, cn = self._terms(np.log(qn), logK)
                    if slope < 0 and Fn <= F + 1e-4 * t * slope:
                        moved = True
                        break
                    # at rounding level, accept any non-increase that tightens the certificate
                    if Fn <= F + 1e-15 * max(1.0, abs(F)) and cn.max() - 1.0 < gap:
                        moved = True
                        break
                    t *= 0.5
            if not moved:
                with np.errstate(divide="ignore"):
                    logq = np.log(q) + np.log(c)
                qn = np.exp(logq - logsumexp(logq))
                with np.errstate(divide="ignore"):
                    Fn, logZn, Wn, cn = self._terms(np.log(qn), logK)
            if self.check_monotone:
                assert Fn <= F + 1e-12 * max(1.0, abs(F)), "objective increased during polishing"
            if Fn >= F and cn.max() >= c.max():
                break
            q, F, logZ, W, c = qn, Fn, logZn, Wn, cn
        return q, F, logZ, W, c


# --- rate at a distortion target ------------------------------------------------------


@dataclass(frozen=True)
class RatePoint:
    target: float
    rate: float  # certified lower value max_beta L(beta) - beta * target
    rate_upper: float  # convex-chord upper value
    achieved_distortion: float  # distortion of the single-slope channel on the low side
    beta: float


class RateDistortionSolver:
    """Evaluates R(D) for one source, sharing slope solutions across targets."""

    def __init__(self, mu: DiscreteDistribution, tolerance: float = 1e-9,
                 reproduction: np.ndarray | None = None):
        self.mu = mu
        self.slopes = SlopeSolver(mu, tol=min(1e-12, tolerance * 1e-3), reproduction=reproduction)
        self.tolerance = tolerance
        self.sigma_m_sq = self.slopes.sigma_m_sq
        self.h0 = zero_distortion_rate(mu)
        d2 = self.slopes.d2
        pos = d2[d2 > 0]
        self._d2_min = float(pos.min()) if pos.size else 0.0

    def _bracket(self, target: float) -> tuple[SlopePoint, SlopePoint | None]:
        """Cached slopes around ``target``: D(lo) >= target >= D(hi)."""
        pts = sorted(self.slopes._cache.values(), key=lambda s: s.beta)
        lo = hi = None
        for s in pts:
            if s.distortion >= target:
                lo = s
            elif hi is None:
                hi = s
        if lo is None:
            b = 1.0 / self.sigma_m_sq
            while True:
                s = self.slopes.solve(b)
                if s.distortion >= target:
                    lo = s
                    break
                hi = s if hi is None or s.beta < hi.beta else hi
                b *= 0.25
        if hi is None:
            b = max(lo.beta * 4.0, 1.0 / self.sigma_m_sq)
            # D(beta) decays like exp(-beta * d2_min); past this the family is numerically flat
            b_cap = 1e3 * (50.0 + math.log(self.sigma_m_sq / target)) / self._d2_min
            while True:
                s = self.slopes.solve(b)
                if s.distortion < target:
                    hi = s
                    break
                lo = s
                if b > b_cap:
                    return lo, None
                b *= 4.0
        return lo, hi

    def rate(self, target: float) -> RatePoint:
        target = float(target)
        if target < 0:
            raise ValueError("distortion target must be nonnegative")
        if self.sigma_m_sq == 0.0 or target >= self.sigma_m_sq:
            return RatePoint(target, 0.0, 0.0, self.sigma_m_sq, 0.0)
        if target == 0.0:
            return RatePoint(target, self.h0, self.h0, 0.0, math.inf)
        lo, hi = self._bracket(target)
        if hi is None:
            # distortion target below numerical resolution of the slope family
            val = lo.lagrangian - lo.beta * target
            return RatePoint(target, min(max(val, 0.0), self.h0), self.h0, lo.distortion, lo.beta)
        best_lower = max(lo.lagrangian - lo.beta * target, hi.lagrangian - hi.beta * target)
        for _ in range(MAX_BISECTIONS):
            upper = self._chord(lo, hi, target)
            if upper - best_lower <= self.tolerance:
                break
            mid = math.sqrt(lo.beta * hi.beta)
            if not lo.beta < mid < hi.beta:
                break
            s = self.slopes.solve(mid)
            best_lower = max(best_lower, s.lagrangian - s.beta * target)
            if s.distortion >= target:
                lo = s
            else:
                hi = s
        upper = self._chord(lo, hi, target)
        lower = min(max(best_lower, 0.0), self.h0)
        return RatePoint(target, lower, max(upper, lower), hi.distortion, hi.beta)

    @staticmethod
    def _chord(lo: SlopePoint, hi: SlopePoint, target: float) -> float:
        span = lo.distortion - hi.distortion
        if span <= 0:
            return max(lo.rate, hi.rate)
        w = (lo.distortion - target) / span
        return (1 - w) * lo.rate + w * hi.rate


def blahut_arimoto(mu: DiscreteDistribution, target_distortion_sq: float,
                   tolerance: float = 1e-9, reproduction: np.ndarray | None = None) -> tuple[float, float]:
    """R(target) in nats and the distortion of the low-side single-slope channel."""
    if target_distortion_sq < 0:
        raise ValueError("target distortion must be nonnegative")
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    pt = RateDistortionSolver(mu, tolerance, reproduction).rate(target_distortion_sq)
    return pt.rate, pt.achieved_distortion


# --- curves and integrals -------------------------------------------------------------


@dataclass(frozen=True)
class RdCurve:
    """Samples of sigma -> R(sigma^2), sigma increasing, ending at sigma_m."""

    mu: DiscreteDistribution
    sigma: np.ndarray
    rate: np.ndarray
    sigma_m: float
    entropy: float
    convex: bool = True
    monotone: bool = True
    # solved slope family, sorted by distortion: achievable points (D, R) and
    # certified supporting lines D -> support - beta * D
    family_distortion: np.ndarray = field(default_factory=lambda: np.empty(0))
    family_rate: np.ndarray = field(default_factory=lambda: np.empty(0))
    family_beta: np.ndarray = field(default_factory=lambda: np.empty(0))
    family_support: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.sigma.tolist(), self.rate.tolist()))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sigma", "rate_nats"])
        for s, r in zip(self.sigma, self.rate):
            w.writerow([format_float(s), format_float(r)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def read_curve_csv(path) -> list[tuple[float, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["sigma", "rate_nats"]:
        raise ValueError("not a rate-distortion curve file")
    return [(float(a), float(b)) for a, b in rows[1:]]


def default_sigma_grid(mu: DiscreteDistribution, points: int = DEFAULT_GRID_POINTS,
                       floor: float = DEFAULT_GRID_FLOOR) -> np.ndarray:
    sm = sigma_m(mu)
    if sm == 0:
        return np.array([])
    return np.geomspace(sm * floor, sm, points)


def convexity_violation(d: np.ndarray, r: np.ndarray) -> float:
    """Largest amount by which (d, r) samples fall above a chord of their neighbours."""
    order = np.argsort(d)
    d, r = d[order], r[order]
    worst = 0.0
    for i in range(1, len(d) - 1):
        a, b = d[i - 1], d[i + 1]
        if b - a <= 0:
            continue
        chord = r[i - 1] + (r[i + 1] - r[i - 1]) * (d[i] - a) / (b - a)
        worst = max(worst, r[i] - chord)
    return worst


def rd_curve(mu: DiscreteDistribution, sigma_grid=None, tolerance: float = 1e-9,
             solver: RateDistortionSolver | None = None,
             integral_tolerance: float = DEFAULT_INTEGRAL_TOLERANCE) -> RdCurve:
    """Samples R(sigma^2) on the grid and refines the slope family behind them.

    The refinement solves extra slopes until the upper and lower envelopes of
    the integral of sqrt(R) over the grid range differ by at most
    ``integral_tolerance``; the sampled rows themselves are unaffected.
    """
    sm = sigma_m(mu)
    if sigma_grid is None:
        grid = default_sigma_grid(mu)
    else:
        grid = np.asarray(sigma_grid, dtype=float)
        if grid.ndim != 1 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
            raise ValueError("sigma grid must be positive and strictly increasing")
    if sm > 0 and (grid.size == 0 or grid[-1] < sm):
        grid = np.append(grid, sm)
    h = entropy(mu)
    if sm == 0:
        rates = np.zeros_like(grid)
        return RdCurve(mu, grid, rates, 0.0, h)
    solver = solver or RateDistortionSolver(mu, tolerance)
    rates = np.array([solver.rate(s * s).rate for s in grid])
    # exact facts: zero past sigma_m, never above R(0)
    rates[grid >= sm] = 0.0
    rates = np.minimum(rates, solver.h0)
    monotone = bool(np.all(np.diff(rates) <= 1e-9))
    convex = convexity_violation(grid**2, rates) <= 1e-6
    g = grid.copy()
    g.setflags(write=False)
    rates.setflags(write=False)
    fam = _refine_family(solver, float(grid[0]) ** 2, integral_tolerance)
    return RdCurve(mu, g, rates, sm, h, convex, monotone, *fam)


def _sqrt_linear_integral(s0, s1, r0, r1):
    """Integral over [s0, s1] of sqrt(R) with R linear in sigma^2 between the endpoints."""
    if s1 <= s0:
        return 0.0
    a0, a1 = s0 * s0, s1 * s1
    b = (r1 - r0) / (a1 - a0)  # dR / d(sigma^2)
    a = r0 - b * a0  # R = a + b sigma^2
    if abs(b) * (a1 - a0) <= 1e-12 * max(abs(a), 1e-300):
        return 0.5 * (math.sqrt(max(r0, 0)) + math.sqrt(max(r1, 0))) * (s1 - s0)

    def prim(s):
        v = max(a + b * s * s, 0.0)
        root = math.sqrt(v)
        if b > 0:
            return 0.5 * (s * root + a / math.sqrt(b) * math.asinh(s * math.sqrt(b / a))) if a > 0 else 0.5 * s * root
        # b < 0: R decreasing in sigma; a > 0 on the interval
        nb = -b
        arg = min(1.0, s * math.sqrt(nb / a)) if a > 0 else 1.0
        return 0.5 * (s * root + a / math.sqrt(nb) * math.asin(arg))

    return prim(s1) - prim(s0)


@dataclass(frozen=True)
class RdIntegral:
    value: float
    body: float  # over the sampled range
    cap: float  # below the smallest sample, with sqrt(R) replaced by sqrt(H)
    bracket: float = 0.0  # width of the [lower, upper] envelope interval for body


def _family_arrays(points, d_floor: float, d_max: float, h0: float):
    """Sorted achievable points and supporting lines, closed off at (d_max, 0)."""
    pts = sorted(points, key=lambda s: s.distortion)
    D = np.array([s.distortion for s in pts] + [d_max])
    R = np.array([s.rate for s in pts] + [0.0])
    B = np.array([s.beta for s in pts] + [0.0])
    S = np.array([s.lagrangian for s in pts] + [0.0])
    if D[0] > d_floor:
        # nothing solved below the floor: R <= R(0) there, and the first line still supports
        D, R = np.insert(D, 0, d_floor), np.insert(R, 0, h0)
        B, S = np.insert(B, 0, B[0]), np.insert(S, 0, S[0])
    # beyond d_max everything is the zero-rate point
    keep = D <= d_max
    keep[-1] = True
    D, R, B, S = D[keep], R[keep], B[keep], S[keep]
    # drop points below the last one under the floor; it anchors the first interval
    below = np.flatnonzero(D <= d_floor)
    if below.size:
        first = below[-1]
        D, R, B, S = D[first:], R[first:], B[first:], S[first:]
    # duplicates in distortion carry no interval
    uniq = np.concatenate([[True], np.diff(D) > 0])
    return D[uniq], R[uniq], B[uniq], S[uniq]


def _line(support: float, beta: float, d: float) -> float:
    return support - beta * d


def _interval_integrals(da, db, ra, rb, ba, bb, sa, sb, d_floor):
    """Upper (chord) and lower (supporting lines, floored at 0) integrals of sqrt(R).

    Integration is in sigma over [sqrt(max(da, d_floor)), sqrt(db)].
    """
    lo = max(da, d_floor)
    if db <= lo:
        return 0.0, 0.0
    span = db - da

    def chord(d):
        return ra + (rb - ra) * (d - da) / span if span > 0 else min(ra, rb)

    def envelope(d):
        return max(_line(sa, ba, d), _line(sb, bb, d), 0.0)

    upper = _sqrt_linear_integral(math.sqrt(lo), math.sqrt(db), chord(lo), chord(db))
    cuts = [lo, db]
    if ba != bb:
        cuts.append((sa - sb) / (ba - bb))
    for s, b in ((sa, ba), (sb, bb)):
        if b > 0:
            cuts.append(s / b)
    cuts = sorted({c for c in cuts if lo <= c <= db})
    lower = 0.0
    for c0, c1 in zip(cuts[:-1], cuts[1:]):
        if c1 > c0:
            lower += _sqrt_linear_integral(math.sqrt(c0), math.sqrt(c1), envelope(c0), envelope(c1))
    return upper, min(lower, upper)


def _envelope_integrals(D, R, B, S, d_floor):
    ups, lows = [], []
    for i in range(len(D) - 1):
        u, l = _interval_integrals(D[i], D[i + 1], R[i], R[i + 1], B[i], B[i + 1], S[i], S[i + 1], d_floor)
        ups.append(u)
        lows.append(l)
    return np.array(ups), np.array(lows)


def _refine_family(solver: RateDistortionSolver, d_floor: float, tolerance: float,
                   max_solves: int = MAX_REFINEMENT_SOLVES):
    """Bisects slopes inside the intervals where the envelopes disagree most."""
    slopes = solver.slopes
    D, R, B, S = (a.tolist() for a in _family_arrays(slopes._cache.values(), d_floor,
                                                        solver.sigma_m_sq, solver.h0))

    def gap(i):
        u, l = _interval_integrals(D[i], D[i + 1], R[i], R[i + 1], B[i], B[i + 1], S[i], S[i + 1], d_floor)
        return u - l

    gaps = {(B[i], B[i + 1]): gap(i) for i in range(len(D) - 1)}
    total = sum(gaps.values())
    heap = [(-g, k) for k, g in gaps.items()]
    heapq.heapify(heap)
    solves = 0
    while heap and total > tolerance and solves < max_solves:
        neg, key = heapq.heappop(heap)
        b_hi, b_lo = key
        mid = math.sqrt(b_hi * b_lo) if b_lo > 0 else 0.5 * b_hi
        if not b_lo < mid < b_hi:
            continue
        pt = slopes.solve(mid)
        solves += 1
        i = bisect.bisect_left(D, pt.distortion) - 1
        if not (0 <= i < len(D) - 1 and B[i] == b_hi and D[i] < pt.distortion < D[i + 1]):
            # no new point inside: the interval is as resolved as the family allows
            continue
        D.insert(i + 1, pt.distortion)
        R.insert(i + 1, pt.rate)
        B.insert(i + 1, pt.beta)
        S.insert(i + 1, pt.lagrangian)
        total += neg
        del gaps[key]
        for j in (i, i + 1):
            k, g = (B[j], B[j + 1]), gap(j)
            gaps[k] = g
            total += g
            heapq.heappush(heap, (-g, k))
    arrays = []
    for a in (D, R, B, S):
        a = np.array(a, dtype=float)
        a.setflags(write=False)
        arrays.append(a)
    return arrays


def rd_integral_parts(curve: RdCurve) -> RdIntegral:
    """Integral of sqrt(R(sigma^2)) over [0, sigma_m].

    R is convex in sigma^2, so on the sampled range it lies between the chord
    through achievable points of the slope family and the upper envelope of the
    certified supporting lines. Both are piecewise linear in sigma^2 and their
    square roots are integrated exactly; the body is the midpoint of the two.
    Curves without a slope family fall back to the chord through the samples.
    Below the first sample sqrt(R) is capped by sqrt(H).
    """
    s, r = curve.sigma, np.clip(curve.rate, 0.0, None)
    if curve.sigma_m == 0 or s.size == 0:
        return RdIntegral(0.0, 0.0, 0.0)
    keep = s <= curve.sigma_m
    s, r = s[keep], r[keep]
    cap = float(s[0]) * math.sqrt(max(curve.entropy, 0.0))
    if curve.family_distortion.size >= 2:
        ups, lows = _envelope_integrals(curve.family_distortion, curve.family_rate, curve.family_beta,
                                        curve.family_support, float(s[0]) ** 2)
        upper, lower = float(ups.sum()), float(lows.sum())
        body = 0.5 * (upper + lower)
        return RdIntegral(body + cap, body, cap, upper - lower)
    body = 0.0
    for i in range(len(s) - 1):
        body += _sqrt_linear_integral(s[i], s[i + 1], r[i], r[i + 1])
    return RdIntegral(float(body + cap), float(body), cap)


def rd_integral(curve: RdCurve) -> float:
    return rd_integral_parts(curve).value


# --- penalized integral ----------------------------------------------------------------


@dataclass(frozen=True)
class PenalizedIntegral:
    value: float
    head: float  # [0, alpha_min]
    body: float
    tail: float  # [alpha_max, inf)
    tail_exact: bool


def penalized_rd_integral(mu: DiscreteDistribution, alpha_grid=None, tolerance: float = 1e-3,
                          points: int = 600) -> float:
    return penalized_rd_integral_parts(mu, alpha_grid, tolerance, points).value


def penalized_rd_integral_parts(mu: DiscreteDistribution, alpha_grid=None, tolerance: float = 1e-3,
                                points: int = 600) -> PenalizedIntegral:
    """Integral over alpha > 0 of  min_D { D / alpha^2 + R(D) }.

    The integrand is the slope-form Lagrangian at beta = alpha^-2. Past the
    critical slope it equals sigma_m^2 / alpha^2 exactly, so the tail is added
    in closed form once the solver reports zero rate at alpha_max; otherwise
    the bound sigma_m^2 / alpha_max must be below ``tolerance``.
    """
    sm2 = float(second_moments(mu).min())
    if sm2 == 0:
        return PenalizedIntegral(0.0, 0.0, 0.0, 0.0, True)
    sm = math.sqrt(sm2)
    if alpha_grid is None:
        alpha = np.geomspace(sm * 1e-5, sm * 1e3, points)
    else:
        alpha = np.asarray(alpha_grid, dtype=float)
        if alpha.ndim != 1 or np.any(alpha <= 0) or np.any(np.diff(alpha) <= 0):
            raise ValueError("alpha grid must be positive and strictly increasing")
    slopes = SlopeSolver(mu)
    vals = np.empty(len(alpha))
    rate_tail = 0.0
    # from large alpha (small beta) downwards, so warm starts track the support as it grows
    for i in range(len(alpha) - 1, -1, -1):
        pt = slopes.solve(alpha[i] ** -2.0)
        vals[i] = min(pt.lagrangian, sm2 / alpha[i] ** 2)
        if i == len(alpha) - 1:
            rate_tail = pt.rate
    h0 = zero_distortion_rate(mu)
    tail_exact = rate_tail <= 1e-12
    tail = sm2 / alpha[-1]
    if not tail_exact and tail > tolerance:
        raise GridTooNarrow(f"tail bound {tail:.3g} exceeds tolerance {tolerance:.3g}")
    # trapezoid in log(alpha): integrand alpha * f(alpha)
    la = np.log(alpha)
    body = float(np.sum(0.5 * (vals[1:] * alpha[1:] + vals[:-1] * alpha[:-1]) * np.diff(la)))
    # L is decreasing in alpha and at most R(0) near zero
    head = float(alpha[0] * 0.5 * (vals[0] + h0))
    return PenalizedIntegral(head + body + float(tail), head, body, float(tail), tail_exact)


# --- Gaussian source --------------------------------------------------------------------


def gaussian_rd(sigma_m_sq: float, sigma_sq: float) -> float:
    """[1/2 ln(sigma_m^2 / sigma^2)]_+ for a Gaussian source of variance sigma_m^2."""
    if sigma_m_sq <= 0 or sigma_sq <= 0:
        raise ValueError("both arguments must be positive")
    return max(0.5 * math.log(sigma_m_sq / sigma_sq), 0.0)


def gaussian_penalized_rate(t: float) -> float:
    """min_D {D / alpha^2 + R(D)} for a Gaussian source, as a function of t = 2 sigma_m^2 / alpha^2.

    Equals t/2 for t <= 1 and (1 + ln t)/2 beyond.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    return 0.5 * t if t <= 1 else 0.5 * (1.0 + math.log(t))


def gaussian_saddle_bound(alpha: float, sigma_m_sq: float) -> float:
    """Saddle-point value of the penalized rate for the one-dimensional Gaussian toy problem."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return gaussian_penalized_rate(2.0 * sigma_m_sq / alpha**2)


def discretized_gaussian(points: int = 201, half_width: float = 5.0, scale: float = 1.0) -> DiscreteDistribution:
    """Normal(0, scale^2) restricted to an equispaced grid and renormalized."""
    x = np.linspace(-half_width, half_width, points) * scale
    space = FiniteMetricSpace.from_points(x)
    return make_distribution(space, np.exp(-0.5 * (x / scale) ** 2))


def binary_rd(distortion) -> np.ndarray:
    """ln 2 - h(D) for D < 1/2, zero beyond (uniform binary source, Hamming distortion)."""
    d = np.asarray(distortion, dtype=float)
    return np.where(d < 0.5, math.log(2.0) - binary_entropy(np.clip(d, 0, 0.5)), 0.0)


# --- method of types --------------------------------------------------------------------


@dataclass(frozen=True)
class TypeClassReport:
    n: int
    N: int
    nu: tuple
    exact_mass: float
    lower_bound: float
    upper_bound: float
    type_count: int

    @property
    def holds(self) -> bool:
        rel = 1e-12
        return (self.lower_bound <= self.exact_mass * (1 + rel) + 1e-300
                and self.exact_mass <= self.upper_bound * (1 + rel) + 1e-300)


def type_count(n: int, N: int) -> int:
    """Number of types of length-N sequences over an n-letter alphabet."""
    return math.comb(n + N - 1, n - 1)


def enumerate_types(n: int, N: int) -> Iterable[tuple[int, ...]]:
    """All count vectors of length n summing to N (stars and bars)."""
    for bars in combinations(range(N + n - 1), n - 1):
        prev = -1
        counts = []
        for b in bars:
            counts.append(b - prev - 1)
            prev = b
        counts.append(N + n - 1 - prev - 1)
        yield tuple(counts)


def type_class_report(mu_rational: Sequence, nu: Sequence, N: int) -> TypeClassReport:
    """Exact mass of a type class under the product law, with the standard two-sided bounds."""
    mu = np.array([float(Fraction(x)) for x in mu_rational])
    nu_f = [Fraction(x) for x in nu]
    if len(nu_f) != len(mu):
        raise InvalidType("type and distribution have different alphabet sizes")
    counts = []
    for v in nu_f:
        c = v * N
        if c.denominator != 1 or c < 0:
            raise InvalidType(f"N * nu = {c} is not a nonnegative integer")
        counts.append(int(c))
    if sum(counts) != N:
        raise InvalidType("type does not sum to one")
    n = len(mu)
    nu_arr = np.array([float(v) for v in nu_f])
    log_multi = float(gammaln(N + 1) - sum(gammaln(c + 1) for c in counts))
    if np.any((nu_arr > 0) & (mu <= 0)):
        exact = 0.0
        lower = upper = 0.0
    else:
        m = nu_arr > 0
        exact = math.exp(log_multi + float(np.sum(np.array(counts)[m] * np.log(mu[m]))))
        div = kl(nu_arr, mu)
        upper = math.exp(-N * div)
        lower = (N + 1) ** (-n) * upper
    return TypeClassReport(n, N, tuple(nu_f), exact, lower, upper, type_count(n, N))


# --- typical-set covering at small block length ----------------------------------------------


@dataclass(frozen=True)
class TypicalCovering:
    log_cover_per_N: float
    cover_count: int
    typical_size: int
    rd_at_sigma: float
    rd_at_2sigma: float  # R(4 sigma^2)


MAX_TYPICAL_N = 14


def typical_covering_smallN(mu: DiscreteDistribution, sigma: float, N: int) -> TypicalCovering:
    """Greedy covering of the typical set of a two-point source by radius-2 sqrt(N) sigma balls.

    A convergence illustration: the per-letter log cover count sits between
    R(4 sigma^2) and R(sigma^2) up to terms vanishing in N.
    """
    if len(mu.space) != 2:
        raise SizeLimit("typical covering is implemented for two-point spaces only")
    if N < 1 or N > MAX_TYPICAL_N:
        raise SizeLimit(f"block length must be in [1, {MAX_TYPICAL_N}]")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    delta = float(mu.space.dist[0, 1])
    p1 = float(mu.weights[1])
    seq = np.arange(1 << N, dtype=np.uint32)
    ones = np.bitwise_count(seq).astype(int)
    typical = seq[2.0 * np.abs(ones / N - p1) <= N ** (-1.0 / 3.0)]
    solver = RateDistortionSolver(mu)
    r1 = solver.rate(sigma**2).rate
    r4 = solver.rate(4 * sigma**2).rate
    m = len(typical)
    if m == 0:
        return TypicalCovering(0.0, 0, 0, r1, r4)
    # sequence metric: delta * sqrt(Hamming distance)
    if delta == 0:
        ham_radius = N
    else:
        ham_radius = math.floor((2.0 * math.sqrt(N) * sigma / delta) ** 2 + 1e-9)
    count = _greedy_cover_hamming(typical, ham_radius)
    return TypicalCovering(math.log(count) / N, count, m, r1, r4)


def _greedy_cover_hamming(words: np.ndarray, radius: int) -> int:
    m = len(words)
    if radius <= 0:
        return m
    nbytes = (m + 7) // 8
    balls = np.empty((m, nbytes), dtype=np.uint8)
    for start in range(0, m, 512):
        block = words[start:start + 512]
        ham = np.bitwise_count(block[:, None] ^ words[None, :])
        balls[start:start + 512] = np.packbits(ham <= radius, axis=1)
    uncovered = np.packbits(np.ones(m, dtype=bool))
    counts = np.bitwise_count(balls).sum(axis=1)
    heap = [(-int(c), i) for i, c in enumerate(counts)]
    heapq.heapify(heap)
    left = m
    used = 0
    while left > 0:
        negc, i = heapq.heappop(heap)
        fresh = int(np.bitwise_count(balls[i] & uncovered).sum())
        if fresh == 0:
            continue
        if heap and fresh < -heap[0][0]:
            heapq.heappush(heap, (-fresh, i))
            continue
        uncovered &= ~balls[i]
        left -= fresh
        used += 1
    return used
