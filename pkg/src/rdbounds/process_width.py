"""Gaussian suprema, the coupling width w(mu), and the explicit sandwich constants.

The width of a distribution mu on R^k is

    w(mu) = sup over couplings of (G, Z), G ~ N(0, I), Z ~ mu, of E <G, Z>,

estimated by an exact optimal assignment between n Gaussian draws and n draws
from mu. When mu has few atoms the assignment is a transportation problem
with that many sinks and is solved exactly by successive longest paths.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import (DiscreteDistribution, FiniteMetricSpace, binary_entropy, golden_section_max,
                   make_distribution)
from .errors import InvalidDistribution, InvalidSpace, SizeLimit
from .rate_distortion import UPPER_CONSTANT, rd_curve, rd_integral_parts

MAX_ASSIGNMENT = 4096
SINK_SOLVER_LIMIT = 64  # distinct atoms up to which the sink-graph solver is used


@dataclass(frozen=True)
class LinearProcessSpec:
    """Finite index set T in R^k with X_t = <G, t>, G standard normal."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0 or not np.all(np.isfinite(pts)):
            raise InvalidSpace("process points must be a nonempty finite (n, k) array")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def space(self) -> FiniteMetricSpace:
        return FiniteMetricSpace.from_points(self.points)


def mc_sup(process: LinearProcessSpec, n_samples: int, rng: np.random.Generator,
           chunk: int = 50_000) -> "WidthEstimate":
    """Monte Carlo estimate of E[max_t <G, t>] with its standard error."""
    if n_samples < 100:
        raise ValueError("mc_sup needs at least 100 samples")
    vals = []
    left = n_samples
    while left > 0:
        m = min(chunk, left)
        vals.append((rng.standard_normal((m, process.dim)) @ process.points.T).max(axis=1))
        left -= m
    v = np.concatenate(vals)
    return WidthEstimate(float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v))), len(v), "sup_T")


# --- exact assignment with few distinct targets ------------------------------------------


def sink_assignment(profit: np.ndarray, capacity: Sequence[int]) -> np.ndarray:
    """Maximum-profit assignment of rows to k sinks with integer capacities.

    ``profit`` has shape (n, k) and capacities sum to n. Rows are inserted one
    at a time along a longest augmenting path in the k-node exchange graph
    (edge j -> l: best gain from moving one row from sink j to sink l). The
    partial assignment stays optimal after each insertion, so the final one
    is optimal. Returns the sink of every row.
    """
    C = np.asarray(profit, dtype=float)
    n, k = C.shape
    cap = np.asarray(capacity, dtype=int)
    if cap.shape != (k,) or np.any(cap < 0) or cap.sum() != n:
        raise ValueError("capacities must be nonnegative and sum to the number of rows")
    sink = np.full(n, -1)
    load = np.zeros(k, dtype=int)
    gain = np.full((k, k), -np.inf)  # gain[j, l]: best move of a row from j to l
    mover = np.full((k, k), -1)

    def refresh(j):
        rows = np.flatnonzero(sink == j)
        if rows.size == 0:
            gain[j] = -np.inf
            mover[j] = -1
            return
        delta = C[rows] - C[rows, j][:, None]
        best = np.argmax(delta, axis=0)
        gain[j] = delta[best, np.arange(k)]
        mover[j] = rows[best]
        gain[j, j] = -np.inf

    for i in range(n):
        value = C[i].copy()
        pred = np.full(k, -1)
        for _ in range(k):
            cand = value[:, None] + gain  # via j into l
            j_best = np.argmax(cand, axis=0)
            best = cand[j_best, np.arange(k)]
            improve = best > value + 1e-12 * (1.0 + np.abs(value))
            if not improve.any():
                break
            value[improve] = best[improve]
            pred[improve] = j_best[improve]
        open_sinks = load < cap
        end = int(np.argmax(np.where(open_sinks, value, -np.inf)))
        # walk back from the end sink, collecting moves (row, from, to)
        moves = []
        l = end
        seen = set()
        while pred[l] >= 0:
            j = int(pred[l])
            if j in seen:  # guards against a cycle from rounding ties
                break
            seen.add(j)
            moves.append((int(mover[j, l]), j, l))
            l = j
        first = l
        touched = {first}
        for row, j, l2 in moves:
            sink[row] = l2
            touched.update((j, l2))
        sink[i] = first
        load[end] += 1
        for j in touched:
            refresh(j)
    return sink


def assignment_value(y: np.ndarray, z: np.ndarray) -> tuple[float, np.ndarray]:
    """max over permutations of mean_i <y_i, z_pi(i)>, and the matched products."""
    n = y.shape[0]
    if z.shape[0] != n:
        raise ValueError("sample sizes differ")
    atoms, inverse = np.unique(z, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    if len(atoms) <= SINK_SOLVER_LIMIT:
        profit = y @ atoms.T
        sink = sink_assignment(profit, np.bincount(inverse, minlength=len(atoms)))
        matched = profit[np.arange(n), sink]
    else:
        M = y @ z.T
        r, c = linear_sum_assignment(M, maximize=True)
        matched = M[r, c]
    return float(matched.mean()), matched


@dataclass(frozen=True)
class WidthEstimate:
    """A Monte Carlo mean; ``kind`` is ``"sup_T"`` for E sup or ``"w_mu"`` for the coupling width."""

    value: float
    std_error: float
    samples: int
    kind: str


def _process_weights(process: LinearProcessSpec, mu) -> np.ndarray:
    w = np.asarray(mu.weights if isinstance(mu, DiscreteDistribution) else mu, dtype=float)
    if w.shape != (len(process.points),):
        raise InvalidSpace("mu must put one weight on every process point")
    if isinstance(mu, DiscreteDistribution) and mu.space.embedding is not None:
        if not np.allclose(mu.space.embedding, process.points, atol=1e-12):
            raise InvalidSpace("mu lives on a different point set than the process")
    if np.any(w < 0) or not np.isfinite(w).all() or abs(w.sum() - 1.0) > 1e-9:
        raise InvalidDistribution("mu weights must be a probability vector")
    return w / w.sum()


def process_distribution(process: LinearProcessSpec, mu) -> DiscreteDistribution:
    """mu as a distribution on the Euclidean space of the process points."""
    return make_distribution(process.space(), _process_weights(process, mu))


def width_of_measure(process: LinearProcessSpec, mu, n_samples: int = MAX_ASSIGNMENT,
                     rng: np.random.Generator | None = None, bootstrap: int = 0) -> WidthEstimate:
    """Empirical-assignment estimate of w(mu).

    ``mu`` is a distribution on the process points (or its weight vector).
    The standard error is std/sqrt(n) of the matched products; with
    ``bootstrap > 0`` it is instead a pair bootstrap of their mean. Both
    measure sampling noise at the fixed optimal matching.
    """
    if n_samples < 2:
        raise ValueError("need at least two samples")
    if n_samples > MAX_ASSIGNMENT:
        raise SizeLimit(f"assignment size limited to {MAX_ASSIGNMENT}")
    w = _process_weights(process, mu)
    rng = rng if rng is not None else np.random.default_rng(0)
    y = rng.standard_normal((n_samples, process.dim))
    z = process.points[rng.choice(len(w), size=n_samples, p=w)]
    value, matched = assignment_value(y, z)
    if bootstrap > 0:
        idx = rng.integers(0, n_samples, size=(bootstrap, n_samples))
        se = float(matched[idx].mean(axis=1).std(ddof=1))
    else:
        se = float(matched.std(ddof=1) / math.sqrt(n_samples))
    return WidthEstimate(value, se, n_samples, "w_mu")


def _embedding(mu: DiscreteDistribution) -> np.ndarray:
    emb = mu.space.embedding
    if emb is None:
        raise InvalidSpace("needs a Euclidean embedding of the space")
    return emb


def covariance(mu: DiscreteDistribution) -> np.ndarray:
    emb = _embedding(mu)
    mean = mu.weights @ emb
    c = emb - mean
    return (c * mu.weights[:, None]).T @ c


def trace_sqrt_cov_bound(mu: DiscreteDistribution) -> float:
    """tr(Sigma^{1/2}) for the covariance of mu; an upper bound on w(mu)."""
    ev = np.linalg.eigvalsh(covariance(mu))
    if ev.min(initial=0.0) < -1e-9:
        warnings.warn(f"covariance has eigenvalue {ev.min():.3g}; clipped at 0", RuntimeWarning)
    return float(np.sqrt(np.clip(ev, 0, None)).sum())


# --- explicit constants ------------------------------------------------------------------


def lower_constant_profile(tau: float) -> float:
    """(4 - 5 tau) / (2 sqrt 2 (4 - tau) ln(4 / tau)) for tau in (0, 4/5)."""
    return (4 - 5 * tau) / (2 * math.sqrt(2) * (4 - tau) * math.log(4 / tau))


def lower_bound_constant(tol: float = 1e-10) -> tuple[float, float]:
    """(c, tau*) with c the maximum of :func:`lower_constant_profile` over (0, 4/5)."""
    tau, c = golden_section_max(lower_constant_profile, 1e-12, 0.8 - 1e-12, tol=tol)
    return c, tau


def majorizing_profile(a: float, c: float) -> float:
    """sqrt(1 - a^-2) / (2a / c + sqrt(2 pi h(a^-2))) for a > 1, h the binary entropy in nats."""
    h = float(binary_entropy(a**-2))
    return math.sqrt(1 - a**-2) / (2 * a / c + math.sqrt(2 * math.pi * h))


def majorizing_constant(tol: float = 1e-10) -> tuple[float, float]:
    """(c_bar, a*): the maximum of :func:`majorizing_profile` over a > 1."""
    c, _ = lower_bound_constant(tol)
    a, cbar = golden_section_max(lambda a: majorizing_profile(a, c), 1.0 + 1e-12, 10.0, tol=tol)
    return cbar, a


# --- two-sided sandwich ------------------------------------------------------------------


@dataclass(frozen=True)
class SandwichReport:
    rd_integral: float
    lower: float  # c * integral
    upper: float  # 48 * integral
    width: float
    width_se: float
    trace_sqrt: float
    sup_mean: float
    sup_se: float

    @property
    def lower_holds(self) -> bool:
        return self.width >= self.lower - 3.0 * self.width_se

    @property
    def upper_holds(self) -> bool:
        return self.width <= self.upper + 3.0 * self.width_se

    @property
    def holds(self) -> bool:
        return self.lower_holds and self.upper_holds


def sandwich_check(process: LinearProcessSpec, mu, n_samples: int = MAX_ASSIGNMENT,
                   rng: np.random.Generator | None = None, mc_samples: int = 100_000,
                   grid=None, curve_tolerance: float = 1e-9) -> SandwichReport:
    """Evaluate c * I - 3 SE <= w(mu) <= 48 * I + 3 SE, I the rate-distortion integral of mu.

    ``mc_samples`` draws (0 to skip) go to E sup over the support of mu, which
    is reported alongside since w(mu) can never exceed it.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    dist = process_distribution(process, mu)
    curve = rd_curve(dist, grid, curve_tolerance)
    integral = rd_integral_parts(curve).value
    c, _ = lower_bound_constant()
    w = width_of_measure(process, dist, n_samples, rng)
    if mc_samples:
        sup = mc_sup(LinearProcessSpec(process.points[dist.support]), mc_samples, rng)
        sup_mean, sup_se = sup.value, sup.std_error
    else:
        sup_mean = sup_se = math.nan
    return SandwichReport(integral, c * integral, UPPER_CONSTANT * integral, w.value, w.std_error,
                          trace_sqrt_cov_bound(dist), sup_mean, sup_se)
