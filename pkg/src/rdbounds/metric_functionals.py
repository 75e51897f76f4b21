"""Covering and packing numbers, Dudley's entropy integral, ball-mass functionals.

Conventions: balls are closed and centred at points of the space. Square
roots of logarithms use ln+ (negative logs clamp to zero).
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Literal

import networkx as nx
import numpy as np

from .core import DiscreteDistribution, FiniteMetricSpace, make_distribution, uniform
from .errors import SizeLimit

EXACT_LIMIT = 24

Method = Literal["exact", "greedy", "auto"]


def _sqrt_log(x):
    """sqrt(ln+ x), elementwise."""
    return np.sqrt(np.maximum(np.log(x), 0.0))


# --- covering ----------------------------------------------------------------------------


@dataclass(frozen=True)
class CoveringReport:
    radius: float
    count: int
    method: str
    centers: tuple


def _ball_masks(space: FiniteMetricSpace, radius: float) -> list[int]:
    inside = space.dist <= radius
    weights = 1 << np.arange(len(space), dtype=object)
    return [int(np.sum(weights[row])) for row in inside]


def _greedy_cover(masks: list[int], n: int) -> list[int]:
    """Max-coverage greedy with lazy re-evaluation; ties go to the lowest index."""
    uncovered = (1 << n) - 1
    heap = [(-bin(m).count("1"), i) for i, m in enumerate(masks)]
    heapq.heapify(heap)
    chosen = []
    while uncovered:
        negc, i = heapq.heappop(heap)
        fresh = bin(masks[i] & uncovered).count("1")
        if fresh == 0:
            continue
        if heap and fresh < -heap[0][0]:
            heapq.heappush(heap, (-fresh, i))
            continue
        chosen.append(i)
        uncovered &= ~masks[i]
    return chosen


def _exact_cover(masks: list[int], n: int) -> list[int]:
    """Minimum set cover by depth-first branch and bound.

    Branches on the uncovered element with the fewest covering balls; the
    bound is ceil(uncovered / largest ball).
    """
    full = (1 << n) - 1
    # drop balls contained in another ball (ties keep the lower index)
    keep = []
    for i, m in enumerate(masks):
        dominated = any((m | o) == o and (m != o or j < i) for j, o in enumerate(masks) if j != i)
        if not dominated:
            keep.append(i)
    cover_of = [[i for i in keep if masks[i] >> e & 1] for e in range(n)]
    biggest = max(bin(masks[i]).count("1") for i in keep)
    best = _greedy_cover(masks, n)

    def search(covered: int, chosen: list[int]):
        nonlocal best
        if covered == full:
            if len(chosen) < len(best):
                best = list(chosen)
            return
        left = n - bin(covered).count("1")
        if len(chosen) + -(-left // biggest) >= len(best):
            return
        e = min((e for e in range(n) if not covered >> e & 1), key=lambda e: len(cover_of[e]))
        options = sorted(cover_of[e], key=lambda i: -bin(masks[i] & ~covered).count("1"))
        for i in options:
            chosen.append(i)
            search(covered | masks[i], chosen)
            chosen.pop()

    search(0, [])
    return sorted(best)


def covering_number(space: FiniteMetricSpace, radius: float, method: Method = "auto") -> CoveringReport:
    """Fewest closed balls of the given radius, centred at points of the space, covering it."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    n = len(space)
    if n == 0:
        return CoveringReport(radius, 0, "exact", ())
    if method == "auto":
        method = "exact" if n <= EXACT_LIMIT else "greedy"
    masks = _ball_masks(space, radius)
    if method == "exact":
        if n > EXACT_LIMIT:
            raise SizeLimit(f"exact covering limited to {EXACT_LIMIT} points, got {n}")
        centers = _exact_cover(masks, n)
    elif method == "greedy":
        centers = _greedy_cover(masks, n)
    else:
        raise ValueError(f"unknown method {method!r}")
    return CoveringReport(float(radius), len(centers), method, tuple(centers))


# --- packing ------------------------------------------------------------------------------


@dataclass(frozen=True)
class PackingReport:
    radius: float
    count: int
    method: str
    members: tuple

    def __int__(self) -> int:
        return self.count


def greedy_packing(space: FiniteMetricSpace, radius: float) -> list[int]:
    """Maximal packing (pairwise distances >= radius) built in index order."""
    chosen: list[int] = []
    for i in range(len(space)):
        if all(space.dist[i, j] >= radius for j in chosen):
            chosen.append(i)
    return chosen


def packing_number(space: FiniteMetricSpace, radius: float, method: Method = "auto") -> PackingReport:
    """Largest subset with pairwise distances >= radius."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    n = len(space)
    if method == "auto":
        method = "exact" if n <= EXACT_LIMIT else "greedy"
    if method == "greedy":
        members = greedy_packing(space, radius)
    elif method == "exact":
        if n > EXACT_LIMIT:
            raise SizeLimit(f"exact packing limited to {EXACT_LIMIT} points, got {n}")
        g = nx.Graph()
        g.add_nodes_from(range(n))
        ii, jj = np.nonzero(np.triu(space.dist >= radius, k=1))
        g.add_edges_from(zip(ii.tolist(), jj.tolist()))
        clique, _ = nx.max_weight_clique(g, weight=None)
        members = sorted(clique)
    else:
        raise ValueError(f"unknown method {method!r}")
    return PackingReport(float(radius), len(members), method, tuple(members))


# --- Dudley integral ----------------------------------------------------------------------


@dataclass(frozen=True)
class CoveringProfile:
    """N(T, lambda) as a right-continuous step function."""

    breakpoints: np.ndarray  # distinct pairwise distances, starting at 0
    counts: np.ndarray  # N on [breakpoints[k], breakpoints[k+1])
    method: str

    def __call__(self, lam: float) -> int:
        k = np.searchsorted(self.breakpoints, lam, side="right") - 1
        return int(self.counts[max(k, 0)])


def covering_profile(space: FiniteMetricSpace, method: Method = "auto") -> CoveringProfile:
    n = len(space)
    if method == "auto":
        method = "exact" if n <= EXACT_LIMIT else "greedy"
    bps = np.unique(space.dist)
    counts = np.array([covering_number(space, float(b), method).count for b in bps])
    # enforce monotonicity, which a greedy count may break
    counts = np.minimum.accumulate(counts)
    return CoveringProfile(bps, counts, method)


def dudley_integral(space: FiniteMetricSpace, constant_K: float = 24.0, method: Method = "auto") -> float:
    """K times the integral over [0, diam] of sqrt(ln N(T, lambda)), summed exactly over breakpoints."""
    if constant_K <= 0:
        raise ValueError("constant must be positive")
    if len(space) <= 1:
        return 0.0
    prof = covering_profile(space, method)
    widths = np.diff(prof.breakpoints)
    return float(constant_K * np.sum(widths * _sqrt_log(prof.counts[:-1].astype(float))))


# --- ball-mass functional -----------------------------------------------------------------


def _ball_mass_all(dist: np.ndarray, w: np.ndarray, diam: float, with_grad: bool = False):
    """I_mu(t) for every row t of ``dist``, optionally with the gradient in the weights."""
    n = dist.shape[0]
    order = np.argsort(dist, axis=1, kind="stable")
    r = np.take_along_axis(dist, order, axis=1)
    m = np.cumsum(w[order], axis=1)
    seg = np.diff(np.concatenate([r, np.full((n, 1), diam)], axis=1), axis=1)
    seg = np.maximum(seg, 0.0)
    with np.errstate(divide="ignore"):
        lg = np.log(np.clip(m, 0, None))
    lg = np.minimum(lg, 0.0)  # masses above 1 by rounding
    root = np.sqrt(-lg)
    contrib = np.where(seg > 0, seg * root, 0.0)
    vals = contrib.sum(axis=1)
    if not with_grad:
        return vals
    # d/dm sqrt(ln 1/m) = -1 / (2 m sqrt(ln 1/m)); segments at full mass contribute nothing
    with np.errstate(divide="ignore", invalid="ignore"):
        dh = np.where((seg > 0) & (m < 1 - 1e-12) & (m > 0), -seg / (2 * m * np.maximum(root, 1e-6)), 0.0)
    # the sorted position j charges every segment at index >= j
    tail = np.cumsum(dh[:, ::-1], axis=1)[:, ::-1]
    grad = np.zeros((n, len(w)))
    np.put_along_axis(grad, order, tail, axis=1)
    return vals, grad


def ball_mass_functional(mu: DiscreteDistribution, t) -> float:
    """Integral over [0, diam] of sqrt(ln 1/mu(B(t, lambda))); ``t`` is a point label."""
    i = mu.space.index(t)
    row = mu.space.dist[i : i + 1]
    return float(_ball_mass_all(row, mu.weights, mu.space.diameter)[0])


def ball_mass_all(mu: DiscreteDistribution) -> np.ndarray:
    return _ball_mass_all(mu.space.dist, mu.weights, mu.space.diameter)


# --- gamma_2 / delta_2 heuristic search ---------------------------------------------------


@dataclass(frozen=True)
class ChainingFunctionals:
    """Heuristic bracket of chaining functionals.

    ``gamma2_upper`` is an upper bound on inf over measures of sup_t I_mu(t);
    ``delta2_lower`` a lower bound on sup over measures of inf_t I_mu(t).
    """

    dudley_value: float
    gamma2_upper: float
    delta2_lower: float
    measure_used: DiscreteDistribution
    measure_lower: DiscreteDistribution
    fernique_lower: float = 0.0  # sup over evaluated measures of the mu-average of I_mu


def gamma2_search(space: FiniteMetricSpace, iterations: int = 300, rng: np.random.Generator | None = None,
                  restarts: int = 4, step: float = 0.5) -> ChainingFunctionals:
    """Exponentiated-subgradient search over measures with random restarts.

    Starts from the uniform measure and ``restarts`` Dirichlet draws. The best
    measure seen so far is always kept, so reported values never get worse
    with more iterations.
    """
    n = len(space)
    if n <= 1:
        mu = uniform(space)
        return ChainingFunctionals(0.0, 0.0, 0.0, mu, mu, 0.0)
    rng = rng if rng is not None else np.random.default_rng(0)
    dist, diam = space.dist, space.diameter
    starts = [np.full(n, 1.0 / n)] + [rng.dirichlet(np.ones(n)) for _ in range(restarts)]

    best_up, best_up_w = math.inf, None
    best_lo, best_lo_w = -math.inf, None
    best_fer = 0.0
    for w0 in starts:
        # minimize the worst point
        w = w0.copy()
        for k in range(1, iterations + 1):
            vals, grad = _ball_mass_all(dist, w, diam, with_grad=True)
            worst = int(np.argmax(vals))
            if vals[worst] < best_up:
                best_up, best_up_w = float(vals[worst]), w.copy()
            best_fer = max(best_fer, float(w @ np.where(np.isfinite(vals), vals, 0.0)))
            g = grad[worst]
            scale = np.max(np.abs(g))
            if not np.isfinite(scale) or scale == 0:
                break
            w = w * np.exp(-step / math.sqrt(k) * g / scale)
            w = np.maximum(w / w.sum(), 1e-300)
            w /= w.sum()
        # maximize the best point
        w = w0.copy()
        for k in range(1, iterations + 1):
            vals, grad = _ball_mass_all(dist, w, diam, with_grad=True)
            easiest = int(np.argmin(vals))
            if vals[easiest] > best_lo:
                best_lo, best_lo_w = float(vals[easiest]), w.copy()
            g = grad[easiest]
            scale = np.max(np.abs(g))
            if not np.isfinite(scale) or scale == 0:
                break
            w = w * np.exp(step / math.sqrt(k) * g / scale)
            w = np.maximum(w / w.sum(), 1e-300)
            w /= w.sum()
    return ChainingFunctionals(
        dudley_integral(space, 1.0),
        best_up,
        best_lo,
        make_distribution(space, best_up_w),
        make_distribution(space, best_lo_w),
        best_fer,
    )


# --- super-Sudakov check ------------------------------------------------------------------


@dataclass(frozen=True)
class SuperSudakovReport:
    radius: float
    packing: tuple
    sup_mean: float
    sup_se: float
    ball_min_mean: float
    ball_min_se: float
    sudakov_term: float
    slack: float
    slack_se: float

    @property
    def holds(self) -> bool:
        return self.slack >= -3.0 * self.slack_se


def super_sudakov_check(process, radius: float, mc_samples: int = 100_000,
                        rng: np.random.Generator | None = None, chunk: int = 20_000) -> SuperSudakovReport:
    """Monte Carlo check of E sup_T X >= (r/4) sqrt(2 ln|P|) + min_s E sup_{B(s, r/4)} X.

    P is a maximal r-packing; all expectations use the same Gaussian draws, so
    the slack's standard error comes from the paired differences.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    pts = np.asarray(process.points, dtype=float)
    space = FiniteMetricSpace.from_points(pts)
    pack = greedy_packing(space, radius)
    balls = [np.flatnonzero(space.dist[s] <= radius / 4.0) for s in pack]
    term = radius / 4.0 * math.sqrt(2.0 * math.log(len(pack)))
    sups, ball_sups = [], []
    left = mc_samples
    while left > 0:
        m = min(chunk, left)
        x = rng.standard_normal((m, pts.shape[1])) @ pts.T
        sups.append(x.max(axis=1))
        ball_sups.append(np.column_stack([x[:, b].max(axis=1) for b in balls]))
        left -= m
    sup = np.concatenate(sups)
    bs = np.concatenate(ball_sups)
    means = bs.mean(axis=0)
    s_star = int(np.argmin(means))
    diff = sup - bs[:, s_star] - term
    se = lambda v: float(v.std(ddof=1) / math.sqrt(len(v)))
    return SuperSudakovReport(
        float(radius), tuple(pack), float(sup.mean()), se(sup), float(means[s_star]), se(bs[:, s_star]),
        term, float(diff.mean()), se(diff),
    )
