"""Weak l_q balls: radius, rank-clipping projection, sparse-regression ERM, quantizer."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidDesign, InvalidTruth
from .ellipsoid import _as_generator
from .noise import check_noise_kind, noise
from .trials import ErmTrial

MEMBERSHIP_TOL = 1e-12
DESIGN_TOL = 1e-9
DESIGNS = ("orthogonal_identity", "random_unit_columns")


def _check_q(q: float) -> None:
    if not 0 < q < 1:
        raise ValueError(f"q must lie in (0, 1), got {q}")


@dataclass(frozen=True)
class WeakLqSpec:
    """wB_q(r) in R^d: the k-th largest magnitude is at most r k^(-1/q)."""

    q: float
    r: float
    d: int

    def __post_init__(self):
        _check_q(self.q)
        if not self.r > 0 or self.d < 1:
            raise ValueError("need r > 0 and d >= 1")

    @property
    def R(self) -> float:
        return self.r**self.q

    def caps(self) -> np.ndarray:
        return self.r * np.arange(1, self.d + 1, dtype=float) ** (-1.0 / self.q)

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        mags = np.sort(np.abs(np.asarray(x, dtype=float)))[::-1]
        return bool(np.all(mags <= self.caps() * (1 + tol) + tol * 1e-300))


def weak_lq_radius(x, q: float) -> float:
    """sup_t t * #{i : |x_i| > t}^(1/q), evaluated as max_k k^(1/q) |x|_(k)."""
    _check_q(q)
    mags = np.sort(np.abs(np.asarray(x, dtype=float).ravel()))[::-1]
    if mags.size == 0:
        return 0.0
    k = np.arange(1, mags.size + 1, dtype=float)
    return float(np.max(k ** (1.0 / q) * mags))


def project_weak_lq(x, spec: WeakLqSpec) -> np.ndarray:
    """Clip the k-th largest magnitude at r k^(-1/q), keeping positions and signs."""
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (spec.d,):
        raise ValueError("dimension mismatch")
    order = np.argsort(-np.abs(x), kind="stable")
    out = x.copy()
    mags = np.minimum(np.abs(x[order]), spec.caps())
    out[order] = np.sign(x[order]) * mags
    return out


def extremal_truth(spec: WeakLqSpec, rng: np.random.Generator) -> np.ndarray:
    """r k^(-1/q) at random positions with random signs: every cap is attained."""
    beta = np.zeros(spec.d)
    pos = rng.permutation(spec.d)
    signs = rng.choice([-1.0, 1.0], size=spec.d)
    beta[pos] = signs * spec.caps()
    return beta


# --- sparse regression -----------------------------------------------------------------


def random_unit_design(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Gaussian n x d matrix with every column rescaled to norm sqrt(n)."""
    x = rng.standard_normal((n, d))
    return x * (math.sqrt(n) / np.linalg.norm(x, axis=0))


def validate_design(matrix: np.ndarray, n: int) -> None:
    if matrix.ndim != 2 or matrix.shape[0] != n:
        raise InvalidDesign(f"design must have {n} rows")
    norms = np.linalg.norm(matrix, axis=0) / math.sqrt(n)
    if np.max(np.abs(norms - 1.0)) > DESIGN_TOL:
        raise InvalidDesign("columns of design / sqrt(n) must have unit norm")


def _objective(design, y, beta, n):
    r = y - design @ beta
    return float(r @ r) / n


def _pgd_weak_lq(design: np.ndarray, y: np.ndarray, spec: WeakLqSpec, starts: list[np.ndarray],
                 max_iter: int = 5000, rel_tol: float = 1e-9) -> tuple[np.ndarray, float]:
    """Projected gradient (rank-clip projection, backtracking) from several starts."""
    n = design.shape[0]
    lip = 2.0 * np.linalg.norm(design, 2) ** 2 / n
    best, best_val = None, math.inf
    for beta in starts:
        beta = project_weak_lq(beta, spec)
        val = _objective(design, y, beta, n)
        step = 1.0 / lip
        for _ in range(max_iter):
            grad = -2.0 / n * (design.T @ (y - design @ beta))
            while True:
                cand = project_weak_lq(beta - step * grad, spec)
                v_c = _objective(design, y, cand, n)
                if v_c <= val or step < 1e-12 / lip:
                    break
                step *= 0.5
            done = val - v_c <= rel_tol * max(val, 1e-300)
            if v_c <= val:
                beta, val = cand, v_c
            if done:
                break
        if val < best_val:
            best, best_val = beta, val
    return best, best_val


def erm_sparse_trial(design, beta_star, spec: WeakLqSpec, n: int, noise_kind: str = "gaussian",
                     rng=None, noise_scale: float = 1.0, starts: int = 20) -> ErmTrial:
    """Least squares over wB_q(r) for Y = X beta* + w with unit-variance noise w.

    ``design`` is ``"orthogonal_identity"`` (X^T X = n I), ``"random_unit_columns"``
    (drawn here), or an explicit n x d matrix. With the orthogonal design the
    minimizer is the rank-clip projection of X^T Y / n, and for Gaussian noise
    X^T w / n is drawn directly from its N(0, I/n) law (so n < d is allowed).
    Other designs use multi-start projected gradient, flagged heuristic.
    The squared error is the prediction error (1/n) |X (beta_hat - beta*)|^2.
    """
    check_noise_kind(noise_kind)
    b_star = np.asarray(beta_star, dtype=float).ravel()
    if b_star.shape != (spec.d,) or not spec.contains(b_star):
        raise InvalidTruth("beta* must lie in the weak l_q ball")
    gen, seed, stream_id = _as_generator(rng if rng is not None else np.random.default_rng(0))
    if isinstance(design, str) and design == "orthogonal_identity":
        if noise_kind == "gaussian":
            xi = noise_scale * gen.standard_normal(spec.d) / math.sqrt(n)
        else:
            if n < spec.d:
                raise InvalidDesign("an orthogonal design with non-Gaussian noise needs n >= d")
            q_mat, _ = np.linalg.qr(gen.standard_normal((n, spec.d)))
            xi = noise_scale * (q_mat.T @ noise(noise_kind, n, gen)) / math.sqrt(n)
        estimate = project_weak_lq(b_star + xi, spec)
        diff = estimate - b_star
        return ErmTrial(b_star, estimate, int(n), float(diff @ diff), float(2.0 * xi @ diff),
                        seed, stream_id, False)
    if isinstance(design, str):
        if design != "random_unit_columns":
            raise InvalidDesign(f"unknown design {design!r}; expected one of {DESIGNS}")
        matrix = random_unit_design(n, spec.d, gen)
    else:
        matrix = np.asarray(design, dtype=float)
    validate_design(matrix, n)
    if matrix.shape[1] != spec.d:
        raise InvalidDesign("design column count differs from the ball dimension")
    w = noise_scale * noise(noise_kind, n, gen)
    y = matrix @ b_star + w
    init = [matrix.T @ y / n, np.zeros(spec.d)]
    init += [extremal_truth(spec, gen) * gen.uniform() for _ in range(max(starts - 2, 0))]
    estimate, _ = _pgd_weak_lq(matrix, y, spec, init)
    fit = matrix @ (estimate - b_star)
    return ErmTrial(b_star, estimate, int(n), float(fit @ fit) / n, float(2.0 * w @ fit) / n,
                    seed, stream_id, True)


def empirical_risk(design: np.ndarray, y: np.ndarray, beta) -> float:
    return _objective(np.asarray(design, float), np.asarray(y, float), np.asarray(beta, float),
                      np.asarray(design).shape[0])


# --- rate-distortion surrogate and width moment ----------------------------------------


def sparse_rd_bound(q: float, r: float, epsilon: float, d: float, d_threshold: float = 2.0) -> float:
    """(r / eps)^(2q / (2 - q)) ln d, in nats."""
    _check_q(q)
    if not (r > 0 and epsilon > 0):
        raise ValueError("r and epsilon must be positive")
    if d <= d_threshold:
        raise ValueError(f"dimension must exceed the threshold {d_threshold}")
    return (r / epsilon) ** (2 * q / (2 - q)) * math.log(d)


def sparse_width_G(q: float, r: float, d: float, second_moment: float) -> float:
    """sqrt(ln d) r^(q/(2-q)) E^((1-q)/(2-q))."""
    _check_q(q)
    if second_moment < 0:
        raise ValueError("second moment must be nonnegative")
    return math.sqrt(math.log(d)) * r ** (q / (2 - q)) * second_moment ** ((1 - q) / (2 - q))


# --- quantizer -------------------------------------------------------------------------


def coordinate_weak_radii(z_samples: np.ndarray, q: float) -> np.ndarray:
    """Per column: sup_t t P(|Z_j| > t)^(1/q) under the empirical law."""
    _check_q(q)
    mags = -np.sort(-np.abs(z_samples), axis=0)  # descending per column
    m = mags.shape[0]
    frac = (np.arange(1, m + 1, dtype=float) / m) ** (1.0 / q)
    return np.max(mags * frac[:, None], axis=0)


def quantizer_step(q: float, radius: float, budget: float) -> float:
    """t_1 = ((1-q) b / ((2-q) r^q))^(1/(1-q)): the grid step meeting mean gap b."""
    _check_q(q)
    return ((1 - q) * budget / ((2 - q) * radius**q)) ** (1.0 / (1 - q))


def budget_for_step(q: float, radius_mass: float, step: float) -> float:
    """Inverse of :func:`quantizer_step`: the budget whose grid step is ``step``.

    ``radius_mass`` plays the role of r^q.
    """
    _check_q(q)
    return (2 - q) * radius_mass * step ** (1 - q) / (1 - q)


@dataclass(frozen=True)
class QuantizerResult:
    samples: np.ndarray
    mean_abs_gap: float
    gap_se: float
    empirical_entropy: float
    budgets: np.ndarray
    steps: np.ndarray


def plug_in_entropy(rows: np.ndarray) -> float:
    """Entropy in nats of the empirical distribution of the rows."""
    _, counts = np.unique(rows, axis=0, return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum()) + 0.0  # no negative zero


def quantize_weak_lq(z_samples, q: float, r: float, b: float) -> QuantizerResult:
    """Coordinatewise truncation of Z onto grids t_1 Z, with per-coordinate budgets.

    Coordinate j gets budget b_j = r_j^q b / max(r^q, sum_k r_k^q), r_j its
    empirical weak radius, so the budgets never sum past b. U_j is the grid
    point nearest Z_j among those with |t| <= |Z_j| (truncation toward 0).
    """
    _check_q(q)
    if not (b > 0 and r > 0):
        raise ValueError("b and r must be positive")
    z = np.asarray(z_samples, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    radii = coordinate_weak_radii(z, q)
    weights = radii**q
    budgets = weights * b / max(r**q, float(weights.sum()))
    steps = np.full(z.shape[1], np.inf)
    live = radii > 0
    steps[live] = [quantizer_step(q, rj, bj) for rj, bj in zip(radii[live], budgets[live])]
    with np.errstate(invalid="ignore"):
        u = np.where(live, np.sign(z) * np.floor(np.abs(z) / steps) * steps, 0.0)
    u = np.where(np.isfinite(u), u, 0.0)
    gaps = np.abs(u - z).sum(axis=1)
    se = float(gaps.std(ddof=1) / math.sqrt(len(gaps))) if len(gaps) > 1 else 0.0
    return QuantizerResult(u, float(gaps.mean()), se, plug_in_entropy(u), budgets, steps)


def weak_lq_samples(spec: WeakLqSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    """Rows s_k u_k r k^(-1/q) placed by a random permutation; u_k ~ U(0,1), s_k random signs."""
    caps = spec.caps()
    out = np.empty((count, spec.d))
    for i in range(count):
        vals = rng.choice([-1.0, 1.0], size=spec.d) * rng.uniform(size=spec.d) * caps
        out[i, rng.permutation(spec.d)] = vals
    return out


def dyadic_budget_grid(q: float, b0: float, count: int) -> np.ndarray:
    """Budgets b0 2^(k(1-q)): each step doubles every grid step t_1, so partitions nest."""
    return b0 * 2.0 ** (np.arange(count) * (1 - q))
