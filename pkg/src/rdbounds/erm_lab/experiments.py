"""End-to-end simulation studies built from the ERM trials.

Every study draws replica r at sample size n from the stream keyed by
(seed, experiment, n, r), so outputs are reproducible and independent of
the thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import RngStream, replica_stream
from .ellipsoid import (IDENTITY, LipschitzMap, default_truncation, erm_mean_trial, smooth_truth,
                        sobolev_ellipsoid, toy_interval_trial, truncation_tail)
from .sparse import (WeakLqSpec, budget_for_step, coordinate_weak_radii, dyadic_budget_grid, erm_sparse_trial, extremal_truth,
                     quantize_weak_lq, weak_lq_samples)
from .tail import empirical_log_mgf, ellipsoid_G, psi_bound, tail_from_psi, tail_threshold
from .trials import ErmReport, ErmTrial, rate_fit, run_replicas, squared_errors

TRUTH_KINDS = ("zero", "smooth")
SPARSE_TRUTH_KINDS = ("zero", "extremal")
TOP_STEP_MARGIN = 1e-9  # keeps the largest sample strictly below the top grid step


@dataclass(frozen=True)
class RateStudy:
    trials: dict[int, list[ErmTrial]]
    report: ErmReport
    notes: dict

    @property
    def key_inequality_violations(self) -> int:
        return sum(t.squared_error > t.generalization_term + 1e-9
                   for ts in self.trials.values() for t in ts if not t.heuristic)


def toy_study(n_grid, replicas: int, seed: int, truth: float = 0.0, noise_kind: str = "gaussian",
              threads: int = 1) -> RateStudy:
    def trial(n: int, stream: RngStream) -> ErmTrial:
        return toy_interval_trial(truth, n, noise_kind, stream)

    trials = run_replicas(trial, "toy", seed, n_grid, replicas, threads)
    report = rate_fit(squared_errors(trials), -1.0, np.random.default_rng(seed))
    return RateStudy(trials, report, {"truth": truth})


def ellipsoid_truth(kind: str, spec) -> np.ndarray:
    if kind == "zero":
        return np.zeros(spec.dim)
    if kind == "smooth":
        return smooth_truth(spec)
    raise ValueError(f"unknown truth {kind!r}; expected one of {TRUTH_KINDS}")


def ellipsoid_study(beta: float, n_grid, replicas: int, seed: int, noise_kind: str = "gaussian",
                    truth: str = "zero", lipschitz_map: LipschitzMap = IDENTITY,
                    dim: int | None = None, threads: int = 1) -> RateStudy:
    """MSE of ERM over the Sobolev ellipsoid; dim defaults to ceil(n^(1/(2 beta+1))) * 32."""
    specs = {n: sobolev_ellipsoid(beta, dim or default_truncation(n, beta)) for n in n_grid}
    truths = {n: ellipsoid_truth(truth, s) for n, s in specs.items()}

    def trial(n: int, stream: RngStream) -> ErmTrial:
        return erm_mean_trial(specs[n], lipschitz_map, truths[n], n, noise_kind, stream)

    trials = run_replicas(trial, f"ellipsoid/beta={beta!r}", seed, n_grid, replicas, threads)
    report = rate_fit(squared_errors(trials), -2 * beta / (2 * beta + 1), np.random.default_rng(seed),
                      heuristic=lipschitz_map.kind != "identity")
    tails = {n: truncation_tail(beta, s.dim) for n, s in specs.items()}
    return RateStudy(trials, report, {"dims": {n: s.dim for n, s in specs.items()},
                                      "truncation_tail": tails})


def sparse_truth(kind: str, spec: WeakLqSpec, seed: int) -> np.ndarray:
    if kind == "zero":
        return np.zeros(spec.d)
    if kind == "extremal":
        return extremal_truth(spec, replica_stream(seed, "sparse/truth", 0).generator())
    raise ValueError(f"unknown truth {kind!r}; expected one of {SPARSE_TRUTH_KINDS}")


def sparse_study(q: float, radius: float, d: int, n_grid, replicas: int, seed: int,
                 design: str = "orthogonal_identity", noise_kind: str = "gaussian",
                 truth: str = "zero", threads: int = 1) -> RateStudy:
    """Prediction error of least squares over wB_q(radius); radius is r (so R = r^q)."""
    spec = WeakLqSpec(q, radius, d)
    b_star = sparse_truth(truth, spec, seed)

    def trial(n: int, stream: RngStream) -> ErmTrial:
        return erm_sparse_trial(design, b_star, spec, n, noise_kind, stream)

    trials = run_replicas(trial, f"sparse/q={q!r}/d={d}", seed, n_grid, replicas, threads)
    report = rate_fit(squared_errors(trials), -(2 - q) / 2, np.random.default_rng(seed),
                      heuristic=design != "orthogonal_identity")
    return RateStudy(trials, report, {"R": spec.R})


@dataclass(frozen=True)
class ConstantCheck:
    constant: float
    reference_n: int
    excess: dict  # n -> mean_mse - C * scale(n)
    allowance: dict  # n -> 3 * se(n)

    @property
    def holds(self) -> bool:
        return all(self.excess[n] <= self.allowance[n] for n in self.excess)


def sparse_constant_check(report: ErmReport, q: float, d: int, R: float = 1.0) -> ConstantCheck:
    """Fit C at the largest n from mean_mse = C (ln d / n)^((2-q)/2) R, test it at every n."""
    rows = sorted(report.rows, key=lambda r: r.n)
    scale = {r.n: (math.log(d) / r.n) ** ((2 - q) / 2) * R for r in rows}
    ref = rows[-1]
    c = ref.mean_mse / scale[ref.n]
    excess = {r.n: r.mean_mse - c * scale[r.n] for r in rows}
    allowance = {r.n: 3.0 * r.se for r in rows}
    return ConstantCheck(c, ref.n, excess, allowance)


@dataclass(frozen=True)
class TailStudy:
    n: int
    lam: float
    psi_bar: float
    empirical_log_mgf: float
    t0: float
    exceedance: float
    level: float
    binomial_se: float
    squared_errors: np.ndarray

    @property
    def mgf_holds(self) -> bool:
        return self.empirical_log_mgf <= self.psi_bar + 0.1

    @property
    def exceedance_holds(self) -> bool:
        return self.exceedance <= self.level + 3.0 * self.binomial_se


def tail_study(beta: float, n: int, replicas: int, seed: int, lam_ratio: float = 1.0 / 72.0,
               level: float = 0.05, noise_kind: str = "gaussian", threads: int = 1) -> TailStudy:
    """Compare the empirical log-MGF and tail of |m_hat - m|^2 with the fixed-point bound.

    The binomial standard error is that of a frequency with success
    probability ``level`` over ``replicas`` draws.
    """
    spec = sobolev_ellipsoid(beta, default_truncation(n, beta))
    truth = np.zeros(spec.dim)

    def trial(n_: int, stream: RngStream) -> ErmTrial:
        return erm_mean_trial(spec, IDENTITY, truth, n_, noise_kind, stream)

    trials = run_replicas(trial, f"tail/beta={beta!r}", seed, [n], replicas, threads)[n]
    errs = np.array([t.squared_error for t in trials])
    lam = lam_ratio * n
    psi_bar = psi_bound(lam, n, ellipsoid_G(beta))
    t0 = tail_threshold(psi_bar, lam, level)
    assert abs(tail_from_psi(psi_bar, lam, t0) - level) < 1e-9
    exceed = float(np.mean(np.sqrt(errs) > t0))
    se = math.sqrt(level * (1 - level) / replicas)
    return TailStudy(n, lam, psi_bar, empirical_log_mgf(errs, lam), t0, exceed, level, se, errs)


@dataclass(frozen=True)
class QuantizerCell:
    q: float
    budget: float
    mean_abs_gap: float
    gap_se: float
    entropy: float

    @property
    def gap_holds(self) -> bool:
        return self.mean_abs_gap <= self.budget + 3.0 * self.gap_se


def quantizer_study(q_values, seed: int, budgets: int = 8, d: int = 8, samples: int = 20000,
                    radius: float = 1.0) -> list[QuantizerCell]:
    """Quantize samples from wB_q(radius) over a dyadic budget grid for each q.

    All coordinates share one grid step t_1 for a given budget. The largest
    budget puts t_1 just above max |Z| (so U = 0); each smaller one halves t_1.
    """
    cells = []
    for q in q_values:
        spec = WeakLqSpec(q, radius, d)
        z = weak_lq_samples(spec, samples, replica_stream(seed, f"quantizer/q={q!r}", 0).generator())
        total = max(radius**q, float(np.sum(coordinate_weak_radii(z, q) ** q)))
        top = budget_for_step(q, total, float(np.abs(z).max()) * (1 + TOP_STEP_MARGIN))
        for b in dyadic_budget_grid(q, top * 2.0 ** (-(budgets - 1) * (1 - q)), budgets):
            res = quantize_weak_lq(z, q, radius, float(b))
            cells.append(QuantizerCell(q, float(b), res.mean_abs_gap, res.gap_se, res.empirical_entropy))
    return cells


def entropy_monotone(cells: list[QuantizerCell]) -> bool:
    """Entropy is nonincreasing in the budget within each q."""
    by_q: dict[float, list[QuantizerCell]] = {}
    for c in cells:
        by_q.setdefault(c.q, []).append(c)
    for cs in by_q.values():
        cs = sorted(cs, key=lambda c: c.budget)
        if any(b.entropy > a.entropy + 1e-12 for a, b in zip(cs, cs[1:])):
            return False
    return True
