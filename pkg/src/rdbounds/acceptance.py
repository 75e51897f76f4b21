"""Acceptance criteria as callable checks, shared by ``verify`` and the test suite.

Each check returns a :class:`CriterionResult`; ``passed`` requires both the
numeric condition and the runtime budget.
"""

from __future__ import annotations

import json
import math
import time
from importlib import resources
from pathlib import Path
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy.optimize import minimize
from scipy.special import zeta

from .core import FiniteMetricSpace, binary_entropy, make_distribution, ordered_map, replica_stream, sigma_m
from .erm_lab.ellipsoid import EllipsoidSpec, ellipsoid_projection, sobolev_width_limits
from .erm_lab.experiments import (ellipsoid_study, entropy_monotone, quantizer_study, sparse_constant_check,
                                  sparse_study, tail_study, toy_study)
from .erm_lab.sparse import WeakLqSpec, project_weak_lq
from .errors import RdBoundsError
from .process_width import LinearProcessSpec, majorizing_constant, sandwich_check, lower_bound_constant
from .rate_distortion import (RateDistortionSolver, discretized_gaussian, enumerate_types, gaussian_rd,
                              penalized_rd_integral, rd_curve, rd_integral, type_class_report, type_count)


@dataclass(frozen=True)
class CriterionResult:
    cid: int
    title: str
    passed: bool
    detail: str
    seconds: float
    budget: float
    metrics: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.cid:2d} {self.title}: {self.detail} ({self.seconds:.2f}s / {self.budget:g}s)"


@dataclass(frozen=True)
class Criterion:
    cid: int
    title: str
    budget: float  # seconds
    check: Callable[[int, int], tuple[bool, str, dict]]
    fast: bool = True

    def run(self, seed: int = 1, threads: int = 1) -> CriterionResult:
        start = time.perf_counter()
        ok, detail, metrics = self.check(seed, threads)
        elapsed = time.perf_counter() - start
        within = elapsed < self.budget
        if not within:
            detail += "; over the runtime budget"
        return CriterionResult(self.cid, self.title, bool(ok and within), detail, elapsed, self.budget, metrics)


# --- 1: constants ------------------------------------------------------------------------

GOLDEN_KEYS = ("c", "tau_star", "c_bar", "a_star")


class GoldenFileError(RdBoundsError):
    """The golden constants file is missing, unparsable, or incomplete."""


def golden_path() -> Path:
    return Path(str(resources.files("rdbounds") / "data" / "golden_constants.json"))


def load_golden(path=None) -> dict[str, tuple[float, float]]:
    """name -> (value, tolerance) from the golden constants file."""
    path = Path(path) if path is not None else golden_path()
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        out = {}
        for key in GOLDEN_KEYS:
            value, tol = float(raw[key]["value"]), float(raw[key]["tolerance"])
            if not (math.isfinite(value) and math.isfinite(tol) and tol > 0):
                raise ValueError(f"bad entry for {key}")
            out[key] = (value, tol)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise GoldenFileError(f"corrupted golden file {path}: {exc}") from exc
    return out


def computed_constants() -> dict[str, float]:
    c, tau = lower_bound_constant()
    cbar, a = majorizing_constant()
    return {"c": c, "tau_star": tau, "c_bar": cbar, "a_star": a}


def check_constants(seed: int, threads: int, golden=None):
    golden = golden if golden is not None else load_golden()
    got = computed_constants()
    ok = all(abs(got[k] - golden[k][0]) <= golden[k][1] for k in GOLDEN_KEYS)
    return ok, "c={c:.8f} tau*={tau_star:.8f} cbar={c_bar:.8f} a*={a_star:.6f}".format(**got), got


# --- 2: Blahut-Arimoto against closed forms ----------------------------------------------


def check_blahut_arimoto(seed: int, threads: int):
    binary = make_distribution(FiniteMetricSpace.from_points([0.0, 1.0]), [1, 1])
    solver = RateDistortionSolver(binary)
    targets = np.round(np.arange(0.05, 0.4501, 0.05), 10)
    bin_err = max(abs(solver.rate(t).rate - (math.log(2) - float(binary_entropy(t)))) for t in targets)
    gauss = discretized_gaussian(201, 5.0)
    sm2 = sigma_m(gauss) ** 2
    gsolver = RateDistortionSolver(gauss)
    ratios = np.round(np.linspace(0.05, 0.9, 18), 10)
    g_err = max(abs(gsolver.rate(r * sm2).rate - gaussian_rd(sm2, r * sm2)) for r in ratios)
    ok = bin_err <= 1e-4 and g_err <= 0.02
    return ok, f"binary max err {bin_err:.2e} (tol 1e-4); gaussian max err {g_err:.4f} (tol 0.02)", {
        "binary_error": bin_err, "gaussian_error": g_err}


# --- 3: penalized-integral sandwich -----------------------------------------------------


def random_planar_measure(seed: int, label: str, index: int, max_points: int = 8):
    rng = replica_stream(seed, label, index).generator()
    k = int(rng.integers(2, max_points + 1))
    space = FiniteMetricSpace.from_points(rng.standard_normal((k, 2)))
    return make_distribution(space, rng.uniform(0.05, 1.0, size=k))


def check_penalized_sandwich(seed: int, threads: int, instances: int = 50):
    def one(i):
        mu = random_planar_measure(seed, "acceptance/penalized", i)
        integral = rd_integral(rd_curve(mu))
        return integral, penalized_rd_integral(mu)

    results = ordered_map(one, list(range(instances)), threads)
    tol = 1e-3
    bad = [i for i, (ii, p) in enumerate(results) if not (2 * ii - tol <= p <= 4 * ii + tol)]
    ratios = [p / ii for ii, p in results if ii > 0]
    return not bad, (f"{instances - len(bad)}/{instances} inside [2I, 4I] +/- {tol}; "
                     f"P/I in [{min(ratios):.3f}, {max(ratios):.3f}]"), {"failures": bad}


# --- 4: two-sided width sandwich ---------------------------------------------------------


def check_width_sandwich(seed: int, threads: int, instances: int = 20):
    def one(i):
        rng = replica_stream(seed, "acceptance/width", i).generator()
        k = int(rng.integers(2, 13))
        process = LinearProcessSpec(rng.standard_normal((k, 3)))
        w = rng.uniform(0.05, 1.0, size=k)
        return sandwich_check(process, w / w.sum(), 4096, rng, mc_samples=100_000)

    reports = ordered_map(one, list(range(instances)), threads)
    bad = [i for i, r in enumerate(reports) if not r.holds]
    lo = min(r.width / r.rd_integral for r in reports)
    hi = max(r.width / r.rd_integral for r in reports)
    return not bad, f"{instances - len(bad)}/{instances} pass; w/I in [{lo:.3f}, {hi:.3f}]", {
        "failures": bad}


# --- 5: method of types ------------------------------------------------------------------


def _rational_laws(n: int) -> list[list[Fraction]]:
    laws = [[Fraction(1, n)] * n]
    if n == 2:
        laws.append([Fraction(1, 3), Fraction(2, 3)])
    if n == 3:
        laws.append([Fraction(1, 2), Fraction(1, 3), Fraction(1, 6)])
    return laws


def check_types(seed: int, threads: int):
    checked = 0
    failures = []
    for n in (1, 2, 3):
        for N in range(1, 9):
            types = list(enumerate_types(n, N))
            if len(types) != type_count(n, N) or type_count(n, N) != math.comb(n + N - 1, n - 1):
                failures.append(("count", n, N))
            for law in _rational_laws(n):
                for counts in types:
                    rep = type_class_report(law, [Fraction(c, N) for c in counts], N)
                    checked += 1
                    if not rep.holds:
                        failures.append((n, N, counts))
    return not failures, f"{checked} type classes checked, {len(failures)} failures", {"failures": failures}


# --- 6, 7, 9: rate studies ---------------------------------------------------------------


def check_toy_rate(seed: int, threads: int):
    study = toy_study([2**k for k in range(6, 15)], 200, seed, threads=threads)
    slope = study.report.slope
    return abs(slope + 1.0) <= 0.07, f"slope {slope:.4f} (target -1 +/- 0.07)", {"slope": slope}


def check_ellipsoid_rate(seed: int, threads: int):
    parts, ok, metrics = [], True, {}
    for beta in (1.0, 2.0):
        study = ellipsoid_study(beta, [2**k for k in range(8, 15)], 50, seed, threads=threads)
        target = -2 * beta / (2 * beta + 1)
        slope = study.report.slope
        ok &= abs(slope - target) <= 0.07 and study.key_inequality_violations == 0
        parts.append(f"beta={beta:g}: slope {slope:.4f} (target {target:.4f} +/- 0.07)")
        metrics[f"slope_beta_{beta:g}"] = slope
    return ok, "; ".join(parts), metrics


def check_sparse_rate(seed: int, threads: int):
    q, d = 0.5, 512
    study = sparse_study(q, 1.0, d, [2**k for k in range(6, 13)], 50, seed, threads=threads)
    slope = study.report.slope
    const = sparse_constant_check(study.report, q, d)
    ok = abs(slope + 0.75) <= 0.10 and const.holds and study.key_inequality_violations == 0
    worst = max(const.excess[n] - const.allowance[n] for n in const.excess)
    return ok, (f"slope {slope:.4f} (target -0.75 +/- 0.10); C={const.constant:.4f} fitted at "
                f"n={const.reference_n}, worst excess over 3 SE {worst:.2e}"), {
        "slope": slope, "constant": const.constant}


# --- 8: preconstant separation -----------------------------------------------------------


def check_preconstants(seed: int, threads: int):
    worst = 0.0
    ratios = {}
    for beta in (0.55, 0.75, 1.0):
        sharp, dudley = sobolev_width_limits(beta)
        worst = max(worst, abs(sharp - math.sqrt(zeta(2 * beta))),
                    abs(dudley - 1.0 / (1.0 - 2.0 ** (-(beta - 0.5)))))
        ratios[beta] = dudley / sharp
    factor = ratios[0.55] / ratios[1.0]
    ok = worst <= 1e-6 and factor > 3
    return ok, (f"max closed-form error {worst:.1e}; ratio {ratios[0.55]:.3f} at 0.55 vs "
                f"{ratios[1.0]:.3f} at 1.0 (factor {factor:.3f})"), {"ratios": ratios, "factor": factor}


# --- 10: projection oracles --------------------------------------------------------------


def slsqp_ellipsoid_projection(x: np.ndarray, axes: np.ndarray) -> np.ndarray:
    """Independent oracle: sequential quadratic programming on the constrained problem."""
    gauge = float(np.sum((x / axes) ** 2))
    start = x / math.sqrt(gauge) if gauge > 1 else x
    cons = {"type": "ineq", "fun": lambda z: 1.0 - np.sum((z / axes) ** 2),
            "jac": lambda z: -2.0 * z / axes**2}
    res = minimize(lambda z: float(np.sum((z - x) ** 2)), start, jac=lambda z: 2.0 * (z - x),
                   constraints=[cons], method="SLSQP", options={"ftol": 1e-16, "maxiter": 1000})
    return res.x


def weak_lq_grid_distance(x: np.ndarray, spec: WeakLqSpec, per_axis: int = 41) -> tuple[float, float]:
    """(distance to the nearest feasible grid point, grid step) over [-r, r]^d."""
    step = 2.0 * spec.r / (per_axis - 1)
    axis = np.linspace(-spec.r, spec.r, per_axis)
    grid = np.stack(np.meshgrid(*([axis] * spec.d), indexing="ij"), axis=-1).reshape(-1, spec.d)
    mags = -np.sort(-np.abs(grid), axis=1)
    feasible = np.all(mags <= spec.caps()[None, :] * (1 + 1e-12), axis=1)
    dist = np.linalg.norm(grid[feasible] - x[None, :], axis=1)
    return float(dist.min()), step


def check_projections(seed: int, threads: int, instances: int = 100):
    rng = replica_stream(seed, "acceptance/projection", 0).generator()
    kkt_worst = agree_worst = 0.0
    for _ in range(instances):
        d = int(rng.integers(1, 6))
        axes = np.sort(rng.uniform(0.1, 2.0, size=d))[::-1]
        x = rng.standard_normal(d) * 2.0
        proj = ellipsoid_projection(x, EllipsoidSpec(axes))
        kkt_worst = max(kkt_worst, proj.kkt_residual)
        agree_worst = max(agree_worst, float(np.max(np.abs(proj.point - slsqp_ellipsoid_projection(x, axes)))))
    grid_bad = 0
    for _ in range(instances):
        spec = WeakLqSpec(float(rng.uniform(0.2, 0.9)), float(rng.uniform(0.5, 2.0)), 3)
        x = rng.standard_normal(3) * spec.r
        d_proj = float(np.linalg.norm(project_weak_lq(x, spec) - x))
        d_grid, h = weak_lq_grid_distance(x, spec)
        if not (d_proj <= d_grid + 1e-12 and d_grid <= d_proj + h * math.sqrt(3)):
            grid_bad += 1
    ok = kkt_worst < 1e-10 and agree_worst <= 1e-6 and grid_bad == 0
    return ok, (f"ellipsoid KKT {kkt_worst:.1e}, oracle gap {agree_worst:.1e}; weak-lq grid mismatches "
                f"{grid_bad}/{instances}"), {"kkt": kkt_worst, "oracle_gap": agree_worst, "grid_bad": grid_bad}


# --- 11: tail bound ----------------------------------------------------------------------


def check_tail(seed: int, threads: int):
    s = tail_study(1.0, 4096, 2000, seed, threads=threads)
    ok = s.mgf_holds and s.exceedance_holds
    return ok, (f"ln E exp(lam e) = {s.empirical_log_mgf:.4f} vs psi_bar {s.psi_bar:.4f} + 0.1; "
                f"exceedance at t0={s.t0:.4f}: {s.exceedance:.4f} vs 0.05 + 3 SE"), {
        "psi_bar": s.psi_bar, "log_mgf": s.empirical_log_mgf, "exceedance": s.exceedance}


# --- 12: quantizer -----------------------------------------------------------------------


def check_quantizer(seed: int, threads: int):
    cells = quantizer_study([0.3, 0.5, 0.7], seed)
    gap_bad = sum(not c.gap_holds for c in cells)
    mono = entropy_monotone(cells)
    worst = max(c.mean_abs_gap / c.budget for c in cells)
    return gap_bad == 0 and mono, (f"{len(cells) - gap_bad}/{len(cells)} cells with gap <= b + 3 SE "
                                   f"(max gap/b {worst:.3f}); entropy monotone: {mono}"), {
        "gap_failures": gap_bad, "entropy_monotone": mono}


CRITERIA: tuple[Criterion, ...] = (
    Criterion(1, "explicit constants", 1.0, check_constants),
    Criterion(2, "Blahut-Arimoto closed forms", 30.0, check_blahut_arimoto),
    Criterion(3, "penalized integral sandwich", 120.0, check_penalized_sandwich, fast=False),
    Criterion(4, "two-sided width sandwich", 600.0, check_width_sandwich, fast=False),
    Criterion(5, "method of types", 1.0, check_types),
    Criterion(6, "toy interval ERM rate", 60.0, check_toy_rate),
    Criterion(7, "ellipsoid ERM rate", 600.0, check_ellipsoid_rate),
    Criterion(8, "preconstant separation", 1.0, check_preconstants),
    Criterion(9, "sparse ERM rate", 600.0, check_sparse_rate),
    Criterion(10, "projection oracles", 120.0, check_projections),
    Criterion(11, "tail bound", 900.0, check_tail),
    Criterion(12, "quantizer", 120.0, check_quantizer),
)

SUITES = {"fast": tuple(c for c in CRITERIA if c.fast), "full": CRITERIA}


def criterion(cid: int) -> Criterion:
    for c in CRITERIA:
        if c.cid == cid:
            return c
    raise KeyError(cid)


def run_suite(suite: str = "fast", seed: int = 1, threads: int = 1,
              report: Callable[[CriterionResult], None] | None = None) -> list[CriterionResult]:
    """Run every criterion of ``suite``; ``report`` sees each result as it finishes."""
    if suite not in SUITES:
        raise KeyError(f"unknown suite {suite!r}")
    results = []
    for c in SUITES[suite]:
        results.append(c.run(seed, threads))
        if report is not None:
            report(results[-1])
    return results
