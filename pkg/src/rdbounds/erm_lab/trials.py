"""Trial records, replica grids and log-log rate fits."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from ..core import RngStream, format_float, ordered_map, replica_stream
from ..errors import InsufficientGrid

MIN_GRID_POINTS = 4
MIN_REPLICAS = 10
BOOTSTRAP_RESAMPLES = 1000


@dataclass(frozen=True)
class ErmTrial:
    """One ERM run.

    ``generalization_term`` is 2 <m_hat - m, noise mean> (for regression,
    (2/n) <w, X (beta_hat - beta*)>); any exact empirical risk minimizer has
    squared_error <= generalization_term.
    """

    truth: np.ndarray
    estimate: np.ndarray
    n: int
    squared_error: float
    generalization_term: float
    seed: int = 0
    stream_id: int = 0
    heuristic: bool = False

    @property
    def key_inequality_slack(self) -> float:
        return self.generalization_term - self.squared_error


@dataclass(frozen=True)
class GridRow:
    n: int
    mean_mse: float
    replicas: int
    se: float


@dataclass(frozen=True)
class ErmReport:
    rows: tuple[GridRow, ...]
    slope: float
    intercept: float
    slope_ci: tuple[float, float]
    slope_se: float
    target_exponent: float | None = None
    heuristic: bool = False

    @property
    def slope_error(self) -> float | None:
        return None if self.target_exponent is None else self.slope - self.target_exponent

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "mean_mse", "se", "replicas"])
        for r in self.rows:
            w.writerow([r.n, format_float(r.mean_mse), format_float(r.se), r.replicas])
        return buf.getvalue()


def ols_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """(slope, intercept) of the least-squares line through (x, y)."""
    xc = x - x.mean()
    slope = float(xc @ (y - y.mean()) / (xc @ xc))
    return slope, float(y.mean() - slope * x.mean())


def rate_fit(grid_results: Mapping[int, Sequence[float]], target_exponent: float | None = None,
             rng: np.random.Generator | None = None, resamples: int = BOOTSTRAP_RESAMPLES,
             heuristic: bool = False) -> ErmReport:
    """OLS slope of ln(mean squared error) against ln n.

    ``grid_results`` maps each n to its replica squared errors. The 95%
    interval is a percentile bootstrap that resamples replicas within each n.
    """
    ns = sorted(int(n) for n in grid_results)
    if len(ns) < MIN_GRID_POINTS:
        raise InsufficientGrid(f"need at least {MIN_GRID_POINTS} distinct n, got {len(ns)}")
    errs = [np.asarray(grid_results[n], dtype=float) for n in ns]
    for n, e in zip(ns, errs):
        if e.size < MIN_REPLICAS:
            raise InsufficientGrid(f"n={n} has {e.size} replicas; need {MIN_REPLICAS}")
        if np.any(e < 0) or not np.all(np.isfinite(e)):
            raise ValueError(f"squared errors at n={n} must be finite and nonnegative")
    means = np.array([e.mean() for e in errs])
    if np.any(means <= 0):
        raise InsufficientGrid("a grid point has zero mean error; the log-log fit is undefined")
    x = np.log(np.array(ns, dtype=float))
    slope, intercept = ols_line(x, np.log(means))
    rng = rng if rng is not None else np.random.default_rng(0)
    boot = np.empty(resamples)
    boot_means = np.empty((resamples, len(ns)))
    for j, e in enumerate(errs):
        idx = rng.integers(0, e.size, size=(resamples, e.size))
        boot_means[:, j] = e[idx].mean(axis=1)
    with np.errstate(divide="ignore"):
        logs = np.log(boot_means)
    xc = x - x.mean()
    boot = (logs - logs.mean(axis=1, keepdims=True)) @ xc / (xc @ xc)
    finite = boot[np.isfinite(boot)]
    lo, hi = np.percentile(finite, [2.5, 97.5]) if finite.size else (math.nan, math.nan)
    rows = tuple(GridRow(n, float(e.mean()), int(e.size),
                         float(e.std(ddof=1) / math.sqrt(e.size))) for n, e in zip(ns, errs))
    se = float(finite.std(ddof=1)) if finite.size > 1 else math.nan
    return ErmReport(rows, slope, intercept, (float(lo), float(hi)), se, target_exponent, heuristic)


def run_replicas(trial: Callable[[int, RngStream], ErmTrial], experiment: str, seed: int,
                 n_grid: Iterable[int], replicas: int, threads: int = 1) -> dict[int, list[ErmTrial]]:
    """Run ``trial(n, stream)`` for every n and replica on independent streams.

    Replica r at size n uses the stream hashed from (experiment, n, r), so
    results do not depend on the thread count or on the rest of the grid.
    """
    jobs = [(int(n), r) for n in n_grid for r in range(replicas)]

    def one(job):
        n, r = job
        return trial(n, replica_stream(seed, f"{experiment}/n={n}", r))

    out: dict[int, list[ErmTrial]] = {}
    for (n, _), res in zip(jobs, ordered_map(one, jobs, threads)):
        out.setdefault(n, []).append(res)
    return out


def squared_errors(trials: Mapping[int, Sequence[ErmTrial]]) -> dict[int, list[float]]:
    return {n: [t.squared_error for t in ts] for n, ts in trials.items()}


def trials_csv(trials: Mapping[int, Sequence[ErmTrial]]) -> str:
    """Dump: n,replica,seed,squared_error,generalization_term (seed is the stream id)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "replica", "seed", "squared_error", "generalization_term"])
    for n in sorted(trials):
        for r, t in enumerate(trials[n]):
            w.writerow([n, r, t.stream_id, format_float(t.squared_error),
                        format_float(t.generalization_term)])
    return buf.getvalue()


def read_report_csv(text: str) -> list[GridRow]:
    """Parse a report CSV (n,mean_mse,se,replicas); raises ValueError when malformed."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError("empty report") from None
    if [h.strip() for h in header] != ["n", "mean_mse", "se", "replicas"]:
        raise ValueError(f"unexpected report header {header}")
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != 4:
            raise ValueError(f"line {lineno}: expected 4 fields")
        try:
            row = GridRow(int(rec[0]), float(rec[1]), int(rec[3]), float(rec[2]))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        if row.n <= 0 or not row.mean_mse > 0:
            raise ValueError(f"line {lineno}: n and mean_mse must be positive")
        rows.append(row)
    if not rows:
        raise ValueError("report has no data rows")
    return rows
