"""Command-line harness: experiment registry, JSON configs, CSV and plot-data output, verification.

Exit codes: 0 success, 1 runtime or verification failure, 2 bad input
(config schema, malformed report CSV, unknown experiment).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import re
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .acceptance import SUITES, Criterion, GoldenFileError, check_constants, load_golden
from .core import FiniteMetricSpace, format_float, make_distribution, replica_stream, sigma_m
from .erm_lab.ellipsoid import LipschitzMap
from .erm_lab.experiments import (SPARSE_TRUTH_KINDS, TRUTH_KINDS, ellipsoid_study, entropy_monotone,
                                  quantizer_study, sparse_constant_check, sparse_study, tail_study, toy_study)
from .erm_lab.noise import NOISE_KINDS
from .erm_lab.sparse import DESIGNS
from .erm_lab.trials import ErmReport, ols_line, read_report_csv, trials_csv
from .errors import ConfigError, RdBoundsError
from .process_width import LinearProcessSpec, majorizing_constant, sandwich_check, lower_bound_constant
from .rate_distortion import (DEFAULT_GRID_POINTS, default_sigma_grid, entropy, penalized_rd_integral,
                              rd_curve, rd_integral)

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Bad user input; maps to exit code 2."""


# --- config schema -----------------------------------------------------------------------

_MISSING = object()


@dataclass(frozen=True)
class Field:
    check: Callable[[Any], Any]  # returns the normalized value or raises ValueError
    default: Any = _MISSING


def _int(lo: int = 1) -> Callable:
    def check(v):
        if isinstance(v, bool) or not isinstance(v, int) or v < lo:
            raise ValueError(f"expected an integer >= {lo}")
        return v
    return check


def _float(lo: float = -math.inf, hi: float = math.inf, open_lo: bool = False, open_hi: bool = False) -> Callable:
    def check(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ValueError("expected a finite number")
        v = float(v)
        if v < lo or v > hi or (open_lo and v == lo) or (open_hi and v == hi):
            raise ValueError(f"expected a number in {'(' if open_lo else '['}{lo}, {hi}{')' if open_hi else ']'}")
        return v
    return check


def _choice(options) -> Callable:
    def check(v):
        if v not in options:
            raise ValueError(f"expected one of {list(options)}")
        return v
    return check


def _n_grid(v):
    if not isinstance(v, list) or len(v) < 4:
        raise ValueError("expected a list of at least 4 sample sizes")
    vals = [_int(1)(x) for x in v]
    if len(set(vals)) != len(vals):
        raise ValueError("sample sizes must be distinct")
    return sorted(vals)


def _float_list(v, item: Callable | None = None):
    if not isinstance(v, list) or not v:
        raise ValueError("expected a nonempty list of numbers")
    return [(item or _float())(x) for x in v]


_unit_open = _float(0, 1, open_lo=True, open_hi=True)


def _points(v):
    if not isinstance(v, list) or not v:
        raise ValueError("expected a nonempty list of points")
    if all(not isinstance(p, list) for p in v):
        return [[_float()(p)] for p in v]
    if not all(isinstance(p, list) and p for p in v) or len({len(p) for p in v}) != 1:
        raise ValueError("points must all be numbers or all be lists of one common length")
    return [[_float()(x) for x in p] for p in v]


def _string(v):
    if not isinstance(v, str) or not v:
        raise ValueError("expected a nonempty string")
    return v


def _optional(check: Callable) -> Callable:
    return lambda v: None if v is None else check(v)


_COMMON = {"experiment": Field(_string), "seed": Field(_int(0), 1), "out": Field(_optional(_string), None)}

SCHEMAS: dict[str, dict[str, Field]] = {
    "constants": {},
    "rd-curve": {
        "points": Field(_points),
        "weights": Field(_optional(lambda v: _float_list(v, _float(0))), None),
        "grid_points": Field(_int(2), DEFAULT_GRID_POINTS),
        "tolerance": Field(_float(0, 1, open_lo=True), 1e-9),
    },
    "sandwich": {
        "points": Field(_points),
        "weights": Field(_optional(lambda v: _float_list(v, _float(0))), None),
        "n_samples": Field(_int(2), 4096),
        "mc_samples": Field(_int(100), 100_000),
    },
    "erm-toy": {
        "n_grid": Field(_n_grid, [2**k for k in range(6, 15)]),
        "replicas": Field(_int(10), 200),
        "noise_kind": Field(_choice(NOISE_KINDS), "gaussian"),
        "truth": Field(_float(-1, 1), 0.0),
    },
    "erm-ellipsoid": {
        "beta": Field(_float(0.5, open_lo=True), 1.0),
        "n_grid": Field(_n_grid, [2**k for k in range(8, 15)]),
        "replicas": Field(_int(10), 50),
        "noise_kind": Field(_choice(NOISE_KINDS), "gaussian"),
        "truth": Field(_choice(TRUTH_KINDS), "zero"),
        "map": Field(_choice(("identity", "soft_clip")), "identity"),
        "kappa": Field(_float(0, 1, open_lo=True), 1.0),
        "D": Field(_optional(_int(1)), None),
    },
    "erm-sparse": {
        "q": Field(_unit_open, 0.5),
        "r": Field(_float(0, open_lo=True), 1.0),
        "d": Field(_int(2), 512),
        "n_grid": Field(_n_grid, [2**k for k in range(6, 13)]),
        "replicas": Field(_int(10), 50),
        "noise_kind": Field(_choice(NOISE_KINDS), "gaussian"),
        "truth": Field(_choice(SPARSE_TRUTH_KINDS), "zero"),
        "design": Field(_choice(DESIGNS), "orthogonal_identity"),
    },
    "tail": {
        "beta": Field(_float(0.5, open_lo=True), 1.0),
        "n": Field(_int(1), 4096),
        "replicas": Field(_int(10), 2000),
        "lam_ratio": Field(_float(0, open_lo=True), 1.0 / 72.0),
        "level": Field(_float(0, 1, open_lo=True), 0.05),
        "noise_kind": Field(_choice(NOISE_KINDS), "gaussian"),
    },
    "quantizer": {
        "q_values": Field(lambda v: _float_list(v, _unit_open), [0.3, 0.5, 0.7]),
        "budgets": Field(_int(2), 8),
        "d": Field(_int(1), 8),
        "samples": Field(_int(2), 20000),
        "r": Field(_float(0, open_lo=True), 1.0),
    },
}


def _key_line(text: str, key: str) -> int:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else 1


def parse_config(text: str, source: str = "<config>", experiment: str | None = None) -> dict:
    """Validate a JSON config against its experiment schema; all errors name a line."""
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}:1: config must be a JSON object")
    name = raw.get("experiment", experiment)
    if experiment is not None and name != experiment:
        raise ConfigError(f"{source}:{_key_line(text, 'experiment')}: config is for experiment "
                          f"{name!r}, not {experiment!r}")
    if name not in SCHEMAS:
        line = _key_line(text, "experiment")
        raise ConfigError(f"{source}:{line}: unknown experiment {name!r}; expected one of {sorted(SCHEMAS)}")
    schema = {**_COMMON, **SCHEMAS[name]}
    for key in raw:
        if key not in schema:
            raise ConfigError(f"{source}:{_key_line(text, key)}: unknown key {key!r} for experiment {name!r}")
    cfg = {"experiment": name}
    for key, field in schema.items():
        if key == "experiment":
            continue
        if key in raw:
            try:
                cfg[key] = field.check(raw[key])
            except ValueError as exc:
                raise ConfigError(f"{source}:{_key_line(text, key)}: {key}: {exc}") from None
        elif field.default is _MISSING:
            raise ConfigError(f"{source}:1: missing required key {key!r} for experiment {name!r}")
        else:
            cfg[key] = field.default
    return cfg


# --- experiments -------------------------------------------------------------------------


def _csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_float(x) if isinstance(x, float) else x for x in row])
    return buf.getvalue()


def _distribution(cfg: dict):
    space = FiniteMetricSpace.from_points(np.array(cfg["points"]))
    weights = cfg["weights"] if cfg["weights"] is not None else np.ones(len(space))
    if len(weights) != len(space):
        raise ConfigError(f"{len(weights)} weights for {len(space)} points")
    return make_distribution(space, weights)


def _fit_csv(report: ErmReport) -> str:
    rows = [("slope", report.slope), ("intercept", report.intercept),
            ("slope_ci_low", float(report.slope_ci[0])), ("slope_ci_high", float(report.slope_ci[1])),
            ("slope_se", report.slope_se)]
    if report.target_exponent is not None:
        rows.append(("target_slope", float(report.target_exponent)))
    rows.append(("heuristic", int(report.heuristic)))
    return _csv(["name", "value"], rows)


def _study_files(study) -> dict[str, str]:
    return {"report.csv": study.report.to_csv(), "fit.csv": _fit_csv(study.report),
            "trials.csv": trials_csv(study.trials)}


def exp_constants(cfg, threads):
    c, tau = lower_bound_constant()
    cbar, a = majorizing_constant()
    return {"constants.csv": _csv(["name", "value"],
                                  [("c", c), ("tau_star", tau), ("c_bar", cbar), ("a_star", a)])}


def exp_rd_curve(cfg, threads):
    mu = _distribution(cfg)
    curve = rd_curve(mu, default_sigma_grid(mu, cfg["grid_points"]), cfg["tolerance"])
    summary = [("sigma_m", sigma_m(mu)), ("entropy", entropy(mu)), ("rd_integral", rd_integral(curve)),
               ("penalized_integral", penalized_rd_integral(mu))]
    return {"rd_curve.csv": curve.to_csv(), "summary.csv": _csv(["name", "value"], summary)}


def exp_sandwich(cfg, threads):
    mu = _distribution(cfg)
    process = LinearProcessSpec(np.array(cfg["points"]))
    rng = replica_stream(cfg["seed"], "sandwich", 0).generator()
    rep = sandwich_check(process, mu.weights, cfg["n_samples"], rng, cfg["mc_samples"])
    rows = [("rd_integral", rep.rd_integral), ("lower", rep.lower), ("upper", rep.upper),
            ("width", rep.width), ("width_se", rep.width_se), ("trace_sqrt_cov", rep.trace_sqrt),
            ("sup_mean", rep.sup_mean), ("sup_se", rep.sup_se), ("holds", int(rep.holds))]
    return {"sandwich.csv": _csv(["name", "value"], rows)}


def exp_toy(cfg, threads):
    return _study_files(toy_study(cfg["n_grid"], cfg["replicas"], cfg["seed"], cfg["truth"],
                                  cfg["noise_kind"], threads))


def exp_ellipsoid(cfg, threads):
    study = ellipsoid_study(cfg["beta"], cfg["n_grid"], cfg["replicas"], cfg["seed"], cfg["noise_kind"],
                            cfg["truth"], LipschitzMap(cfg["map"], cfg["kappa"]), cfg["D"], threads)
    files = _study_files(study)
    dims = study.notes["dims"]
    files["truncation.csv"] = _csv(["n", "D", "tail_sum"],
                                   [(n, dims[n], float(study.notes["truncation_tail"][n])) for n in sorted(dims)])
    return files


def exp_sparse(cfg, threads):
    study = sparse_study(cfg["q"], cfg["r"], cfg["d"], cfg["n_grid"], cfg["replicas"], cfg["seed"],
                         cfg["design"], cfg["noise_kind"], cfg["truth"], threads)
    files = _study_files(study)
    check = sparse_constant_check(study.report, cfg["q"], cfg["d"], study.notes["R"])
    files["constant.csv"] = _csv(
        ["n", "excess", "allowance", "constant", "reference_n"],
        [(n, float(check.excess[n]), float(check.allowance[n]), check.constant, check.reference_n)
         for n in sorted(check.excess)])
    return files


def exp_tail(cfg, threads):
    s = tail_study(cfg["beta"], cfg["n"], cfg["replicas"], cfg["seed"], cfg["lam_ratio"], cfg["level"],
                   cfg["noise_kind"], threads)
    rows = [("lambda", s.lam), ("psi_bar", s.psi_bar), ("empirical_log_mgf", s.empirical_log_mgf),
            ("t0", s.t0), ("exceedance", s.exceedance), ("level", s.level), ("binomial_se", s.binomial_se),
            ("mgf_holds", int(s.mgf_holds)), ("exceedance_holds", int(s.exceedance_holds))]
    return {"tail.csv": _csv(["name", "value"], rows),
            "squared_errors.csv": _csv(["replica", "squared_error"],
                                       [(i, float(e)) for i, e in enumerate(s.squared_errors)])}


def exp_quantizer(cfg, threads):
    cells = quantizer_study(cfg["q_values"], cfg["seed"], cfg["budgets"], cfg["d"], cfg["samples"], cfg["r"])
    rows = [(c.q, c.budget, c.mean_abs_gap, c.gap_se, c.entropy, int(c.gap_holds)) for c in cells]
    return {"quantizer.csv": _csv(["q", "budget", "mean_abs_gap", "gap_se", "entropy", "gap_holds"], rows),
            "summary.csv": _csv(["name", "value"], [("entropy_monotone", int(entropy_monotone(cells)))])}


EXPERIMENTS: dict[str, Callable[[dict, int], dict[str, str]]] = {
    "constants": exp_constants,
    "rd-curve": exp_rd_curve,
    "sandwich": exp_sandwich,
    "erm-toy": exp_toy,
    "erm-ellipsoid": exp_ellipsoid,
    "erm-sparse": exp_sparse,
    "tail": exp_tail,
    "quantizer": exp_quantizer,
}


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def run_experiment(cfg: dict, out_dir: Path, threads: int) -> dict:
    """Execute, write every output file and the manifest; returns the manifest."""
    start = time.perf_counter()
    files = EXPERIMENTS[cfg["experiment"]](cfg, threads)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out_dir / name).write_text(text, encoding="utf-8", newline="")
    echo = {k: v for k, v in cfg.items() if k != "out"}
    manifest = {
        "experiment": cfg["experiment"],
        "config": echo,
        "config_sha256": config_hash(echo),
        "version": __version__,
        "files": {name: hashlib.sha256(text.encode()).hexdigest() for name, text in sorted(files.items())},
        "wall_time_seconds": round(time.perf_counter() - start, 3),  # the only nondeterministic field
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    return manifest


# --- plot data ---------------------------------------------------------------------------


def emit_plotdata(report_text: str) -> tuple[str, str]:
    """(ln n / ln MSE rows, sidecar with the fitted line) from a report CSV."""
    try:
        rows = read_report_csv(report_text)
    except ValueError as exc:
        raise InputError(f"malformed report: {exc}") from None
    if any(r.mean_mse <= 0 for r in rows):
        raise InputError("malformed report: mean_mse must be positive")
    if len(rows) < 2:
        raise InputError("malformed report: need at least two rows to fit a line")
    x = np.log([r.n for r in rows])
    y = np.log([r.mean_mse for r in rows])
    data = "".join(f"{format_float(a)} {format_float(b)}\n" for a, b in zip(x, y))
    slope, intercept = ols_line(x, y)
    side = _csv(["name", "value"], [("slope", slope), ("intercept", intercept)])
    return data, side


# --- entry point -------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads (default: logical cores); results do not depend on it")

    parser = argparse.ArgumentParser(prog="rdbounds", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run the experiment named in a config")
    p.add_argument("--config", type=Path, required=True)
    for name in ("constants", "rd-curve", "erm-ellipsoid", "erm-sparse", "sandwich"):
        p = sub.add_parser(name, parents=[common], help=f"run the {name} experiment")
        p.add_argument("--config", type=Path, required=name in ("rd-curve", "sandwich"))

    p = sub.add_parser("verify", parents=[common], help="run the acceptance suite")
    p.add_argument("suite", nargs="?", default="fast", choices=sorted(SUITES))
    p.add_argument("--golden", type=Path, help="golden constants file (default: packaged copy)")

    p = sub.add_parser("emit-plotdata", parents=[common], help="ln n / ln MSE rows from a report CSV")
    p.add_argument("report", type=Path)
    return parser


def _cmd_run(args, experiment: str | None) -> int:
    if args.config is not None:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot read config: {exc}") from None
        cfg = parse_config(text, str(args.config), experiment)
    else:
        cfg = parse_config("", "<defaults>", experiment)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = args.out or (Path(cfg["out"]) if cfg["out"] else Path("out") / cfg["experiment"])
    manifest = run_experiment(cfg, out, max(1, args.threads))
    print(f"{cfg['experiment']}: wrote {len(manifest['files'])} files to {out}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    try:
        golden = load_golden(args.golden)
    except GoldenFileError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_FAIL
    seed = 1 if args.seed is None else args.seed
    failed = []
    for crit in SUITES[args.suite]:
        if crit.cid == 1:
            crit = Criterion(1, crit.title, crit.budget, lambda s, t: check_constants(s, t, golden))
        res = crit.run(seed, max(1, args.threads))
        print(res.line(), flush=True)
        if not res.passed:
            failed.append(res.cid)
    if failed:
        print(f"FAILED criteria: {', '.join(map(str, failed))}")
        return EXIT_FAIL
    print(f"all {len(SUITES[args.suite])} criteria passed")
    return EXIT_OK


def _cmd_plotdata(args) -> int:
    try:
        text = args.report.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read report: {exc}") from None
    data, side = emit_plotdata(text)
    out = args.out or args.report.parent
    out.mkdir(parents=True, exist_ok=True)
    stem = args.report.stem
    (out / f"{stem}.plot.dat").write_text(data, encoding="utf-8")
    (out / f"{stem}.fit.csv").write_text(side, encoding="utf-8")
    print(f"wrote {out / (stem + '.plot.dat')} and {out / (stem + '.fit.csv')}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return _cmd_verify(args)
        if args.command == "emit-plotdata":
            return _cmd_plotdata(args)
        return _cmd_run(args, None if args.command == "run" else args.command)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (RdBoundsError, ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
