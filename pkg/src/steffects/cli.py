"""Command-line front end: CSV ingestion, estimation and test commands,
Monte Carlo studies, and machine-readable JSON reports.

Commands:

- ``estimate``: cross-fitted treatment-effect estimates from a CSV dataset
  (``--estimand both`` reports STE and MTE blocks side by side)
- ``test``: fixed-scale calibrated test; the final stdout line is REJECT
  or FAIL-TO-REJECT
- ``aggtest``: scale-aggregated test over an explicit eps grid or scaled
  multiples of the median heuristic
- ``mc``: Monte Carlo study of one synthetic design (seed mandatory)
- ``sweep``: mc across a grid of separations theta, sharing one root seed
  so the replication draws are common across grid points
- ``simulate``: draw one synthetic dataset and write it as CSV (seed
  mandatory)

Datasets are CSV files whose header names columns x1..xp, a, y1..yd in any
order; ``a`` must be 0 or 1. Reports are single JSON documents written to
--output (or stdout) with a stable shape: {version, command, config,
results}. Options may come from a JSON --config file; explicit flags
override file values, and unknown file keys are rejected.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. Errors are reported as one JSON object on stderr with a stable
code and type.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import re
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, NumericalError
from .estimators import PipelineConfig, cross_fit
from .kernels import median_heuristic
from .nuisance import ObservationSet
from .simulate import (
    DEFAULT_GRID_SCALES,
    DEFAULT_SIGMA,
    DGP_KINDS,
    MC_MODES,
    DgpSpec,
    generate,
    run_mc,
)
from .testing import agg_test, mte_test, ste_test

COMMANDS = ("estimate", "test", "aggtest", "mc", "sweep", "simulate")
ESTIMANDS = ("ste", "mte", "both")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

_COLUMN_PATTERN = re.compile(r"^(x|y)([1-9][0-9]*)$")


def _coerce_eps(value):
    if isinstance(value, str):
        if value == "median":
            return value
        try:
            value = float(value)
        except ValueError:
            raise ConfigError(
                f"eps must be a positive number or 'median', got {value!r}"
            ) from None
    value = float(value)
    if not math.isfinite(value) or value <= 0:
        raise ConfigError(f"eps must be positive, got {value!r}")
    return value


def _coerce_grid(values, name):
    grid = tuple(float(v) for v in values)
    if len(grid) < 1:
        raise ConfigError(f"{name} must contain at least one value")
    if any(not math.isfinite(v) or v <= 0 for v in grid):
        raise ConfigError(f"{name} entries must be positive, got {values!r}")
    if len(set(grid)) != len(grid):
        raise ConfigError(f"{name} entries must be distinct, got {values!r}")
    return grid


@dataclass(frozen=True)
class RunConfig:
    """Resolved options for one CLI invocation.

    Built by merging an optional JSON config file with command-line flags;
    flags always win. Fields irrelevant to the chosen command keep their
    defaults and are ignored.
    """

    command: str
    input: str | None = None
    output: str | None = None
    eps: float | str = "median"
    eps_grid: tuple | None = None
    alpha: float = 0.05
    beta: float | None = None
    folds: int = 2
    seed: int | None = None
    mc_draws: int = 10_000
    clamp_floor: float = 0.01
    estimand: str = "ste"
    kind: str | None = None
    theta: float | None = None
    thetas: tuple | None = None
    n: int | None = None
    reps: int | None = None
    mode: str = "estimate"
    grid_scales: tuple = DEFAULT_GRID_SCALES
    workers: int = 1
    n_oracle: int = 10_000
    tol: float = 1e-9
    max_iter: int = 10_000
    ci_level: float = 0.95
    sigma: tuple | None = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"command must be one of {COMMANDS}, got {self.command!r}")
        object.__setattr__(self, "eps", _coerce_eps(self.eps))
        if self.eps_grid is not None:
            object.__setattr__(self, "eps_grid", _coerce_grid(self.eps_grid, "eps_grid"))
        object.__setattr__(self, "grid_scales", _coerce_grid(self.grid_scales, "grid_scales"))
        if not 0.0 < float(self.alpha) < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if self.beta is not None and not 0.0 < float(self.beta) < 1.0:
            raise ConfigError(f"beta must lie in (0, 1), got {self.beta!r}")
        if self.estimand not in ESTIMANDS:
            raise ConfigError(f"estimand must be one of {ESTIMANDS}, got {self.estimand!r}")
        if self.mode not in MC_MODES:
            raise ConfigError(f"mode must be one of {MC_MODES}, got {self.mode!r}")
        if int(self.workers) < 1:
            raise ConfigError(f"workers must be a positive count, got {self.workers!r}")
        if self.thetas is not None:
            thetas = tuple(float(t) for t in self.thetas)
            if not thetas:
                raise ConfigError("thetas must contain at least one value")
            object.__setattr__(self, "thetas", thetas)
        if self.sigma is not None:
            object.__setattr__(self, "sigma", tuple(map(tuple, self.sigma)))
        for field in ("folds", "seed", "mc_draws", "n", "reps", "workers", "n_oracle",
                      "max_iter"):
            value = getattr(self, field)
            if value is not None:
                object.__setattr__(self, field, int(value))
        for field in ("alpha", "beta", "clamp_floor", "theta", "tol", "ci_level"):
            value = getattr(self, field)
            if value is not None:
                object.__setattr__(self, field, float(value))

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(
            clamp_floor=self.clamp_floor, ci_level=self.ci_level, folds=self.folds,
            mc_draws=self.mc_draws, seed=self.seed, tol=self.tol, max_iter=self.max_iter,
        )


_CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)} - {"command"}


def load_config_file(path: str) -> dict:
    """Parse a JSON config file; every key must be a RunConfig field."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = sorted(set(raw) - _CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {', '.join(unknown)}")
    return raw


def build_config(args: argparse.Namespace) -> RunConfig:
    """Merge config-file values with flags; flags take precedence."""
    merged = {} if args.config is None else load_config_file(args.config)
    for key, value in vars(args).items():
        if key in _CONFIG_KEYS and value is not None:
            merged[key] = value
    return RunConfig(command=args.command, **merged)


def _split_columns(header: list) -> tuple:
    """Validate the header and return index lists for x, a, y columns."""
    seen = set()
    for name in header:
        if name in seen:
            raise DataError(f"duplicate column {name!r} in header")
        seen.add(name)
    slots = {"x": {}, "y": {}}
    a_index = None
    for idx, name in enumerate(header):
        if name == "a":
            a_index = idx
            continue
        match = _COLUMN_PATTERN.match(name)
        if match is None:
            raise DataError(
                f"unexpected column {name!r}; expected x1..xp, a, y1..yd"
            )
        slots[match.group(1)][int(match.group(2))] = idx
    if a_index is None:
        raise DataError("missing treatment column 'a'")
    for block, found in slots.items():
        if not found:
            raise DataError(f"at least one {block}1 column is required")
        expected = set(range(1, max(found) + 1))
        missing = sorted(expected - set(found))
        if missing:
            raise DataError(
                f"{block} columns must be numbered consecutively from 1; "
                f"missing {', '.join(block + str(i) for i in missing)}"
            )
    x_cols = [slots["x"][i] for i in sorted(slots["x"])]
    y_cols = [slots["y"][i] for i in sorted(slots["y"])]
    return x_cols, a_index, y_cols


def ingest_csv(path: str) -> ObservationSet:
    """Read a dataset CSV into an ObservationSet.

    The header must name columns x1..xp, a, y1..yd (any order); every cell
    must parse as a finite number and 'a' must be exactly 0 or 1. Errors
    name the offending file row (the header is row 1) and column.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    rows = [(i, row) for i, row in enumerate(rows, start=1) if row]
    if not rows:
        raise DataError(f"{path}: no header row")
    header = [cell.strip() for cell in rows[0][1]]
    x_cols, a_index, y_cols = _split_columns(header)
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")

    def cell_value(row_number, row, col, integer_treatment=False):
        name = header[col]
        try:
            value = float(row[col])
        except ValueError:
            raise DataError(
                f"row {row_number}, column {name}: cannot parse {row[col]!r} as a number"
            ) from None
        if not math.isfinite(value):
            raise DataError(f"row {row_number}, column {name}: non-finite value")
        if integer_treatment and value not in (0.0, 1.0):
            raise DataError(
                f"row {row_number}, column {name}: treatment must be 0 or 1, got {row[col]}"
            )
        return value

    x = np.empty((len(body), len(x_cols)))
    y = np.empty((len(body), len(y_cols)))
    a = np.empty(len(body), dtype=np.int64)
    for out_row, (row_number, row) in enumerate(body):
        if len(row) != len(header):
            raise DataError(
                f"row {row_number}: expected {len(header)} fields, got {len(row)}"
            )
        for j, col in enumerate(x_cols):
            x[out_row, j] = cell_value(row_number, row, col)
        a[out_row] = int(cell_value(row_number, row, a_index, integer_treatment=True))
        for j, col in enumerate(y_cols):
            y[out_row, j] = cell_value(row_number, row, col)
    return ObservationSet(x=x, a=a, y=y)


def write_csv(data: ObservationSet, path: str) -> None:
    """Write a dataset as CSV with the x1..xp, a, y1..yd header.

    Floats are written with their shortest round-trip representation, so
    ingesting the file reproduces the arrays bit for bit.
    """
    header = [f"x{j + 1}" for j in range(data.x.shape[1])]
    header.append("a")
    header += [f"y{j + 1}" for j in range(data.y.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            row = [repr(float(v)) for v in data.x[i]]
            row.append(str(int(data.a[i])))
            row += [repr(float(v)) for v in data.y[i]]
            writer.writerow(row)


def _jsonable(obj):
    """Convert reports to JSON-safe structures; non-finite floats become None."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return _jsonable(obj.item())
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (bool, int, str)) or obj is None:
        return obj
    return str(obj)


def _document(config: RunConfig, results) -> dict:
    shown = {f.name: _jsonable(getattr(config, f.name))
             for f in dataclasses.fields(config)}
    return {
        "version": __version__,
        "command": config.command,
        "config": shown,
        "results": results,
    }


def _emit(config: RunConfig, document: dict, footer: str | None = None) -> None:
    text = json.dumps(document, indent=2, allow_nan=False)
    if config.output:
        with open(config.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    if footer is not None:
        print(footer)


def _require(config: RunConfig, *fields) -> None:
    missing = [f for f in fields if getattr(config, f) is None]
    if missing:
        flags = ", ".join("--" + f.replace("_", "-") for f in missing)
        raise ConfigError(f"{config.command} requires {flags}")


def _single_estimand(config: RunConfig) -> str:
    if config.estimand == "both":
        raise ConfigError(f"{config.command} needs a single estimand (ste or mte)")
    return config.estimand


def _dgp_spec(config: RunConfig, theta: float) -> DgpSpec:
    sigma = DEFAULT_SIGMA if config.sigma is None else config.sigma
    return DgpSpec(kind=config.kind, theta=theta, n=config.n, seed=config.seed,
                   sigma=sigma)


def _cmd_estimate(config: RunConfig) -> None:
    _require(config, "input")
    data = ingest_csv(config.input)
    pipeline = config.pipeline()
    estimands = ("ste", "mte") if config.estimand == "both" else (config.estimand,)
    results = [_jsonable(cross_fit(data, inner=e, eps=config.eps, config=pipeline))
               for e in estimands]
    _emit(config, _document(config, results))


def _cmd_test(config: RunConfig) -> None:
    _require(config, "input")
    data = ingest_csv(config.input)
    runner = ste_test if _single_estimand(config) == "ste" else mte_test
    report = runner(data, eps=config.eps, alpha=config.alpha, config=config.pipeline())
    _emit(config, _document(config, [_jsonable(report)]),
          footer="REJECT" if report.reject else "FAIL-TO-REJECT")


def _cmd_aggtest(config: RunConfig) -> None:
    _require(config, "input")
    data = ingest_csv(config.input)
    if config.eps_grid is not None:
        grid = np.asarray(config.eps_grid, dtype=float)
    else:
        grid = median_heuristic(data.y) * np.asarray(config.grid_scales, dtype=float)
    report = agg_test(data, grid, alpha=config.alpha, beta=config.beta,
                      config=config.pipeline(), estimand=_single_estimand(config))
    _emit(config, _document(config, [_jsonable(report)]),
          footer="REJECT" if report.reject else "FAIL-TO-REJECT")


def _mc_summary(config: RunConfig, theta: float) -> dict:
    spec = _dgp_spec(config, theta)
    summary = run_mc(
        spec, config.reps, mode=config.mode, estimand=_single_estimand(config),
        eps=config.eps, alpha=config.alpha, beta=config.beta,
        grid_scales=config.grid_scales, config=config.pipeline(),
        n_oracle=config.n_oracle, workers=config.workers,
    )
    block = _jsonable(summary)
    block["sigma"] = _jsonable(spec.sigma)
    return block


def _cmd_mc(config: RunConfig) -> None:
    _require(config, "kind", "theta", "n", "reps", "seed")
    _emit(config, _document(config, [_mc_summary(config, config.theta)]))


def _cmd_sweep(config: RunConfig) -> None:
    _require(config, "kind", "thetas", "n", "reps", "seed")
    results = [_mc_summary(config, theta) for theta in config.thetas]
    _emit(config, _document(config, results))


def _cmd_simulate(config: RunConfig) -> None:
    _require(config, "kind", "theta", "n", "seed", "output")
    spec = _dgp_spec(config, config.theta)
    data = generate(spec)
    write_csv(data, config.output)
    meta = {
        "rows": data.n, "covariates": data.x.shape[1], "outcomes": data.y.shape[1],
        "treated": int(data.a.sum()), "sigma": _jsonable(spec.sigma),
        "path": config.output,
    }
    document = _document(dataclasses.replace(config, output=None), [meta])
    _emit(dataclasses.replace(config, output=None), document)


_HANDLERS = {
    "estimate": _cmd_estimate,
    "test": _cmd_test,
    "aggtest": _cmd_aggtest,
    "mc": _cmd_mc,
    "sweep": _cmd_sweep,
    "simulate": _cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="steffects",
        description="Distributional treatment effects via entropic optimal transport",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_input=True):
        p.add_argument("--config", help="JSON config file; flags override file values")
        if with_input:
            p.add_argument("--input", help="dataset CSV (header x1..xp,a,y1..yd)")
        p.add_argument("--output", help="write the JSON report to this path")
        p.add_argument("--eps", help="positive scale or 'median' (default: median)")
        p.add_argument("--alpha", type=float, help="test level (default 0.05)")
        p.add_argument("--folds", type=int, help="cross-fitting folds (default 2)")
        p.add_argument("--seed", type=int, help="root seed for folds and quantiles")
        p.add_argument("--mc-draws", type=int, dest="mc_draws",
                       help="null-quantile simulation draws (default 10000)")
        p.add_argument("--clamp-floor", type=float, dest="clamp_floor",
                       help="propensity clamp floor (default 0.01)")
        p.add_argument("--tol", type=float, help="transport solver tolerance")
        p.add_argument("--max-iter", type=int, dest="max_iter",
                       help="transport solver iteration cap")
        p.add_argument("--ci-level", type=float, dest="ci_level",
                       help="Wald interval level (default 0.95)")

    est = sub.add_parser("estimate", help="cross-fitted effect estimates from CSV")
    est.add_argument("--estimand", choices=ESTIMANDS)
    common(est)

    tst = sub.add_parser("test", help="fixed-scale calibrated test from CSV")
    tst.add_argument("--estimand", choices=("ste", "mte"))
    common(tst)

    agg = sub.add_parser("aggtest", help="scale-aggregated test from CSV")
    agg.add_argument("--estimand", choices=("ste", "mte"))
    agg.add_argument("--eps-grid", dest="eps_grid", type=float, nargs="+",
                     help="explicit eps grid (default: scaled median heuristic)")
    agg.add_argument("--grid-scales", dest="grid_scales", type=float, nargs="+",
                     help="median-heuristic multipliers when no grid is given")
    agg.add_argument("--beta", type=float, help="marginal quantile level (default alpha)")
    common(agg)

    def mc_common(p):
        p.add_argument("--kind", choices=DGP_KINDS)
        p.add_argument("--n", type=int, help="sample size per replication")
        p.add_argument("--reps", type=int, help="number of replications")
        p.add_argument("--mode", choices=MC_MODES,
                       help="estimate (MSE/coverage), test, or aggtest (default estimate)")
        p.add_argument("--estimand", choices=("ste", "mte"))
        p.add_argument("--beta", type=float)
        p.add_argument("--grid-scales", dest="grid_scales", type=float, nargs="+")
        p.add_argument("--workers", type=int, help="replication worker processes")
        p.add_argument("--n-oracle", dest="n_oracle", type=int,
                       help="population-oracle sample size (default 10000)")
        common(p, with_input=False)

    mc = sub.add_parser("mc", help="Monte Carlo study of one synthetic design")
    mc.add_argument("--theta", type=float, help="separation parameter")
    mc_common(mc)

    swp = sub.add_parser("sweep", help="Monte Carlo study across separations")
    swp.add_argument("--thetas", type=float, nargs="+", help="separation grid")
    mc_common(swp)

    sim = sub.add_parser("simulate", help="write one synthetic dataset as CSV")
    sim.add_argument("--kind", choices=DGP_KINDS)
    sim.add_argument("--theta", type=float)
    sim.add_argument("--n", type=int)
    sim.add_argument("--config", help="JSON config file; flags override file values")
    sim.add_argument("--output", help="CSV destination path")
    sim.add_argument("--seed", type=int)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = build_config(args)
        _HANDLERS[config.command](config)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except DataError as exc:
        return _fail(EXIT_DATA, exc)
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, exc)
    return EXIT_OK


def _fail(code: int, exc: Exception) -> int:
    payload = {"error": {"code": code, "type": type(exc).__name__, "message": str(exc)}}
    print(json.dumps(payload), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
