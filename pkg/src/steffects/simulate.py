"""Synthetic data-generating processes, population oracles, and the Monte
Carlo harness for calibration, power, and estimation-error studies.

Three outcome designs share one covariate/assignment model (X standard
normal in R^3, treatment logistic in 1'x):

- ``mean_shift``:   Y|0 ~ N(0, Sigma),  Y|1 ~ N(theta * 1_2, Sigma)
- ``cov_shift``:    Y|0 ~ N(0, Sigma),  Y|1 ~ N(0, Sigma + theta * Delta)
  with Delta = u v' + v u' built from the unit eigenvectors of Sigma
- ``fig1_mixture``: Y|0 ~ N(0, I_2),    Y|1 ~ equal mixture of
  N(-theta * 1_2, I_2) and N(theta * 1_2, I_2); Sigma does not enter

Every randomized operation is a pure function of (spec, seed): data use the
generator stream seeded by the spec seed, oracles use a spawned child of the
same seed, and per-replication seeds are hashed words derived from the root.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DataError, NumericalError
from .estimators import PipelineConfig, cross_fit
from .kernels import median_heuristic, mmd_squared
from .nuisance import ObservationSet
from .ot_core import DiscreteMeasure, sinkhorn_divergence
from .testing import agg_test, mte_test, ste_test

logger = logging.getLogger(__name__)

DEFAULT_SIGMA = ((1.0, 0.3), (0.3, 1.0))
DGP_KINDS = ("mean_shift", "cov_shift", "fig1_mixture")
MC_MODES = ("estimate", "test", "aggtest")
DEFAULT_GRID_SCALES = (0.25, 0.5, 1.0, 2.0, 4.0)

_ORACLE_SUBSAMPLE = 4096
_MIN_ORACLE = 10_000


def shift_matrix(sigma: np.ndarray) -> np.ndarray:
    """Rank-two symmetric direction u v' + v u' from the eigenvectors of sigma.

    u and v are the unit eigenvectors in descending-eigenvalue order, each
    oriented so its largest-magnitude entry is positive (eigenvector signs
    are otherwise arbitrary, and the direction would flip with them).
    """
    sigma = np.asarray(sigma, dtype=float)
    vals, vecs = np.linalg.eigh(sigma)
    order = np.argsort(vals)[::-1]
    vecs = vecs[:, order]
    for j in range(vecs.shape[1]):
        lead = np.argmax(np.abs(vecs[:, j]))
        if vecs[lead, j] < 0:
            vecs[:, j] = -vecs[:, j]
    u, v = vecs[:, 0], vecs[:, 1]
    return np.outer(u, v) + np.outer(v, u)


def _check_sigma(sigma) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1] or sigma.shape[0] < 2:
        raise ConfigError(f"sigma must be a square matrix of size >= 2, got shape {sigma.shape}")
    if not np.all(np.isfinite(sigma)):
        raise ConfigError("sigma contains non-finite entries")
    if not np.allclose(sigma, sigma.T, atol=1e-12):
        raise ConfigError("sigma must be symmetric")
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise ConfigError("sigma must be positive definite") from None
    return sigma


@dataclass(frozen=True)
class DgpSpec:
    """One synthetic design: outcome family, separation, sample size, seed.

    theta = 0 makes the two arm-conditional outcome laws identical for every
    kind, so it always encodes the null of no distributional effect.
    """

    kind: str
    theta: float
    n: int
    seed: int
    sigma: tuple = DEFAULT_SIGMA

    def __post_init__(self):
        if self.kind not in DGP_KINDS:
            raise ConfigError(f"kind must be one of {DGP_KINDS}, got {self.kind!r}")
        theta = float(self.theta)
        if not np.isfinite(theta) or theta < 0:
            raise ConfigError(f"theta must be a finite nonnegative scalar, got {self.theta!r}")
        if int(self.n) < 1:
            raise ConfigError(f"n must be a positive count, got {self.n!r}")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "seed", int(self.seed))
        sigma = _check_sigma(self.sigma)
        object.__setattr__(self, "sigma", tuple(map(tuple, sigma)))
        if self.kind == "cov_shift":
            shifted = sigma + theta * shift_matrix(sigma)
            try:
                np.linalg.cholesky(shifted)
            except np.linalg.LinAlgError:
                raise ConfigError(
                    f"sigma + theta * shift is not positive definite at theta={theta!r}"
                ) from None

    @property
    def sigma_array(self) -> np.ndarray:
        return np.asarray(self.sigma, dtype=float)


def _arm_moments(spec: DgpSpec) -> tuple:
    """Per-arm (mean, cholesky factor) for the two Gaussian designs."""
    sigma = spec.sigma_array
    d = sigma.shape[0]
    mean0 = np.zeros(d)
    chol0 = np.linalg.cholesky(sigma)
    if spec.kind == "mean_shift":
        return mean0, chol0, spec.theta * np.ones(d), chol0
    shifted = sigma + spec.theta * shift_matrix(sigma)
    return mean0, chol0, np.zeros(d), np.linalg.cholesky(shifted)


def generate(spec: DgpSpec) -> ObservationSet:
    """One observational sample from the design.

    Draw order is fixed (covariates, assignments, outcome noise, mixture
    components) so equal seeds reproduce bit-identical data. Raises
    DataError if the realized sample happens to contain a single arm.
    """
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    x = rng.standard_normal((spec.n, 3))
    a = rng.binomial(1, expit(x.sum(axis=1)))
    if spec.kind == "fig1_mixture":
        z = rng.standard_normal((spec.n, 2))
        comp = 2 * rng.integers(0, 2, size=spec.n) - 1
        y = z
        treated = a == 1
        y[treated] += spec.theta * comp[treated, None]
    else:
        mean0, chol0, mean1, chol1 = _arm_moments(spec)
        z = rng.standard_normal((spec.n, mean0.size))
        y = z @ chol0.T + mean0
        treated = a == 1
        y[treated] = z[treated] @ chol1.T + mean1
    return ObservationSet(x=x, a=a, y=y)


def generate_fig1(theta: float, n: int, seed: int) -> tuple:
    """Uniform empirical measures from N(0, I_2) and the two-component mixture.

    Returns (control measure, mixture measure); the mixture places weight
    half on each of N(-theta * 1_2, I_2) and N(theta * 1_2, I_2), so its mean
    matches the control law for every theta while the shape separates.
    """
    theta = float(theta)
    if not np.isfinite(theta) or theta < 0:
        raise ConfigError(f"theta must be a finite nonnegative scalar, got {theta!r}")
    if int(n) < 2:
        raise ConfigError(f"n must be at least 2, got {n!r}")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    y0 = rng.standard_normal((int(n), 2))
    comp = 2 * rng.integers(0, 2, size=int(n)) - 1
    y1 = rng.standard_normal((int(n), 2)) + theta * comp[:, None]
    return DiscreteMeasure(y0), DiscreteMeasure(y1)


def _counterfactual_samples(spec: DgpSpec, n_oracle: int) -> tuple:
    """Direct draws (treated outcomes, control outcomes) from the arm laws.

    Uses a spawned child of the spec seed, so the oracle stream never
    overlaps the stream that generate() consumes for the same spec.
    """
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(1)[0])
    if spec.kind == "fig1_mixture":
        comp = 2 * rng.integers(0, 2, size=n_oracle) - 1
        y1 = rng.standard_normal((n_oracle, 2)) + spec.theta * comp[:, None]
        y0 = rng.standard_normal((n_oracle, 2))
        return y1, y0
    mean0, chol0, mean1, chol1 = _arm_moments(spec)
    y1 = rng.standard_normal((n_oracle, mean1.size)) @ chol1.T + mean1
    y0 = rng.standard_normal((n_oracle, mean0.size)) @ chol0.T + mean0
    return y1, y0


def oracle_eps(spec: DgpSpec, n_oracle: int = _MIN_ORACLE) -> float:
    """Median pairwise cost over a pooled counterfactual subsample.

    The two arm samples contribute equally; the pool is capped at 4096
    atoms to keep the pairwise distance matrix small.
    """
    y1, y0 = _counterfactual_samples(spec, int(n_oracle))
    half = min(y1.shape[0], _ORACLE_SUBSAMPLE // 2)
    return median_heuristic(np.vstack([y1[:half], y0[:half]]))


def _resolve_population_eps(spec: DgpSpec, eps, n_oracle: int) -> tuple:
    if isinstance(eps, str):
        if eps != "median":
            raise ConfigError(f"eps must be a positive scalar or 'median', got {eps!r}")
        return oracle_eps(spec, n_oracle), "oracle-median"
    value = float(eps)
    if not np.isfinite(value) or value <= 0:
        raise ConfigError(f"eps must be positive, got {eps!r}")
    return value, "fixed"


def _check_oracle_size(n_oracle: int) -> int:
    n_oracle = int(n_oracle)
    if n_oracle < _MIN_ORACLE:
        raise ConfigError(f"population oracles need n_oracle >= {_MIN_ORACLE}, got {n_oracle}")
    return n_oracle


def population_oracle_ste(spec: DgpSpec, eps="median", n_oracle: int = _MIN_ORACLE) -> float:
    """Transport divergence between the true arm laws, by direct sampling.

    Deterministic given spec.seed; serves as ground truth for MSE and
    coverage studies at the same eps.
    """
    n_oracle = _check_oracle_size(n_oracle)
    eps_value, _ = _resolve_population_eps(spec, eps, n_oracle)
    y1, y0 = _counterfactual_samples(spec, n_oracle)
    return float(sinkhorn_divergence(DiscreteMeasure(y1), DiscreteMeasure(y0), eps_value))


def population_oracle_mte(spec: DgpSpec, eps="median", n_oracle: int = _MIN_ORACLE) -> float:
    """Kernel mean discrepancy between the true arm laws, by direct sampling."""
    n_oracle = _check_oracle_size(n_oracle)
    eps_value, _ = _resolve_population_eps(spec, eps, n_oracle)
    y1, y0 = _counterfactual_samples(spec, n_oracle)
    return float(mmd_squared(DiscreteMeasure(y1), DiscreteMeasure(y0), eps=eps_value))


@dataclass(frozen=True)
class McSummary:
    """Aggregate of one Monte Carlo run; fields unused by the mode are None.

    Rates and coverage lie in [0, 1] and mean squared errors are
    nonnegative by construction; failures counts replications that raised
    a data or numerical error and were excluded from the aggregates.
    """

    kind: str
    theta: float
    n: int
    mode: str
    estimand: str
    replications: int
    failures: int
    eps: float | None
    eps_source: str
    alpha: float | None
    oracle_value: float | None
    rejection_rate: float | None
    mse_plugin: float | None
    mse_one_step: float | None
    mse_second_order: float | None
    coverage: float | None
    rep_seeds: tuple


def rep_seed_words(seed: int, reps: int) -> np.ndarray:
    """Replication seeds: hashed 64-bit words derived from the root seed.

    The words are mutually independent streams by construction, and the
    scheme is independent of any worker layout, so results for a fixed
    root seed do not depend on how replications are scheduled.
    """
    return np.random.SeedSequence(int(seed)).generate_state(int(reps), dtype=np.uint64)


def _pipeline_seed(rep_seed: int) -> int:
    """Fold-shuffle/quantile seed for one replication, distinct from the
    data seed so fold membership is independent of the draws."""
    return int(np.random.SeedSequence(int(rep_seed)).generate_state(2)[1])


def _run_replication(spec, rep_seed, mode, estimand, eps, alpha, beta, grid_scales, cfg):
    """One replication; returns ('ok', payload) or ('error', message).

    Module-level and picklable so a process pool can execute it; every
    input it needs travels in the arguments, never in shared state.
    """
    data_spec = dataclasses.replace(spec, seed=int(rep_seed))
    rep_cfg = dataclasses.replace(cfg, seed=_pipeline_seed(rep_seed))
    try:
        data = generate(data_spec)
        if mode == "estimate":
            report = cross_fit(data, inner=estimand, eps=eps, config=rep_cfg)
            lo, hi = report.wald_ci
            return ("ok", (report.plugin, report.one_step, report.second_order, lo, hi))
        if mode == "test":
            run = ste_test if estimand == "ste" else mte_test
            report = run(data, eps=eps, alpha=alpha, config=rep_cfg)
        else:
            grid = median_heuristic(data.y) * np.asarray(grid_scales, dtype=float)
            report = agg_test(data, grid, alpha=alpha, beta=beta,
                              config=rep_cfg, estimand=estimand)
        return ("ok", (float(report.reject),))
    except (DataError, NumericalError) as exc:
        return ("error", f"{type(exc).__name__}: {exc}")


def _replication_payloads(spec, seeds, mode, estimand, eps, alpha, beta,
                          grid_scales, cfg, workers):
    """Map replications over seeds, serially or with a process pool.

    Per-replication randomness is a pure function of its seed word and
    payloads are re-assembled in seed order, so the aggregate is identical
    for every worker count.
    """
    tasks = [(spec, int(s), mode, estimand, eps, alpha, beta, tuple(grid_scales), cfg)
             for s in seeds]
    if workers == 1:
        results = [_run_replication(*t) for t in tasks]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_replication, *zip(*tasks)))
    payloads, failures = [], 0
    for seed_word, (tag, payload) in zip(seeds, results):
        if tag == "error":
            logger.warning("replication seed=%d failed: %s", int(seed_word), payload)
            failures += 1
        else:
            payloads.append(payload)
    return payloads, failures


def run_mc(
    spec: DgpSpec,
    reps: int,
    mode: str = "estimate",
    estimand: str = "ste",
    eps="median",
    alpha: float = 0.05,
    beta: float | None = None,
    grid_scales=DEFAULT_GRID_SCALES,
    config: PipelineConfig | None = None,
    n_oracle: int = _MIN_ORACLE,
    workers: int = 1,
) -> McSummary:
    """Monte Carlo study over independent replications of one design.

    Modes:

    - ``estimate``: eps is resolved once (population median by default) and
      shared by every replication and by the population oracle; reports
      mean squared errors of the three estimators against the oracle and
      Wald coverage of the oracle value.
    - ``test``: fixed-scale calibrated test per replication; eps='median'
      resolves per replication on that replication's outcomes; reports the
      rejection rate.
    - ``aggtest``: scale-aggregated test on grid_scales times the
      per-replication median cost; reports the rejection rate.

    Replication failures (data or numerical errors) are logged, counted in
    the summary, and excluded from the aggregates. workers > 1 fans the
    replications out to a process pool; the summary does not depend on the
    worker count.
    """
    if int(reps) < 1:
        raise ConfigError(f"at least one replication is required, got {reps!r}")
    if mode not in MC_MODES:
        raise ConfigError(f"mode must be one of {MC_MODES}, got {mode!r}")
    if estimand not in ("ste", "mte"):
        raise ConfigError(f"estimand must be 'ste' or 'mte', got {estimand!r}")
    if int(workers) < 1:
        raise ConfigError(f"workers must be a positive count, got {workers!r}")
    workers = int(workers)
    cfg = config or PipelineConfig()
    seeds = rep_seed_words(spec.seed, int(reps))
    summary = dict(
        kind=spec.kind, theta=spec.theta, n=spec.n, mode=mode, estimand=estimand,
        replications=int(reps), alpha=None, oracle_value=None, rejection_rate=None,
        mse_plugin=None, mse_one_step=None, mse_second_order=None, coverage=None,
        rep_seeds=tuple(int(s) for s in seeds),
    )

    if mode == "estimate":
        eps_value, source = _resolve_population_eps(spec, eps, _check_oracle_size(n_oracle))
        oracle_fn = population_oracle_ste if estimand == "ste" else population_oracle_mte
        oracle = oracle_fn(spec, eps_value, n_oracle)
        payloads, failures = _replication_payloads(
            spec, seeds, mode, estimand, eps_value, alpha, beta, grid_scales, cfg, workers)
        if not payloads:
            raise NumericalError("every replication failed; no aggregates to report")
        plugin, one_step, second, lo, hi = map(np.asarray, zip(*payloads))
        summary.update(
            eps=eps_value, eps_source=source, oracle_value=oracle, failures=failures,
            mse_plugin=float(np.mean((plugin - oracle) ** 2)),
            mse_one_step=float(np.mean((one_step - oracle) ** 2)),
            mse_second_order=float(np.mean((second - oracle) ** 2)),
            coverage=float(np.mean((lo <= oracle) & (oracle <= hi))),
        )
        return McSummary(**summary)

    if not 0.0 < float(alpha) < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha!r}")
    if mode == "aggtest":
        scales = np.asarray(grid_scales, dtype=float)
        if scales.size < 1 or not np.all(np.isfinite(scales)) or np.any(scales <= 0):
            raise ConfigError(f"grid_scales must be positive scalars, got {grid_scales!r}")
    payloads, failures = _replication_payloads(
        spec, seeds, mode, estimand, eps, float(alpha), beta, grid_scales, cfg, workers)
    successes = len(payloads)
    if successes == 0:
        raise NumericalError("every replication failed; no aggregates to report")
    rejections = int(sum(p[0] for p in payloads))
    per_rep_median = isinstance(eps, str) or mode == "aggtest"
    summary.update(
        eps=None if per_rep_median else float(eps),
        eps_source="per-rep-median" if per_rep_median else "fixed",
        alpha=float(alpha), failures=failures,
        rejection_rate=rejections / successes,
    )
    return McSummary(**summary)
