"""Calibrated hypothesis tests built on the second-order influence matrix.

Under the null the n-scaled second-order estimate converges to a weighted
sum of centered chi-squares whose weights are the eigenvalues of the
influence-matrix spectrum; quantiles are simulated from that representation.
The aggregated test normalizes the statistic at every regularization scale
by its own marginal quantile and calibrates the maximum against a jointly
simulated Gaussian-chaos maximum sharing one normal vector per replicate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .estimators import (
    FoldComponents,
    PipelineConfig,
    _estimand_tag,
    cross_fit_components,
    fold_indices,
    resolve_eps,
)
from .eif import mte_first_order_eif, mte_second_order_eif, first_order_eif, second_order_eif
from .kernels import gibbs_gram, mmd_squared
from .nuisance import (
    ObservationSet,
    _eval_tensors,
    _precompute_from_tensors,
    fit_outcome,
    fit_propensity,
)
from .ot_core import DiscreteMeasure, hadamard_solve

logger = logging.getLogger(__name__)

_DRAW_CHUNK_SCALARS = 4_000_000  # bound on normals materialized per chunk


@dataclass(frozen=True)
class NullSpectrum:
    """Signed eigenvalues of I2/n, sorted descending; the null-chaos weights."""

    eigenvalues: np.ndarray
    scaling: float
    source_eps: float


@dataclass(frozen=True)
class TestReport:
    """Decision record for a fixed-scale or aggregated test."""

    statistic: float
    quantile: float
    p_value: float
    reject: bool
    alpha: float
    mc_draws: int
    estimand: str
    n: int
    folds: int
    eps: float | None = None
    eps_source: str = "fixed"
    eps_grid: tuple | None = None
    per_eps: tuple | None = None
    beta: float | None = None


def null_spectrum(I2: np.ndarray, source_eps: float = float("nan")) -> NullSpectrum:
    """Eigenvalues of I2/n for a symmetric influence matrix."""
    I2 = np.asarray(I2, dtype=float)
    n = I2.shape[0]
    if I2.ndim != 2 or I2.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {I2.shape}")
    asym = np.abs(I2 - I2.T).max()
    if asym > 1e-8 * max(1.0, np.abs(I2).max()):
        raise ValueError(f"matrix asymmetry {asym:.3e} beyond tolerance")
    lams = np.linalg.eigvalsh(I2 / n)[::-1]
    return NullSpectrum(eigenvalues=lams, scaling=1.0 / n, source_eps=float(source_eps))


def _chaos_draws(lams: np.ndarray, mc_draws: int, rng: np.random.Generator) -> np.ndarray:
    """Replicates of 0.5 * sum_j lam_j (N_j^2 - 1), chunked to bound memory."""
    lams = np.asarray(lams, dtype=float)
    m = len(lams)
    if m == 0:
        return np.zeros(mc_draws)
    out = np.empty(mc_draws)
    chunk = max(1, _DRAW_CHUNK_SCALARS // m)
    for start in range(0, mc_draws, chunk):
        stop = min(start + chunk, mc_draws)
        g = rng.standard_normal((stop - start, m))
        np.square(g, out=g)
        g -= 1.0
        out[start:stop] = 0.5 * (g @ lams)
    return out


def simulate_null_quantile(
    spec: NullSpectrum, level: float, mc_draws: int = 10_000, seed: int | None = 0
) -> float:
    """Empirical level-quantile of the spectral null approximation."""
    if not 0.0 < level < 1.0:
        raise ConfigError(f"level must lie in (0, 1), got {level!r}")
    if mc_draws < 1000:
        raise ConfigError(f"mc_draws must be at least 1000, got {mc_draws!r}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    draws = _chaos_draws(spec.eigenvalues, mc_draws, rng)
    return float(np.quantile(draws, level))


def _offdiagonal(I2: np.ndarray) -> np.ndarray:
    """Copy of I2 with the diagonal zeroed.

    The second-order correction is the off-diagonal mean of I2, so the
    realized statistic is a quadratic form in the hollow matrix H:
    n * U / 2 = 1' H 1 / (2 (n - 1)). Its Gaussian-chaos analogue swaps
    the ones vector for a standard normal draw, which means the null
    quantile should be simulated from the spectrum of H / n. Keeping the
    diagonal would add modes the statistic cannot produce: with
    inverse-propensity weighting the diagonal carries weight-squared
    spikes whose eigenvalues localize on single observations and inflate
    the simulated quantiles by an order of magnitude.
    """
    H = np.array(I2, dtype=float, copy=True)
    np.fill_diagonal(H, 0.0)
    return H


def _pooled_eigenvalues(comps: list[FoldComponents]) -> np.ndarray:
    """Concatenated per-fold hollow spectra: fold statistics add independently."""
    return np.concatenate(
        [null_spectrum(_offdiagonal(c.i2)).eigenvalues for c in comps]
    )


def _decision(statistic, draws, alpha):
    quantile = float(np.quantile(draws, 1.0 - alpha))
    p_value = float((1 + np.count_nonzero(draws >= statistic)) / (len(draws) + 1))
    return quantile, p_value, bool(statistic > quantile)


def _fixed_eps_test(
    data: ObservationSet, eps, alpha: float, config: PipelineConfig | None, estimand: str
) -> TestReport:
    cfg = config or PipelineConfig()
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha!r}")
    eps_value, source = resolve_eps(eps, data.y)
    fold_seed, mc_seed = _derived_seeds(cfg.seed)
    comps = cross_fit_components(data, cfg.folds, estimand, eps_value, cfg, fold_seed)
    statistic = float(sum(c.n * c.second_order for c in comps))
    lams = _pooled_eigenvalues(comps)
    rng = np.random.default_rng(np.random.SeedSequence(mc_seed))
    draws = _chaos_draws(lams, cfg.mc_draws, rng)
    quantile, p_value, reject = _decision(statistic, draws, alpha)
    return TestReport(
        statistic=statistic,
        quantile=quantile,
        p_value=p_value,
        reject=reject,
        alpha=alpha,
        mc_draws=cfg.mc_draws,
        estimand=estimand.upper(),
        n=data.n,
        folds=cfg.folds,
        eps=eps_value,
        eps_source=source,
    )


def _derived_seeds(seed: int | None) -> tuple[int | None, int]:
    """Fold seed and a derived quantile-simulation seed.

    The fold seed is the config seed itself so tests share fold assignments
    with cross_fit under the same config; the simulation stream is a hashed
    child of it.
    """
    if seed is None:
        return None, 0
    return seed, int(np.random.SeedSequence(seed).generate_state(2)[1])


def ste_test(
    data: ObservationSet, eps="median", alpha: float = 0.05,
    config: PipelineConfig | None = None,
) -> TestReport:
    """Fixed-scale transport-divergence test of equal counterfactual laws.

    The statistic is n times the cross-fitted second-order estimate; the
    null quantile comes from the pooled per-fold spectra.
    """
    return _fixed_eps_test(data, eps, alpha, config, "ste")


def mte_test(
    data: ObservationSet, eps="median", alpha: float = 0.05,
    config: PipelineConfig | None = None,
) -> TestReport:
    """Fixed-scale kernel mean discrepancy test; same calibration machinery."""
    return _fixed_eps_test(data, eps, alpha, config, "mte")


def _grid_fold_components(
    data: ObservationSet, eps_grid: np.ndarray, estimand: str, cfg: PipelineConfig,
    fold_seed: int | None,
) -> list[list[FoldComponents]]:
    """Components per grid point per fold, sharing nuisance fits across the grid.

    Propensities, outcome masses, and inverse-propensity weights do not
    depend on eps, so they are built once per fold; only the transport or
    Gram pieces are redone per grid point.
    """
    parts = fold_indices(data.n, cfg.folds, fold_seed)
    per_eps: list[list[FoldComponents]] = [[] for _ in eps_grid]
    for k, hold in enumerate(parts):
        rest = np.concatenate([parts[j] for j in range(cfg.folds) if j != k])
        train, eval_set = data.subset(rest), data.subset(hold)
        prop = fit_propensity(train, cfg.clamp_floor)
        outc = fit_outcome(train)
        tensors = _eval_tensors(eval_set, prop, outc)
        for e_idx, eps in enumerate(eps_grid):
            pre = _precompute_from_tensors(
                eval_set, tensors, float(eps), cfg.tol, cfg.max_iter
            )
            if estimand == "ste":
                plugin = pre.divergence
                i1 = first_order_eif(pre, eval_set.a)
                X = np.exp((pre.F[:, None] + pre.F[None, :] - pre.C) / pre.eps)
                M = hadamard_solve(X, pre.P1, pre.eps)
                i2 = second_order_eif(pre, eval_set.a, M)
            else:
                gram = gibbs_gram(eval_set.y, eval_set.y, float(eps))
                plugin = mmd_squared(
                    DiscreteMeasure(eval_set.y, pre.P1),
                    DiscreteMeasure(eval_set.y, pre.P0),
                    gram=gram,
                )
                i1 = mte_first_order_eif(pre, gram, eval_set.a)
                i2 = mte_second_order_eif(pre, gram, eval_set.a)
            per_eps[e_idx].append(
                FoldComponents(n=eval_set.n, plugin=float(plugin), i1=i1, i2=i2)
            )
    return per_eps


def _joint_chaos_draws(
    grid_comps: list[list[FoldComponents]], mc_draws: int, rng: np.random.Generator
) -> np.ndarray:
    """Joint null draws W[e, r] sharing one normal vector per fold per replicate.

    W(eps) = sum over folds of 0.5 (g' (H/n_k) g - tr(H)/n_k) with H the
    hollow i2 (see _offdiagonal) and the same g reused across the grid,
    realizing the joint limit's common Gaussian process. The centering
    term vanishes identically because tr(H) = 0. Chunked so normals never
    exceed the memory bound.
    """
    n_eps = len(grid_comps)
    folds = len(grid_comps[0])
    out = np.zeros((n_eps, mc_draws))
    for k in range(folds):
        mats = [
            _offdiagonal(grid_comps[e][k].i2) / grid_comps[e][k].n
            for e in range(n_eps)
        ]
        nk = mats[0].shape[0]
        chunk = max(1, _DRAW_CHUNK_SCALARS // nk)
        for start in range(0, mc_draws, chunk):
            stop = min(start + chunk, mc_draws)
            g = rng.standard_normal((nk, stop - start))
            for e, B in enumerate(mats):
                quad = np.einsum("ij,ij->j", g, B @ g)
                out[e, start:stop] += 0.5 * quad
    return out


def agg_test(
    data: ObservationSet,
    eps_grid,
    alpha: float = 0.05,
    beta: float | None = None,
    config: PipelineConfig | None = None,
    estimand: str = "ste",
) -> TestReport:
    """Scale-aggregated test: max of quantile-normalized statistics.

    Each grid point's statistic is divided by its own marginal
    (1-beta)-quantile; the maximum is compared with the (1-alpha)-quantile
    of the jointly simulated normalized maxima. Grid points with
    non-positive marginal quantiles are dropped with a warning.
    """
    cfg = config or PipelineConfig()
    estimand = _estimand_tag(estimand)
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha!r}")
    beta = alpha if beta is None else float(beta)
    if not 0.0 < beta < 1.0:
        raise ConfigError(f"beta must lie in (0, 1), got {beta!r}")
    grid = np.asarray(eps_grid, dtype=float).ravel()
    if grid.size == 0:
        raise ConfigError("eps grid must be nonempty")
    if np.any(~np.isfinite(grid)) or np.any(grid <= 0):
        raise ConfigError(f"eps grid must be positive and finite, got {grid!r}")
    if len(np.unique(grid)) != grid.size:
        raise ConfigError(f"eps grid values must be distinct, got {grid!r}")

    fold_seed, mc_seed = _derived_seeds(cfg.seed)
    grid_comps = _grid_fold_components(data, grid, estimand, cfg, fold_seed)
    stats = np.array(
        [sum(c.n * c.second_order for c in comps) for comps in grid_comps]
    )
    rng = np.random.default_rng(np.random.SeedSequence(mc_seed))
    W = _joint_chaos_draws(grid_comps, cfg.mc_draws, rng)
    marginal_q = np.quantile(W, 1.0 - beta, axis=1)

    keep = marginal_q > 0.0
    if not np.all(keep):
        dropped = grid[~keep]
        logger.warning(
            "dropping %d grid point(s) with non-positive marginal quantile: %s",
            dropped.size, dropped,
        )
    if not np.any(keep):
        raise NumericalError("every grid point has a degenerate null quantile")

    normalized = stats[keep] / marginal_q[keep]
    statistic = float(normalized.max())
    max_draws = (W[keep] / marginal_q[keep, None]).max(axis=0)
    quantile, p_value, reject = _decision(statistic, max_draws, alpha)
    per_eps = tuple(
        {
            "eps": float(grid[keep][i]),
            "statistic": float(stats[keep][i]),
            "marginal_quantile": float(marginal_q[keep][i]),
            "normalized": float(normalized[i]),
        }
        for i in range(int(keep.sum()))
    )
    return TestReport(
        statistic=statistic,
        quantile=quantile,
        p_value=p_value,
        reject=reject,
        alpha=alpha,
        mc_draws=cfg.mc_draws,
        estimand=estimand.upper(),
        n=data.n,
        folds=cfg.folds,
        eps_grid=tuple(float(e) for e in grid[keep]),
        per_eps=per_eps,
        beta=beta,
    )
