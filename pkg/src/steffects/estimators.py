"""Plug-in, one-step, and second-order estimators with cross-fitting.

A single fit consumes a (train, evaluate) split: nuisances fit on the
training half, influence evaluations on the evaluation half. The one-step
estimate adds the mean first-order influence to the plug-in; the
second-order estimate further adds half the off-diagonal mean of the
second-order influence matrix. Cross-fitting swaps fold roles and averages
with fold sizes as weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

from .eif import (
    first_order_eif,
    mte_first_order_eif,
    mte_second_order_eif,
    second_order_eif,
)
from .errors import ConfigError
from .kernels import gibbs_gram, median_heuristic, mmd_squared
from .nuisance import ObservationSet, fit_outcome, fit_propensity, precompute
from .ot_core import DiscreteMeasure, hadamard_solve

ESTIMANDS = ("ste", "mte")


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs shared by estimation and testing pipelines.

    seed drives fold shuffling and quantile simulation; None keeps folds in
    data order (and quantile streams default-seeded), which is only sensible
    for already-exchangeable rows.
    """

    clamp_floor: float = 0.01
    ci_level: float = 0.95
    folds: int = 2
    mc_draws: int = 10_000
    seed: int | None = 0
    tol: float = 1e-9
    max_iter: int = 10_000

    def __post_init__(self):
        if not 0.0 < self.clamp_floor < 0.5:
            raise ConfigError(f"clamp_floor must lie in (0, 0.5), got {self.clamp_floor!r}")
        if not 0.0 < self.ci_level < 1.0:
            raise ConfigError(f"ci_level must lie in (0, 1), got {self.ci_level!r}")
        if self.folds < 2:
            raise ConfigError(f"folds must be at least 2, got {self.folds!r}")
        if self.mc_draws < 1000:
            raise ConfigError(f"mc_draws must be at least 1000, got {self.mc_draws!r}")


@dataclass(frozen=True)
class EstimateReport:
    """Point estimates, corrections, and the Wald interval for one estimand."""

    estimand: str
    plugin: float
    one_step: float
    second_order: float
    eif_variance: float
    wald_ci: tuple
    eps: float
    eps_source: str
    folds: int
    n: int
    ci_level: float
    correction_first: float
    correction_second: float


@dataclass(frozen=True)
class FoldComponents:
    """Raw per-fold influence evaluations, reused by the testing module."""

    n: int
    plugin: float
    i1: np.ndarray
    i2: np.ndarray

    @property
    def one_step(self) -> float:
        return self.plugin + float(self.i1.mean())

    @property
    def second_order(self) -> float:
        return self.one_step + 0.5 * u_statistic(self.i2)


def u_statistic(M: np.ndarray) -> float:
    """Off-diagonal mean of a square matrix: (1'M1 - tr M) / (n(n-1))."""
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if M.ndim != 2 or M.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if n < 2:
        raise ValueError("u_statistic needs at least a 2x2 matrix")
    return float((M.sum() - np.trace(M)) / (n * (n - 1)))


def resolve_eps(eps, y: np.ndarray) -> tuple[float, str]:
    """Resolve the regularization scale: explicit value wins, else median cost.

    Returns (value, source) with source 'fixed' or 'median'.
    """
    if eps is None or (isinstance(eps, str) and eps == "median"):
        return median_heuristic(y), "median"
    if isinstance(eps, str):
        raise ConfigError(f"eps must be a positive number or 'median', got {eps!r}")
    value = float(eps)
    if not np.isfinite(value) or value <= 0.0:
        raise ConfigError(f"eps must be positive and finite, got {eps!r}")
    return value, "fixed"


def _estimand_tag(inner) -> str:
    if isinstance(inner, str):
        tag = inner.lower()
    elif callable(inner):
        tag = {estimate_ste: "ste", estimate_mte: "mte"}.get(inner, "")
    else:
        tag = ""
    if tag not in ESTIMANDS:
        raise ConfigError(f"estimand must be one of {ESTIMANDS}, got {inner!r}")
    return tag


def fold_components(
    train: ObservationSet,
    eval_set: ObservationSet,
    eps: float,
    estimand: str = "ste",
    config: PipelineConfig | None = None,
) -> FoldComponents:
    """Fit nuisances on train and evaluate all influence pieces on eval_set."""
    cfg = config or PipelineConfig()
    estimand = _estimand_tag(estimand)
    prop = fit_propensity(train, cfg.clamp_floor)
    outc = fit_outcome(train)
    pre = precompute(eval_set, prop, outc, eps, cfg.tol, cfg.max_iter)
    if estimand == "ste":
        plugin = pre.divergence
        i1 = first_order_eif(pre, eval_set.a)
        # self-transport kernel of the treated counterfactual, from the
        # already-solved symmetric potential
        X = np.exp((pre.F[:, None] + pre.F[None, :] - pre.C) / pre.eps)
        M = hadamard_solve(X, pre.P1, pre.eps)
        i2 = second_order_eif(pre, eval_set.a, M)
    else:
        gram = gibbs_gram(eval_set.y, eval_set.y, eps)
        plugin = mmd_squared(
            DiscreteMeasure(eval_set.y, pre.P1),
            DiscreteMeasure(eval_set.y, pre.P0),
            gram=gram,
        )
        i1 = mte_first_order_eif(pre, gram, eval_set.a)
        i2 = mte_second_order_eif(pre, gram, eval_set.a)
    return FoldComponents(n=eval_set.n, plugin=float(plugin), i1=i1, i2=i2)


def _single_split_report(
    comps: FoldComponents, eps: float, eps_source: str, estimand: str, cfg: PipelineConfig
) -> EstimateReport:
    return _aggregate_report([comps], eps, eps_source, estimand, cfg, folds=1)


def _aggregate_report(
    comps: Sequence[FoldComponents],
    eps: float,
    eps_source: str,
    estimand: str,
    cfg: PipelineConfig,
    folds: int,
) -> EstimateReport:
    sizes = np.array([c.n for c in comps], dtype=float)
    n = sizes.sum()
    plugin = float(np.dot(sizes, [c.plugin for c in comps]) / n)
    one_step = float(np.dot(sizes, [c.one_step for c in comps]) / n)
    second = float(np.dot(sizes, [c.second_order for c in comps]) / n)
    i1_all = np.concatenate([c.i1 for c in comps])
    variance = float(i1_all.var(ddof=1))
    z = norm.ppf(0.5 + cfg.ci_level / 2.0)
    half = z * np.sqrt(variance / n)
    return EstimateReport(
        estimand=estimand.upper(),
        plugin=plugin,
        one_step=one_step,
        second_order=second,
        eif_variance=variance,
        wald_ci=(one_step - half, one_step + half),
        eps=float(eps),
        eps_source=eps_source,
        folds=folds,
        n=int(n),
        ci_level=cfg.ci_level,
        correction_first=one_step - plugin,
        correction_second=second - one_step,
    )


def estimate_ste(
    train: ObservationSet,
    eval_set: ObservationSet,
    eps: float,
    config: PipelineConfig | None = None,
) -> EstimateReport:
    """Transport-divergence treatment effect from one train/evaluate split."""
    cfg = config or PipelineConfig()
    eps_value, source = resolve_eps(eps, eval_set.y)
    comps = fold_components(train, eval_set, eps_value, "ste", cfg)
    return _single_split_report(comps, eps_value, source, "ste", cfg)


def estimate_mte(
    train: ObservationSet,
    eval_set: ObservationSet,
    eps: float,
    config: PipelineConfig | None = None,
) -> EstimateReport:
    """Kernel mean discrepancy treatment effect from one train/evaluate split."""
    cfg = config or PipelineConfig()
    eps_value, source = resolve_eps(eps, eval_set.y)
    comps = fold_components(train, eval_set, eps_value, "mte", cfg)
    return _single_split_report(comps, eps_value, source, "mte", cfg)


def fold_indices(n: int, folds: int, seed: int | None) -> list[np.ndarray]:
    """Split range(n) into folds of near-equal size, shuffled when seeded."""
    if folds < 2:
        raise ConfigError(f"folds must be at least 2, got {folds!r}")
    if folds > n:
        raise ConfigError(f"cannot split {n} records into {folds} folds")
    idx = np.arange(n)
    if seed is not None:
        np.random.default_rng(np.random.SeedSequence(seed)).shuffle(idx)
    return list(np.array_split(idx, folds))


def cross_fit_components(
    data: ObservationSet,
    folds: int,
    estimand: str,
    eps: float,
    config: PipelineConfig,
    seed: int | None,
) -> list[FoldComponents]:
    """Per-fold influence components with swapped train/evaluate roles."""
    parts = fold_indices(data.n, folds, seed)
    out = []
    for k, hold in enumerate(parts):
        rest = np.concatenate([parts[j] for j in range(folds) if j != k])
        out.append(
            fold_components(data.subset(rest), data.subset(hold), eps, estimand, config)
        )
    return out


def cross_fit(
    data: ObservationSet,
    folds: int | None = None,
    inner: str | Callable = "ste",
    eps="median",
    config: PipelineConfig | None = None,
) -> EstimateReport:
    """K-fold swap estimation, fold-size-weighted, variance pooled over folds.

    eps accepts a positive number or 'median' (resolved once on the pooled
    outcomes). Fold membership is shuffled by config.seed; config.seed=None
    keeps data order, so K=2 then reproduces a deterministic half split.
    """
    cfg = config or PipelineConfig()
    k = cfg.folds if folds is None else int(folds)
    estimand = _estimand_tag(inner)
    eps_value, source = resolve_eps(eps, data.y)
    comps = cross_fit_components(data, k, estimand, eps_value, cfg, cfg.seed)
    return _aggregate_report(comps, eps_value, source, estimand, cfg, folds=k)
