"""Nuisance models and precomputation tensors.

Fits the treated-arm propensity (logistic regression via iteratively
reweighted least squares) and a per-arm Gaussian location-scale outcome
model, discretizes the outcome model onto the evaluation sample's outcome
atoms, and assembles every evaluation tensor the influence-function
algebra consumes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import expit, logsumexp

from .errors import DataError, NumericalError
from .ot_core import DiscreteMeasure, _divergence_parts, cost_matrix

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-12
RIDGE_PENALTY = 1e-6


@dataclass(frozen=True)
class ObservationSet:
    """n records (x, a, y): covariates, binary treatment, outcomes.

    x is (n, p), a is (n,) with values in {0, 1}, y is (n, d). Entries must
    be finite and both treatment arms must be present.
    """

    x: np.ndarray
    a: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        a = np.asarray(self.a)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim == 1:
            y = y[:, None]
        n = x.shape[0]
        if n < 2 or y.shape[0] != n or a.shape != (n,):
            raise DataError(
                f"inconsistent record counts: x {x.shape}, a {a.shape}, y {y.shape}"
            )
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DataError("covariates or outcomes contain non-finite entries")
        if not np.all(np.isin(a, (0, 1))):
            bad = int(np.flatnonzero(~np.isin(a, (0, 1)))[0])
            raise DataError(f"treatment must be 0 or 1, found {a[bad]!r} at row {bad}")
        a = a.astype(np.int64)
        if a.min() == a.max():
            raise DataError(
                "positivity violated: both treatment arms must be present"
            )
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def subset(self, idx: np.ndarray) -> "ObservationSet":
        return ObservationSet(self.x[idx], self.a[idx], self.y[idx])


@dataclass(frozen=True)
class PropensityFit:
    """Logistic model for P(A=1 | X=x); predictions clamped away from 0 and 1."""

    coefficients: np.ndarray  # (p+1,), intercept first
    clamp_floor: float
    converged: bool = True

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        raw = expit(self.coefficients[0] + x @ self.coefficients[1:])
        return np.clip(raw, self.clamp_floor, 1.0 - self.clamp_floor)


@dataclass(frozen=True)
class OutcomeFit:
    """Per-arm Gaussian outcome model, mean linear in x, diagonal covariance."""

    coef: np.ndarray  # (2, p+1, d), intercept first
    sigma2: np.ndarray  # (2, d)

    def log_density(self, y_atoms: np.ndarray, arm: int, x: np.ndarray) -> np.ndarray:
        """Log conditional densities, atoms by covariate rows: out[i, k] =
        log p(y_i | arm, x_k)."""
        y_atoms = np.asarray(y_atoms, dtype=float)
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        means = self.coef[arm][0] + x @ self.coef[arm][1:]  # (k, d)
        sd = np.sqrt(self.sigma2[arm])
        sq = cdist(y_atoms / sd, means / sd, "sqeuclidean")  # (i, k)
        return -0.5 * (sq + np.log(2.0 * np.pi * self.sigma2[arm]).sum())


@dataclass(frozen=True)
class Precomputed:
    """Evaluation tensors consumed by the influence-function algebra.

    E: treated propensities at the evaluation covariates. W1, W0: inverse
    propensity weights a/E and (1-a)/(1-E). U1, U0: centered transport
    potentials at the sample outcomes. F: self-transport potential of the
    treated counterfactual measure. C: pairwise outcome costs. P: (n, 2, n)
    conditional outcome masses P[i, arm, k] over atoms i. P1, P0:
    counterfactual atom weights. divergence: transport divergence between
    the counterfactual measures (the plug-in value for the same eps).
    """

    E: np.ndarray
    W1: np.ndarray
    W0: np.ndarray
    U1: np.ndarray
    U0: np.ndarray
    F: np.ndarray
    C: np.ndarray
    P: np.ndarray
    P1: np.ndarray
    P0: np.ndarray
    eps: float
    divergence: float


def fit_propensity(
    data: ObservationSet, clamp_floor: float = 0.01, max_iter: int = 100, tol: float = 1e-10
) -> PropensityFit:
    """Fit logistic regression for P(A=1 | X) by Newton iterations.

    Predictions are clamped to [clamp_floor, 1 - clamp_floor]. Perfect or
    near-perfect separation shows up as non-convergence of the Newton steps;
    the fit is still returned (clamping bounds the weights) with a logged
    warning and converged=False.
    """
    if not 0.0 < clamp_floor < 0.5:
        raise ValueError(f"clamp_floor must lie in (0, 0.5), got {clamp_floor!r}")
    n, p = data.x.shape
    Z = np.column_stack([np.ones(n), data.x])
    a = data.a.astype(float)
    w = np.zeros(p + 1)
    converged = False
    for _ in range(max_iter):
        prob = expit(Z @ w)
        weight = np.maximum(prob * (1.0 - prob), 1e-10)
        grad = Z.T @ (a - prob)
        hess = Z.T @ (Z * weight[:, None])
        step = np.linalg.solve(hess + 1e-10 * np.eye(p + 1), grad)
        w += step
        if np.abs(step).max() < tol:
            converged = True
            break
    if not converged:
        logger.warning(
            "propensity fit did not converge in %d Newton steps "
            "(likely separation); predictions remain clamped to [%g, %g]",
            max_iter, clamp_floor, 1.0 - clamp_floor,
        )
    return PropensityFit(coefficients=w, clamp_floor=clamp_floor, converged=converged)


def _fit_arm(Z: np.ndarray, y: np.ndarray, arm: int):
    coef, _, rank, _ = np.linalg.lstsq(Z, y, rcond=None)
    if rank < Z.shape[1]:
        logger.warning(
            "rank-deficient design in arm %d outcome fit; using ridge penalty %g",
            arm, RIDGE_PENALTY,
        )
        gram = Z.T @ Z + RIDGE_PENALTY * np.eye(Z.shape[1])
        coef = np.linalg.solve(gram, Z.T @ y)
    resid = y - Z @ coef
    dof = max(Z.shape[0] - rank, 1)
    sigma2 = (resid**2).sum(axis=0) / dof
    if np.any(sigma2 < VARIANCE_FLOOR):
        logger.warning("arm %d residual variance floored at %g", arm, VARIANCE_FLOOR)
        sigma2 = np.maximum(sigma2, VARIANCE_FLOOR)
    return coef, sigma2


def fit_outcome(data: ObservationSet) -> OutcomeFit:
    """Fit the per-arm Gaussian location-scale model by least squares.

    Means are linear in x with an intercept; residual variances are per
    outcome dimension (diagonal covariance), floored at 1e-12.
    """
    n, p = data.x.shape
    d = data.y.shape[1]
    coef = np.zeros((2, p + 1, d))
    sigma2 = np.zeros((2, d))
    for arm in (0, 1):
        mask = data.a == arm
        Z = np.column_stack([np.ones(int(mask.sum())), data.x[mask]])
        coef[arm], sigma2[arm] = _fit_arm(Z, data.y[mask], arm)
    return OutcomeFit(coef=coef, sigma2=sigma2)


def outcome_tensor(fit: OutcomeFit, data_eval: ObservationSet) -> np.ndarray:
    """Conditional outcome masses over the evaluation atoms.

    P[i, j, k] is proportional to the model density of atom y_i under arm j
    at covariate x_k, normalized over i so every (j, k) column is a
    probability vector. A fully underflowed column falls back to uniform
    (logged).
    """
    n = data_eval.n
    P = np.empty((n, 2, n))
    for arm in (0, 1):
        logd = fit.log_density(data_eval.y, arm, data_eval.x)
        norm = logsumexp(logd, axis=0, keepdims=True)
        dead = ~np.isfinite(norm.ravel())
        if np.any(dead):
            logger.warning(
                "%d underflowed outcome columns in arm %d replaced by uniform",
                int(dead.sum()), arm,
            )
            logd[:, dead] = 0.0
            norm = logsumexp(logd, axis=0, keepdims=True)
        P[:, arm, :] = np.exp(logd - norm)
    return P


@dataclass(frozen=True)
class _EvalTensors:
    """The eps-independent part of Precomputed, reusable across a scale grid."""

    E: np.ndarray
    W1: np.ndarray
    W0: np.ndarray
    P: np.ndarray
    P1: np.ndarray
    P0: np.ndarray
    C: np.ndarray


def _eval_tensors(
    data_eval: ObservationSet, propensity: PropensityFit, outcome: OutcomeFit
) -> _EvalTensors:
    E = propensity.predict(data_eval.x)
    a = data_eval.a.astype(float)
    W1 = a / E
    W0 = (1.0 - a) / (1.0 - E)
    P = outcome_tensor(outcome, data_eval)
    P1 = P[:, 1, :].mean(axis=1)
    P0 = P[:, 0, :].mean(axis=1)
    if P1.min() <= 0.0 or P0.min() <= 0.0:
        raise NumericalError(
            "counterfactual weight underflowed to zero; outcome model places "
            "no mass on some evaluation atom"
        )
    C = cost_matrix(data_eval.y, data_eval.y)
    return _EvalTensors(E=E, W1=W1, W0=W0, P=P, P1=P1, P0=P0, C=C)


def _precompute_from_tensors(
    data_eval: ObservationSet, t: _EvalTensors, eps: float, tol: float, max_iter: int
) -> Precomputed:
    mu = DiscreteMeasure(data_eval.y, t.P1 / t.P1.sum())
    nu = DiscreteMeasure(data_eval.y, t.P0 / t.P0.sum())
    parts = _divergence_parts(mu, nu, eps, tol, max_iter)
    return Precomputed(
        E=t.E, W1=t.W1, W0=t.W0,
        U1=parts.ups1, U0=parts.ups0, F=parts.f_mu, C=t.C,
        P=t.P, P1=t.P1, P0=t.P0,
        eps=float(eps), divergence=parts.divergence,
    )


def precompute(
    data_eval: ObservationSet,
    propensity: PropensityFit,
    outcome: OutcomeFit,
    eps: float,
    tol: float = 1e-9,
    max_iter: int = 10_000,
) -> Precomputed:
    """Assemble every evaluation tensor for a nuisance pair fit elsewhere.

    The counterfactual measures place weights P1, P0 (covariate-averaged
    conditional masses) on the evaluation outcomes; centered potentials and
    the self-transport potential are computed between them at the given eps.
    """
    tensors = _eval_tensors(data_eval, propensity, outcome)
    return _precompute_from_tensors(data_eval, tensors, eps, tol, max_iter)
