"""Entropic optimal transport on discrete measures.

Log-domain Sinkhorn solver, dual transport cost, Sinkhorn divergence,
centered potentials, self-transport kernel, and the quotient-space linear
solve behind the second-order influence kernel. All measures are weighted
point clouds; all costs are half squared Euclidean distances.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .errors import NumericalError

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000

# exp() argument cap used only inside convergence diagnostics, where early
# iterations can produce huge potential gaps that would otherwise overflow
_EXP_CAP = 50.0


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud: atoms (n, d) with probability weights (n,).

    Weights must be nonnegative and sum to 1 within 1e-12; zero-weight atoms
    are dropped at construction. Omitting weights gives the uniform measure.
    """

    atoms: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        if atoms.ndim != 2 or atoms.shape[0] < 1 or atoms.shape[1] < 1:
            raise ValueError(f"atoms must be a nonempty (n, d) array, got shape {atoms.shape}")
        if not np.all(np.isfinite(atoms)):
            raise ValueError("atoms contain non-finite entries")
        if self.weights is None:
            weights = np.full(atoms.shape[0], 1.0 / atoms.shape[0])
        else:
            weights = np.asarray(self.weights, dtype=float)
        if weights.shape != (atoms.shape[0],):
            raise ValueError(
                f"weights shape {weights.shape} does not match {atoms.shape[0]} atoms"
            )
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and nonnegative")
        total = weights.sum()
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1 within 1e-12, got {total!r}")
        keep = weights > 0
        if not np.all(keep):
            atoms = atoms[keep]
            weights = weights[keep]
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    @property
    def d(self) -> int:
        return self.atoms.shape[1]


@dataclass(frozen=True)
class EntropicSolution:
    """Dual potentials of a regularized transport problem.

    phi1 lives on the row-measure atoms (normalized so phi1[0] = 0), phi0 on
    the column-measure atoms. marginal_error is the max L1 marginal violation
    of the induced coupling at exit.
    """

    phi1: np.ndarray
    phi0: np.ndarray
    eps: float
    iterations: int
    marginal_error: float
    converged: bool


@dataclass(frozen=True)
class CenteredPotentials:
    """Transport potentials with self-transport potentials subtracted.

    ups1 lives on mu-atoms, ups0 on nu-atoms; mu . ups1 + nu . ups0 equals the
    Sinkhorn divergence, split evenly between the two terms, and both vanish
    when mu = nu.
    """

    ups1: np.ndarray
    ups0: np.ndarray
    eps: float


def cost_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Half squared Euclidean distances between two atom sets.

    Args:
        A: (n, d) atom coordinates.
        B: (m, d) atom coordinates.

    Returns:
        (n, m) matrix with entries 0.5 * ||A_i - B_j||^2.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if B.ndim == 1:
        B = B[:, None]
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    C = 0.5 * cdist(A, B, "sqeuclidean")
    return np.maximum(C, 0.0)


def _check_eps(eps: float) -> float:
    eps = float(eps)
    if not np.isfinite(eps) or eps <= 0:
        raise ValueError(f"eps must be positive, got {eps!r}")
    return eps


def _sinkhorn_loop(log_mu, log_nu, Cd, g_init, tol, max_iter):
    """Alternating softmin updates in the log domain.

    Works on scaled potentials f = phi1/eps, g = phi0/eps. Returns
    (f, g, iterations, marginal_error, converged) where marginal_error is the
    max L1 marginal violation of the coupling induced by the returned pair.
    """
    g = np.zeros_like(log_nu) if g_init is None else np.array(g_init, dtype=float)
    f = -logsumexp(log_nu[None, :] + g[None, :] - Cd, axis=1)
    # rows now exact; columns exact after the first g update inside the loop
    err = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        g_new = -logsumexp(log_mu[:, None] + f[:, None] - Cd, axis=0)
        err_col = np.dot(np.exp(log_nu), np.abs(np.exp(np.minimum(g - g_new, _EXP_CAP)) - 1.0))
        g = g_new
        f_new = -logsumexp(log_nu[None, :] + g[None, :] - Cd, axis=1)
        err_row = np.dot(np.exp(log_mu), np.abs(np.exp(np.minimum(f - f_new, _EXP_CAP)) - 1.0))
        f = f_new
        err = max(err_row, err_col)
        if err <= tol:
            break
    # rows are exact for the returned (f, g); report the column violation
    g_next = -logsumexp(log_mu[:, None] + f[:, None] - Cd, axis=0)
    err_col = np.dot(np.exp(log_nu), np.abs(np.exp(np.minimum(g - g_next, _EXP_CAP)) - 1.0))
    return f, g, it, float(err_col), err <= tol


def sinkhorn(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    eps: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> EntropicSolution:
    """Solve the regularized transport problem between two discrete measures.

    Iterates the dual fixed-point equations
        phi1(x) = -eps log sum_j nu_j exp((phi0(y_j) - c(x, y_j)) / eps)
        phi0(y) = -eps log sum_i mu_i exp((phi1(x_i) - c(x_i, y)) / eps)
    in the log domain until the coupling induced by (phi1, phi0) has L1
    marginal violations at most tol on both sides. The returned potentials are
    normalized so phi1[0] = 0.

    Non-convergence within max_iter is not fatal: the solution is returned
    with converged=False and the achieved marginal_error, and a warning is
    logged. Downstream divergence computations reject such solutions.
    """
    eps = _check_eps(eps)
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol!r}")
    Cd = cost_matrix(mu.atoms, nu.atoms) / eps
    f, g, it, err, ok = _sinkhorn_loop(
        np.log(mu.weights), np.log(nu.weights), Cd, None, tol, max_iter
    )
    if not ok:
        logger.warning(
            "sinkhorn did not reach tol=%.1e in %d iterations (marginal error %.3e)",
            tol, max_iter, err,
        )
    phi1 = eps * f
    phi0 = eps * g
    shift = phi1[0]
    return EntropicSolution(
        phi1=phi1 - shift,
        phi0=phi0 + shift,
        eps=eps,
        iterations=it,
        marginal_error=err,
        converged=ok,
    )


def _self_potential_scaled(log_w, Cd, tol, max_iter):
    """Symmetric fixed point f = -lse(log_w + f - Cd) via damped iteration.

    Returns (f, iterations, marginal_error, converged) with f on the eps-scaled
    (divided by eps) potential scale. This is the unique symmetric
    representative of the self-transport potentials.
    """
    w = np.exp(log_w)
    f = np.zeros_like(log_w)
    err = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        Sf = -logsumexp(log_w[None, :] + f[None, :] - Cd, axis=1)
        err = np.dot(w, np.abs(np.exp(np.minimum(f - Sf, _EXP_CAP)) - 1.0))
        if err <= tol:
            f = Sf
            break
        f = 0.5 * (f + Sf)
    return f, it, float(err), err <= tol


@dataclass(frozen=True)
class _DivergenceParts:
    """Internal bundle shared by divergence, centered potentials, estimators."""

    ups1: np.ndarray
    ups0: np.ndarray
    divergence: float
    ot_mn: float
    f_mu: np.ndarray  # symmetric self potential of mu (unscaled)
    f_nu: np.ndarray
    eps: float
    iterations: int = field(default=0)


def _require(ok: bool, err: float, tol: float, what: str):
    if not ok:
        raise NumericalError(
            f"{what} did not converge: marginal error {err:.3e} exceeds tol {tol:.1e}"
        )


def _divergence_parts(mu, nu, eps, tol, max_iter) -> _DivergenceParts:
    """Solve the three transport problems behind a Sinkhorn divergence.

    Shares one cost matrix when mu and nu carry identical atoms, warm-starts
    the cross problem from the self potentials, and centers the cross
    potentials in the balanced gauge mu . ups1 = nu . ups0.
    """
    eps = _check_eps(eps)
    log_mu = np.log(mu.weights)
    log_nu = np.log(nu.weights)
    same_atoms = mu.atoms is nu.atoms or (
        mu.atoms.shape == nu.atoms.shape and np.array_equal(mu.atoms, nu.atoms)
    )

    # dual values with the duality-gap correction term; the correction is
    # O(tol) at convergence but keeps the three terms mutually consistent
    def dual_value(la, lb, fa, gb, Cd):
        mass = np.exp(logsumexp(la[:, None] + lb[None, :] + fa[:, None] + gb[None, :] - Cd))
        lin = np.dot(np.exp(la), fa) + np.dot(np.exp(lb), gb)
        return eps * (lin - mass + 1.0)

    # with distinct atom sets the three cost matrices are built one at a
    # time and released after use, keeping peak memory at a single n x n
    # block even for large oracle samples
    Cmm = cost_matrix(mu.atoms, mu.atoms) / eps
    f_mu, it1, e1, ok1 = _self_potential_scaled(log_mu, Cmm, tol, max_iter)
    _require(ok1, e1, tol, "self-transport solve (first measure)")
    ot_mm = dual_value(log_mu, log_mu, f_mu, f_mu, Cmm)

    Cnn = Cmm if same_atoms else cost_matrix(nu.atoms, nu.atoms) / eps
    if not same_atoms:
        del Cmm
    f_nu, it2, e2, ok2 = _self_potential_scaled(log_nu, Cnn, tol, max_iter)
    _require(ok2, e2, tol, "self-transport solve (second measure)")
    ot_nn = dual_value(log_nu, log_nu, f_nu, f_nu, Cnn)

    Cmn = Cnn if same_atoms else cost_matrix(mu.atoms, nu.atoms) / eps
    if not same_atoms:
        del Cnn
    f, g, it3, e3, ok3 = _sinkhorn_loop(log_mu, log_nu, Cmn, f_nu, tol, max_iter)
    _require(ok3, e3, tol, "cross transport solve")
    ot_mn = dual_value(log_mu, log_nu, f, g, Cmn)

    div = ot_mn - 0.5 * ot_mm - 0.5 * ot_nn

    # balanced gauge: shift (f + k, g - k) so each centered side integrates to
    # half the divergence; makes ups vanish identically when mu = nu
    r1 = np.dot(mu.weights, f - f_mu)
    r0 = np.dot(nu.weights, g - f_nu)
    k = 0.5 * (r0 - r1)
    ups1 = eps * (f + k - f_mu)
    ups0 = eps * (g - k - f_nu)
    return _DivergenceParts(
        ups1=ups1,
        ups0=ups0,
        divergence=float(div),
        ot_mn=float(ot_mn),
        f_mu=eps * f_mu,
        f_nu=eps * f_nu,
        eps=eps,
        iterations=it1 + it2 + it3,
    )


def eot_cost(sol: EntropicSolution, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Dual regularized transport cost for a solved (mu, nu) problem.

    Evaluates mu.phi1 + nu.phi0 - eps * (integral of the induced coupling
    density - 1); the integral equals 1 at convergence, so the value reduces
    to the linear dual terms.
    """
    eps = sol.eps
    Cd = cost_matrix(mu.atoms, nu.atoms) / eps
    f = sol.phi1 / eps
    g = sol.phi0 / eps
    log_mass = logsumexp(
        np.log(mu.weights)[:, None] + np.log(nu.weights)[None, :]
        + f[:, None] + g[None, :] - Cd
    )
    lin = np.dot(mu.weights, sol.phi1) + np.dot(nu.weights, sol.phi0)
    return float(lin - eps * (np.exp(log_mass) - 1.0))


def sinkhorn_divergence(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    eps: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> float:
    """Sinkhorn divergence OT(mu, nu) - OT(mu, mu)/2 - OT(nu, nu)/2.

    Nonnegative, symmetric, and zero iff mu = nu; all three transport
    problems share eps, tol, and max_iter.
    """
    return _divergence_parts(mu, nu, eps, tol, max_iter).divergence


def centered_potentials(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    eps: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> CenteredPotentials:
    """Cross-transport potentials minus the self-transport potentials.

    ups1 = phi1(mu, nu) - phi1(mu, mu) on mu-atoms and ups0 = phi0(mu, nu) -
    phi0(nu, nu) on nu-atoms, with the cross potentials gauged so that
    mu . ups1 = nu . ups0 = divergence / 2. Both vectors vanish when mu = nu.
    """
    parts = _divergence_parts(mu, nu, eps, tol, max_iter)
    return CenteredPotentials(ups1=parts.ups1, ups0=parts.ups0, eps=parts.eps)


def self_transport_potential(
    mu: DiscreteMeasure,
    eps: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> np.ndarray:
    """Symmetric potential f of the (mu, mu) problem, one value per atom.

    f is the unique solution of f(x) = -eps log sum_j w_j exp((f(y_j) -
    c(x, y_j)) / eps); the self-transport kernel is exp((f_i + f_j - C_ij)/eps).
    """
    eps = _check_eps(eps)
    Cd = cost_matrix(mu.atoms, mu.atoms) / eps
    f, _, err, ok = _self_potential_scaled(np.log(mu.weights), Cd, tol, max_iter)
    _require(ok, err, tol, "self-transport solve")
    return eps * f


def self_transport_matrix(
    mu: DiscreteMeasure,
    eps: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> np.ndarray:
    """Density matrix of the optimal (mu, mu) coupling against mu x mu.

    X[i, j] = exp((f_i + f_j - C_ij) / eps) with f the symmetric self
    potential; rows satisfy sum_j w_j X[i, j] = 1 within solver tolerance.
    """
    eps = _check_eps(eps)
    Cd = cost_matrix(mu.atoms, mu.atoms) / eps
    f, _, err, ok = _self_potential_scaled(np.log(mu.weights), Cd, tol, max_iter)
    _require(ok, err, tol, "self-transport solve")
    return np.exp(f[:, None] + f[None, :] - Cd)


def hadamard_solve(
    X: np.ndarray,
    w: np.ndarray,
    eps: float,
    rhs_center: bool = True,
    scale_by_eps: bool = True,
    residual_tol: float = 1e-8,
) -> np.ndarray:
    """Solve (I - T^2) M = X - 11^T/n on the subspace orthogonal to constants.

    T is X with columns scaled by w (the integral operator f -> sum_j
    X[., j] w_j f_j). I - T^2 annihilates constants, so the system is solved
    on the quotient by projecting both sides with Pi = I - 11^T/n; the
    returned M has mean-zero columns (Pi M = M). By default M is multiplied
    by eps, matching the eps (I - T^2)^{-1} scaling of the second-order
    influence kernel; scale_by_eps=False drops that factor.

    The projected system has the one known null direction (constants) and is
    otherwise uniquely solvable for positive X; it is solved exactly by
    completing that direction. If the completed matrix is singular or leaves
    a large residual, a least-squares pseudo-solve is used instead and a
    warning with a condition estimate is logged.
    """
    eps = _check_eps(eps)
    X = np.asarray(X, dtype=float)
    w = np.asarray(w, dtype=float)
    n = X.shape[0]
    if X.shape != (n, n):
        raise ValueError(f"X must be square, got shape {X.shape}")
    if w.shape != (n,):
        raise ValueError(f"w shape {w.shape} does not match X of size {n}")

    T = X * w[None, :]
    A = np.eye(n) - T @ T
    # project both sides onto the quotient by constants
    A_p = A - A.mean(axis=0, keepdims=True)
    A_p -= A_p.mean(axis=1, keepdims=True)
    B = X - 1.0 / n if rhs_center else X
    B_p = B - B.mean(axis=0, keepdims=True)

    scale = max(float(np.abs(B_p).max()), np.finfo(float).tiny)
    completed = A_p + 1.0 / n
    try:
        M = np.linalg.solve(completed, B_p)
        residual = float(np.abs(A_p @ M - B_p).max()) / scale
    except np.linalg.LinAlgError:
        M, residual = None, np.inf
    if M is None or residual > residual_tol:
        cond = float(np.linalg.cond(completed))
        logger.warning(
            "hadamard_solve falling back to least squares "
            "(residual %.3e, condition estimate %.3e)", residual, cond,
        )
        M, *_ = np.linalg.lstsq(A_p, B_p, rcond=None)
    M -= M.mean(axis=0, keepdims=True)
    return eps * M if scale_by_eps else M
