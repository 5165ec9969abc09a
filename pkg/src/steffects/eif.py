"""First- and second-order influence-function evaluations.

Evaluates the composition (I - (I - (I-P_X) P_{A|X}) P_{Y|A,X}) of
conditional-expectation operators on the precomputed evaluation tensors:
once on a potential difference for the first-order influence vector, and
once per argument of a weighted kernel for the second-order influence
matrix. All conditional expectations are discrete contractions against the
outcome-mass tensor P, the propensities E, and the empirical covariate law.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError
from .kernels import GibbsGram
from .nuisance import Precomputed

_SYMMETRY_TOL = 1e-6


def _validated_arms(pre: Precomputed, a) -> np.ndarray:
    a = np.asarray(a)
    n = pre.P.shape[0]
    if a.shape != (n,):
        raise ValueError(f"treatment vector must have shape ({n},), got {a.shape}")
    if not np.all(np.isin(a, (0, 1))):
        raise ValueError("treatment vector entries must be 0 or 1")
    col_err = np.abs(pre.P.sum(axis=0) - 1.0).max()
    if col_err > 1e-9:
        raise ValueError(
            f"outcome-mass columns must sum to 1, worst deviation {col_err:.3e}"
        )
    return a.astype(np.int64)


def data_projection(T: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Select each unit's own arm slice: out[i] = T[a_i, i, ...].

    T has the arm axis first (length 2) and the unit axis second.
    """
    T = np.asarray(T)
    if T.ndim < 2 or T.shape[0] != 2:
        raise ValueError(f"expected arm-leading tensor (2, n, ...), got {T.shape}")
    a = np.asarray(a)
    n = T.shape[1]
    if a.shape != (n,) or not np.all(np.isin(a, (0, 1))):
        raise ValueError("treatment vector must match the unit axis with 0/1 entries")
    return T[a.astype(np.int64), np.arange(n)]


def _first_order_core(
    pre: Precomputed, a: np.ndarray, U1: np.ndarray, U0: np.ndarray
) -> np.ndarray:
    # V[arm, m] = sum_l P[l, arm, m] U[l]: conditional mean of the potential
    V1 = np.tensordot(U1, pre.P, axes=(0, 0))
    V0 = np.tensordot(U0, pre.P, axes=(0, 0))
    t1 = pre.W1 * U1 + pre.W0 * U0
    t2 = pre.W1 * data_projection(V1, a) + pre.W0 * data_projection(V0, a)
    t3 = V1[1] + V0[0]
    return t1 - t2 + t3 - t3.mean()


def first_order_eif(pre: Precomputed, a) -> np.ndarray:
    """First-order influence evaluations at each unit's own record.

    Applies the expectation-operator composition to the inverse-propensity
    weighted centered potentials and reads the result at (x_i, a_i, y_i).
    """
    a = _validated_arms(pre, a)
    return _first_order_core(pre, a, pre.U1, pre.U0)


def _operator_pass(
    M: np.ndarray, P: np.ndarray, omega: np.ndarray, a: np.ndarray
) -> np.ndarray:
    """Apply the operator along the column axis of M, then transpose.

    The projection weight omega enters the pointwise and own-arm terms only;
    the arm average and covariate mean absorb it analytically.
    """
    n = M.shape[0]
    PM = (M @ P.reshape(n, -1)).reshape(n, 2, n)  # PM[i, arm, m]
    own = PM[:, a, np.arange(n)]
    t3 = PM[:, 1, :] - PM[:, 0, :]
    out = omega[None, :] * (M - own) + t3 - t3.mean(axis=1, keepdims=True)
    return out.T


def _second_order_core(pre: Precomputed, a: np.ndarray, M: np.ndarray) -> np.ndarray:
    omega = np.where(a == 1, 1.0 / pre.E, -1.0 / (1.0 - pre.E))
    cur = M
    for _ in range(2):
        cur = _operator_pass(cur, pre.P, omega, a)
    asym = np.abs(cur - cur.T).max()
    scale = max(np.abs(cur).max(), 1.0)
    if asym > _SYMMETRY_TOL * scale:
        raise NumericalError(
            f"second-order influence matrix asymmetric beyond tolerance: "
            f"{asym:.3e} against scale {scale:.3e}"
        )
    return 0.5 * (cur + cur.T)


def second_order_eif(pre: Precomputed, a, M: np.ndarray) -> np.ndarray:
    """Second-order influence matrix from a transport-derivative kernel M.

    M is the Hadamard-solve output on the treated counterfactual's
    self-transport system. The operator composition is applied to each
    argument of omega x omega (.) M in two passes; the result is checked for
    symmetry and symmetrized.
    """
    a = _validated_arms(pre, a)
    M = np.asarray(M, dtype=float)
    n = pre.P.shape[0]
    if M.shape != (n, n):
        raise ValueError(f"kernel matrix must have shape ({n}, {n}), got {M.shape}")
    return _second_order_core(pre, a, M)


def _gram_values(pre: Precomputed, gram: GibbsGram) -> np.ndarray:
    n = pre.P.shape[0]
    if gram.values.shape != (n, n):
        raise ValueError(
            f"Gram matrix must be ({n}, {n}) on the evaluation atoms, "
            f"got {gram.values.shape}"
        )
    if not np.isclose(gram.eps, pre.eps):
        raise ValueError(
            f"Gram bandwidth {gram.eps!r} differs from precomputed eps {pre.eps!r}"
        )
    return gram.values


def mte_first_order_eif(pre: Precomputed, gram: GibbsGram, a) -> np.ndarray:
    """First-order influence evaluations for the kernel mean discrepancy.

    Uses the embedding difference U1 = G (P1 - P0), U0 = -U1 in place of the
    transport potentials.
    """
    a = _validated_arms(pre, a)
    u = _gram_values(pre, gram) @ (pre.P1 - pre.P0)
    return _first_order_core(pre, a, u, -u)


def mte_second_order_eif(pre: Precomputed, gram: GibbsGram, a) -> np.ndarray:
    """Second-order influence matrix for the kernel mean discrepancy.

    The Gram matrix itself plays the role of the derivative kernel; no
    transport solve is involved.
    """
    a = _validated_arms(pre, a)
    return _second_order_core(pre, a, _gram_values(pre, gram))
