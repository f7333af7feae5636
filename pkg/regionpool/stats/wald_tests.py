"""Wald statistics for equal distributions (ED) and local scaling (LS) on a set A."""

from __future__ import annotations

import logging
import warnings
from typing import Sequence

import numpy as np
from scipy import stats

from regionpool.domain.errors import DomainError, WaldTestError
from regionpool.domain.models import HypothesisSet, ParamCovariance, ScaleGevParams, StatisticKind, WaldResult
from regionpool.stats.uncertainty import stable_inverse

logger = logging.getLogger(__name__)


def _theta_matrix(theta_all) -> np.ndarray:
    if isinstance(theta_all, np.ndarray):
        return np.asarray(theta_all, dtype=float).reshape(-1, 4)
    return np.array([t.as_array() for t in theta_all], dtype=float)


def _locations(A) -> tuple[int, ...]:
    return A.A if isinstance(A, HypothesisSet) else tuple(sorted(int(d) for d in A))


def chi_square_upper_tail(x: float, df: int) -> float:
    if int(df) != df or df < 1:
        raise DomainError(f"degrees of freedom must be a positive integer, got {df}")
    if x < 0:
        raise DomainError("chi-square statistic must be nonnegative")
    return float(stats.chi2.sf(x, df))


# ====== EQUAL DISTRIBUTION ======
def h_of_theta(theta_all: Sequence[ScaleGevParams] | np.ndarray, A) -> np.ndarray:
    """Successive differences theta_{d_i} - theta_{d_i+1} over the sorted set A."""
    th = _theta_matrix(theta_all)[list(_locations(A))]
    return (th[:-1] - th[1:]).reshape(-1)


def jacobian_H(A, D: int) -> np.ndarray:
    A = _locations(A)
    k = len(A)
    H = np.zeros((4 * (k - 1), 4 * D))
    eye = np.eye(4)
    for i in range(k - 1):
        H[4 * i:4 * i + 4, 4 * A[i]:4 * A[i] + 4] = eye
        H[4 * i:4 * i + 4, 4 * A[i + 1]:4 * A[i + 1] + 4] = -eye
    return H


def _quadratic_form(h: np.ndarray, middle: np.ndarray, n: int, A) -> tuple[float, bool]:
    if not np.any(h):
        return 0.0, False
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            inv, used_pinv = stable_inverse(middle, what=f"Wald middle matrix for A={A}")
    except np.linalg.LinAlgError as e:
        raise WaldTestError(f"singular middle matrix for A={A}: {e}", A=A) from e
    if used_pinv:
        logger.warning("pseudo-inverse used for the Wald middle matrix of A=%s", A)
    t = float(n * h @ inv @ h)
    return max(t, 0.0), used_pinv


def wald_statistic_ed(theta_all, sigma: ParamCovariance, A, n: int) -> WaldResult:
    A = _locations(A)
    h = h_of_theta(theta_all, A)
    H = jacobian_H(A, sigma.D)
    middle = H @ sigma.full() @ H.T
    t, used_pinv = _quadratic_form(h, middle, n, A)
    df = 4 * (len(A) - 1)
    return WaldResult(statistic=t, df=df, asymptotic_p=chi_square_upper_tail(t, df), used_pinv=used_pinv)


# ====== LOCAL SCALING ======
def _ratios(th: np.ndarray) -> np.ndarray:
    mu, sigma, gamma, alpha = th.T
    return np.column_stack([mu / sigma, gamma, alpha / mu])


def _ratio_jacobian(th: np.ndarray) -> np.ndarray:
    mu, sigma, _, alpha = th
    return np.array([
        [1.0 / sigma, -mu / sigma**2, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [-alpha / mu**2, 0.0, 0.0, 1.0 / mu],
    ])


def g_of_theta_ls(theta_all, A) -> np.ndarray:
    """Successive differences of (mu/sigma, gamma, alpha/mu) over A."""
    th = _theta_matrix(theta_all)[list(_locations(A))]
    if np.any(th[:, :2] <= 0):
        raise DomainError("local-scaling constraints need positive mu and sigma")
    r = _ratios(th)
    return (r[:-1] - r[1:]).reshape(-1)


def jacobian_G_ls(theta_all, A) -> np.ndarray:
    th = _theta_matrix(theta_all)
    A = _locations(A)
    k = len(A)
    G = np.zeros((3 * (k - 1), 4 * th.shape[0]))
    for i in range(k - 1):
        a, b = A[i], A[i + 1]
        G[3 * i:3 * i + 3, 4 * a:4 * a + 4] = _ratio_jacobian(th[a])
        G[3 * i:3 * i + 3, 4 * b:4 * b + 4] = -_ratio_jacobian(th[b])
    return G


def wald_statistic_ls(theta_all, sigma: ParamCovariance, A, n: int) -> WaldResult:
    A = _locations(A)
    g = g_of_theta_ls(theta_all, A)
    G = jacobian_G_ls(theta_all, A)
    middle = G @ sigma.full() @ G.T
    t, used_pinv = _quadratic_form(g, middle, n, A)
    df = 3 * (len(A) - 1)
    return WaldResult(statistic=t, df=df, asymptotic_p=chi_square_upper_tail(t, df), used_pinv=used_pinv)


def wald_statistic(kind: StatisticKind, theta_all, sigma: ParamCovariance, A, n: int) -> WaldResult:
    if StatisticKind(kind) == StatisticKind.LS:
        return wald_statistic_ls(theta_all, sigma, A, n)
    return wald_statistic_ed(theta_all, sigma, A, n)
