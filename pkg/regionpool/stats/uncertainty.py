"""Joint covariance of the per-location scale-GEV estimators.

Sigma[j, k] = J_j^-1 C[j, k] J_k^-1 where J_d is the Hessian of the mean
log-likelihood at location d and C[j, k] averages B_c T^-1 Gamma[j, k] T^-1 B_c'
over the years, Gamma[j, k] being the empirical cross-covariance of the
standardized scores.
"""

from __future__ import annotations

import logging
import warnings
from typing import Sequence

import numpy as np
from scipy import linalg

from regionpool.domain.errors import CovarianceError
from regionpool.domain.models import (
    BlockMaximaPanel,
    ParamCovariance,
    ScaleGevParams,
    StandardizedResiduals,
)
from regionpool.stats.gev_core import effective_arrays, chain_matrix, mean_hessian, standardized_score

logger = logging.getLogger(__name__)

PINV_RTOL = 1e-12


def stable_inverse(matrix: np.ndarray, what: str = "matrix") -> tuple[np.ndarray, bool]:
    """Inverse through a Cholesky factor of M or -M; pseudo-inverse when near singular.

    Returns (inverse, used_pinv). Raises LinAlgError for non-finite or zero input.
    """
    M = np.asarray(matrix, dtype=float)
    M = 0.5 * (M + M.T)
    if not np.all(np.isfinite(M)):
        raise np.linalg.LinAlgError(f"{what} has non-finite entries")
    eig = np.abs(np.linalg.eigvalsh(M))
    if eig.max() == 0:
        raise np.linalg.LinAlgError(f"{what} is zero")
    if eig.min() < PINV_RTOL * eig.max():
        msg = f"{what} is near singular; pseudo-inverse used"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        logger.warning(msg)
        return np.linalg.pinv(M, hermitian=True), True
    eye = np.eye(M.shape[0])
    for sign in (1.0, -1.0):
        try:
            factor = linalg.cho_factor(sign * M)
        except linalg.LinAlgError:
            continue
        return sign * linalg.cho_solve(factor, eye), False
    return np.linalg.inv(M), False


def standardized_residuals(panel: BlockMaximaPanel, fits: Sequence[ScaleGevParams]) -> StandardizedResiduals:
    c = panel.covariate.values
    z = np.empty_like(panel.maxima)
    for d, theta in enumerate(fits):
        mu_c, sigma_c = effective_arrays(theta.as_array(), c)
        z[:, d] = (panel.maxima[:, d] - mu_c) / sigma_c
    return StandardizedResiduals(z=z)


def estimate_sigma(
    panel: BlockMaximaPanel,
    fits: Sequence[ScaleGevParams],
    hessians: Sequence[np.ndarray] | None = None,
) -> ParamCovariance:
    """Sandwich covariance of all D estimators; analytic Hessians when none are given."""
    if len(fits) != panel.D:
        raise CovarianceError(f"expected {panel.D} fits, got {len(fits)}")
    if hessians is None:
        hessians = [mean_hessian(panel.column(d), panel.covariate, th) for d, th in enumerate(fits)]
    n, D = panel.n, panel.D
    c = panel.covariate.values
    z = standardized_residuals(panel, fits).z

    notes: list[str] = []
    J_inv = np.empty((D, 4, 4))
    for d in range(D):
        label = panel.location_ids[d]
        H = np.asarray(hessians[d], dtype=float)
        if not np.all(np.isfinite(H)) or np.linalg.matrix_rank(H) < 4:
            raise CovarianceError(f"Hessian at location '{label}' is singular", location=label)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                J_inv[d], used_pinv = stable_inverse(H, what=f"Hessian at location '{label}'")
        except np.linalg.LinAlgError as e:
            raise CovarianceError(str(e), location=label) from e
        if used_pinv:
            note = f"pseudo-inverse used for the Hessian at location '{label}'"
            logger.warning(note)
            notes.append(note)

    # standardized score samples, centred, shape (D, n, 3)
    S = np.stack([standardized_score(z[:, d], fits[d].gamma) for d in range(D)])
    S = S - S.mean(axis=1, keepdims=True)
    Gamma = np.einsum("jta,ktb->jkab", S, S) / n

    # M_d(t) = B_c(t) T_d(t)^-1, shape (D, n, 4, 3)
    M = np.empty((D, n, 4, 3))
    for d, theta in enumerate(fits):
        _, sigma_c = effective_arrays(theta.as_array(), c)
        tinv = np.stack([1.0 / sigma_c, 1.0 / sigma_c, np.ones(n)], axis=-1)
        M[d] = chain_matrix(c, theta) * tinv[:, None, :]
    C = np.einsum("jtia,jkab,ktcb->jkic", M, Gamma, M, optimize=True) / n

    blocks = np.einsum("jab,jkbc,kcd->jkad", J_inv, C, J_inv, optimize=True)
    full = blocks.transpose(0, 2, 1, 3).reshape(4 * D, 4 * D)
    full = 0.5 * (full + full.T)
    blocks = full.reshape(D, 4, D, 4).transpose(0, 2, 1, 3)
    return ParamCovariance(blocks=blocks, n=n, warnings=notes)


def pairwise_block(sigma: ParamCovariance, A) -> np.ndarray:
    """Sub-matrix of the full covariance restricted to the (sorted) locations in A."""
    A = sorted(int(d) for d in A)
    idx = np.concatenate([np.arange(4 * d, 4 * d + 4) for d in A])
    return sigma.full()[np.ix_(idx, idx)]
