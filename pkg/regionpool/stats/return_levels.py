"""Local and regional return levels / periods under the scale-GEV model."""

from __future__ import annotations

import logging
import warnings

import numpy as np
from joblib import Parallel, delayed

from regionpool.domain.errors import DomainError
from regionpool.domain.models import (
    BivEvSpec,
    DependenceFit,
    MaxStableSpec,
    RegionalEstimate,
    ReturnSpec,
    ScaleGevParams,
)
from regionpool.stats.dependence_models import simulate_dependence
from regionpool.stats.gev_core import effective_params, from_frechet, gev_cdf, gev_quantile

logger = logging.getLogger(__name__)

DEFAULT_B_SIM = 100_000
MIN_B_SIM = 1000
BATCH_SIZE = 10_000
SUMMARY_LEVELS = (0.5, 0.9, 0.99, 0.999)


def _check_period(T: float) -> None:
    if not T > 1:
        raise DomainError(f"return period must exceed 1, got {T}")


def local_rl(theta: ScaleGevParams, T: float, reference_c: float) -> float:
    _check_period(T)
    return float(gev_quantile(1.0 - 1.0 / T, effective_params(theta, reference_c)))


def local_rp(theta: ScaleGevParams, r: float, reference_c: float) -> float:
    G = float(gev_cdf(r, effective_params(theta, reference_c)))
    return np.inf if G >= 1.0 else 1.0 / (1.0 - G)


def independent_regional_rp(theta: ScaleGevParams, r: float, reference_c: float, D: int) -> float:
    """Return period of exceeding r somewhere among D independent, identically distributed sites."""
    G = float(gev_cdf(r, effective_params(theta, reference_c)))
    p = 1.0 - G**D
    return np.inf if p <= 0 else 1.0 / p


def independent_regional_rl(theta: ScaleGevParams, T: float, reference_c: float, D: int) -> float:
    _check_period(T)
    return float(gev_quantile((1.0 - 1.0 / T) ** (1.0 / D), effective_params(theta, reference_c)))


def _batch_maxima(spec, coords, size: int, seed_seq: np.random.SeedSequence, theta, reference_c) -> np.ndarray:
    rng = np.random.default_rng(seed_seq)
    fields = simulate_dependence(spec, coords, size, rng)
    covariate = np.full(fields.shape[1], reference_c)
    return from_frechet(fields, theta, covariate).max(axis=1)


def regional_rl_rp(
    pooled_fit: ScaleGevParams,
    dependence: MaxStableSpec | BivEvSpec | DependenceFit | None,
    coords,
    spec: ReturnSpec,
    B_sim: int = DEFAULT_B_SIM,
    rng: np.random.Generator | int = 0,
    n_jobs: int = 1,
) -> RegionalEstimate:
    """Simulate region-wide maxima in the reference climate and read off RL / RP.

    ``dependence=None`` treats the sites as independent. When only T is given,
    the regional return period is evaluated at the local return level.
    """
    if isinstance(dependence, DependenceFit):
        dependence = dependence.spec
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2 or len(coords) < 1:
        raise DomainError("coords must be a D x 2 matrix")
    if isinstance(dependence, BivEvSpec) and len(coords) != 2:
        raise DomainError(f"bivariate {dependence.family.value} model covers 2 sites, region has {len(coords)}")
    if B_sim < 1:
        raise DomainError("B_sim must be positive")
    if B_sim < MIN_B_SIM:
        msg = f"B_sim={B_sim} below {MIN_B_SIM}; empirical quantiles will be noisy"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        logger.warning(msg)

    seed = int(rng.integers(2**63 - 1)) if isinstance(rng, np.random.Generator) else int(rng)
    sizes = [BATCH_SIZE] * (B_sim // BATCH_SIZE) + ([B_sim % BATCH_SIZE] if B_sim % BATCH_SIZE else [])
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    batches = Parallel(n_jobs=n_jobs)(
        delayed(_batch_maxima)(dependence, coords, size, child, pooled_fit, spec.reference_c)
        for size, child in zip(sizes, children)
    )
    maxima = np.concatenate(batches)

    rl_local = local_rl(pooled_fit, spec.T, spec.reference_c) if spec.T is not None else None
    rl_regional = float(np.quantile(maxima, 1.0 - 1.0 / spec.T)) if spec.T is not None else None
    r = spec.r if spec.r is not None else rl_local
    exceed = float(np.mean(maxima > r))
    rp_regional = np.inf if exceed == 0 else 1.0 / exceed

    summary = {f"q{level}": float(np.quantile(maxima, level)) for level in SUMMARY_LEVELS}
    summary.update(min=float(maxima.min()), max=float(maxima.max()), mean=float(maxima.mean()))
    label = "independent" if dependence is None else dependence.family.value
    logger.info("regional RL=%s RP=%s over %d sites (%s)", rl_regional, rp_regional, len(coords), label)
    return RegionalEstimate(rl_regional=rl_regional, rp_regional=rp_regional, rl_local=rl_local, r=r,
                            B_sim=B_sim, n_sites=len(coords), dependence=label, empirical_cdf_summary=summary)
