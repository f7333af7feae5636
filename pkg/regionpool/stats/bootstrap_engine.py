"""Parametric bootstrap p-values for homogeneity hypotheses.

``bootstrap_global`` simulates whole fields from a max-stable model fitted to
all locations and can test any set A; ``bootstrap_pairwise`` fits a bivariate
extreme-value model per pair {loi, d}. Both generate bootstrap samples under
the null by mapping unit-Frechet simulations to the pooled (or local-scaling)
null fit, then recompute the Wald statistic on each replicate.
"""

from __future__ import annotations

import logging
import warnings
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed

from regionpool.domain.errors import BootstrapError, DomainError, RegionPoolError
from regionpool.domain.models import (
    BlockMaximaPanel,
    BootstrapConfig,
    DependenceFit,
    FitReport,
    HypothesisSet,
    PairTestRecord,
    ScaleGevParams,
    StatisticKind,
)
from regionpool.stats.dependence_models import select_biv_ev, select_max_stable, simulate_dependence
from regionpool.stats.gev_core import (
    fit_local_scaling,
    fit_pooled_scale_gev,
    fit_scale_gev,
    from_frechet,
    to_frechet,
)
from regionpool.stats.uncertainty import estimate_sigma
from regionpool.stats.wald_tests import wald_statistic

logger = logging.getLogger(__name__)

DROP_WARN_FRACTION = 0.05
_GLOBAL_STREAM = 1
_PAIR_STREAM = 2


def spawn_streams(seed: int, key: Sequence[int], count: int) -> list[np.random.Generator]:
    """Independent generators for replicates 0..count-1 under the counter path ``key``."""
    root = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    return [np.random.default_rng(child) for child in root.spawn(count)]


def compute_pvalue(observed: float, boots) -> float:
    boots = np.asarray(boots, dtype=float)
    if boots.size == 0:
        raise DomainError("no bootstrap statistics to compare against")
    return float(np.sum(observed <= boots) / (boots.size + 1))


# ====== SHARED STEPS ======
def _fit_columns(panel: BlockMaximaPanel, columns: Sequence[int], cfg: BootstrapConfig) -> dict[int, FitReport]:
    def one(d):
        try:
            return fit_scale_gev(panel.column(d), panel.covariate, hessian=cfg.hessian)
        except RegionPoolError as e:
            e.detail = f"location '{panel.location_ids[d]}': {e.detail}"
            raise

    reports = Parallel(n_jobs=cfg.n_jobs)(delayed(one)(d) for d in columns)
    return dict(zip(columns, reports))


def _sub_panel(maxima: np.ndarray, panel: BlockMaximaPanel, ids: Sequence[str]) -> BlockMaximaPanel:
    return BlockMaximaPanel(maxima=maxima, covariate=panel.covariate, location_ids=tuple(ids), loi=0)


def _statistic(
    maxima: np.ndarray,
    panel: BlockMaximaPanel,
    ids: Sequence[str],
    kind: StatisticKind,
    cfg: BootstrapConfig,
    starts: Sequence[ScaleGevParams] | None = None,
    reports: Sequence[FitReport] | None = None,
) -> float:
    """Wald statistic of the k columns in ``maxima`` (all of them form A)."""
    k = maxima.shape[1]
    sub = _sub_panel(maxima, panel, ids)
    if reports is None:
        reports = [
            fit_scale_gev(maxima[:, j], panel.covariate, start=starts[j] if starts else None, hessian=cfg.hessian)
            for j in range(k)
        ]
    params = [r.params for r in reports]
    sigma = estimate_sigma(sub, params, [r.hessian for r in reports])
    return wald_statistic(kind, params, sigma, tuple(range(k)), panel.n).statistic


def _null_fit(panel: BlockMaximaPanel, A: HypothesisSet, cfg: BootstrapConfig) -> tuple[ScaleGevParams, ...]:
    if A.kind == StatisticKind.LS:
        fit = fit_local_scaling(panel, A.A)
        return tuple(fit.implied_params())
    pooled = fit_pooled_scale_gev(panel, A.A, hessian=cfg.hessian).params
    return (pooled,) * A.k


def _replicate(
    field: np.ndarray,
    null_params: Sequence[ScaleGevParams],
    panel: BlockMaximaPanel,
    ids: Sequence[str],
    kind: StatisticKind,
    cfg: BootstrapConfig,
) -> float:
    """Statistic on one bootstrap sample; NaN marks a failed replicate."""
    try:
        maxima = np.column_stack([
            from_frechet(field[:, j], th, panel.covariate) for j, th in enumerate(null_params)
        ])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return _statistic(maxima, panel, ids, kind, cfg, starts=null_params)
    except (RegionPoolError, ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
        logger.debug("bootstrap replicate dropped: %s", e)
        return float("nan")


def _record(
    A: HypothesisSet,
    observed: float,
    boot: np.ndarray,
    dependence: DependenceFit,
    null_params: Sequence[ScaleGevParams],
    cfg: BootstrapConfig,
) -> PairTestRecord:
    ok = np.isfinite(boot)
    n_dropped = int(np.sum(~ok))
    if not ok.any():
        raise BootstrapError(f"all {cfg.B} bootstrap replicates failed for A={A.A}", target=A.A)
    if n_dropped > DROP_WARN_FRACTION * cfg.B:
        msg = f"{n_dropped} of {cfg.B} bootstrap replicates dropped for A={A.A}"
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        logger.warning(msg)
    survivors = boot[ok]
    return PairTestRecord(A=A, observed_t=observed, boot_ts=survivors, p_raw=compute_pvalue(observed, survivors),
                          dependence=dependence, null_fit=null_params[0], null_params=tuple(null_params),
                          n_dropped=n_dropped)


def _test_target(
    A: HypothesisSet,
    panel: BlockMaximaPanel,
    reports: dict[int, FitReport],
    fields: Sequence[np.ndarray],
    columns: Sequence[int],
    dependence: DependenceFit,
    cfg: BootstrapConfig,
) -> PairTestRecord:
    """Null fit, observed statistic and bootstrap statistics for one target.

    ``fields[b][:, columns.index(d)]`` holds the unit-Frechet sample of location d.
    """
    ids = [panel.location_ids[d] for d in A.A]
    try:
        null_params = _null_fit(panel, A, cfg)
        observed = _statistic(panel.maxima[:, A.A], panel, ids, A.kind, cfg, reports=[reports[d] for d in A.A])
    except RegionPoolError as e:
        raise BootstrapError(f"A={A.A}: {e.detail}", target=A.A) from e

    pos = [list(columns).index(d) for d in A.A]
    boot = Parallel(n_jobs=cfg.n_jobs)(
        delayed(_replicate)(field[:, pos], null_params, panel, ids, A.kind, cfg) for field in fields
    )
    record = _record(A, observed, np.asarray(boot, dtype=float), dependence, null_params, cfg)
    logger.info("A=%s t=%.3f p=%.4f (%s)", A.A, observed, record.p_raw, dependence.family)
    return record


def _frechet_columns(panel: BlockMaximaPanel, reports: dict[int, FitReport], columns: Sequence[int]) -> np.ndarray:
    return np.column_stack([to_frechet(panel.column(d), reports[d].params, panel.covariate) for d in columns])


def _as_targets(targets, kind: StatisticKind, D: int) -> list[HypothesisSet]:
    out = []
    for t in targets:
        A = t if isinstance(t, HypothesisSet) else HypothesisSet(A=tuple(t), kind=kind)
        if A.kind != kind:
            A = HypothesisSet(A=A.A, kind=kind)
        if A.A[-1] >= D:
            raise DomainError(f"target {A.A} out of range for {D} locations")
        out.append(A)
    return out


# ====== PROCEDURES ======
def bootstrap_global(panel: BlockMaximaPanel, targets, cfg: BootstrapConfig) -> list[PairTestRecord]:
    """Max-stable bootstrap: one dependence fit and one set of B fields serve every target."""
    if panel.coords is None:
        raise DomainError("the max-stable bootstrap needs location coordinates")
    if panel.D < 2:
        raise DomainError("at least two locations are needed")
    targets = _as_targets(targets, cfg.statistic, panel.D)
    columns = list(range(panel.D))

    reports = _fit_columns(panel, columns, cfg)
    frechet = _frechet_columns(panel, reports, columns)
    dependence = select_max_stable(frechet, panel.coords, cfg.ms_families)

    streams = spawn_streams(cfg.seed, (_GLOBAL_STREAM,), cfg.B)
    fields = Parallel(n_jobs=cfg.n_jobs)(
        delayed(simulate_dependence)(dependence.spec, panel.coords, panel.n, rng) for rng in streams
    )
    return [_test_target(A, panel, reports, fields, columns, dependence, cfg) for A in targets]


def bootstrap_pairwise(panel: BlockMaximaPanel, partners: Sequence[int], cfg: BootstrapConfig) -> list[PairTestRecord]:
    """Bivariate bootstrap on each pair {loi, d}; every pair has its own dependence fit and streams."""
    loi = panel.loi
    partners = [int(d) for d in partners]
    if loi in partners:
        raise DomainError("partners must exclude the location of interest")
    if any(not 0 <= d < panel.D for d in partners):
        raise DomainError(f"partners {partners} out of range for {panel.D} locations")

    reports = _fit_columns(panel, sorted({loi, *partners}), cfg)
    records = []
    for d in partners:
        A = HypothesisSet(A=(loi, d), kind=cfg.statistic)
        columns = list(A.A)
        pair = _frechet_columns(panel, reports, columns)
        try:
            dependence = select_biv_ev(pair, cfg.biv_families)
        except RegionPoolError as e:
            raise BootstrapError(f"A={A.A}: {e.detail}", target=A.A) from e
        streams = spawn_streams(cfg.seed, (_PAIR_STREAM, d), cfg.B)
        fields = [simulate_dependence(dependence.spec, None, panel.n, rng) for rng in streams]
        records.append(_test_target(A, panel, reports, fields, columns, dependence, cfg))
    return records
