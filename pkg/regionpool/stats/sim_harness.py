"""Monte Carlo study of the pooling procedures on the 4x4 grid.

Each replication simulates a panel, runs the requested procedures and records
one decision row per (procedure, method, partner) together with the 100-year
return-level estimate of every pooling method. Metrics are tallied from those
tables only, so they can be recomputed from the serialized decisions.
"""

from __future__ import annotations

import itertools
import logging
import warnings
from typing import Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from regionpool.domain.errors import RegionPoolError
from regionpool.domain.models import (
    A_DEV_LARGE,
    A_DEV_SMALL,
    DEVIATION_GRID,
    AdjustMethod,
    BlockMaximaPanel,
    BootstrapConfig,
    CovariateSeries,
    Procedure,
    Scenario,
    StudyMetrics,
)
from regionpool.stats.bootstrap_engine import bootstrap_global, bootstrap_pairwise
from regionpool.stats.dependence_models import simulate_max_stable
from regionpool.stats.gev_core import fit_pooled_scale_gev, from_frechet
from regionpool.stats.multiple_testing import adjust
from regionpool.stats.return_levels import local_rl

logger = logging.getLogger(__name__)

RETURN_PERIOD = 100.0
COVARIATE_END = 0.925
DATA_STREAM = 4
BOOT_STREAM = 5
DECISION_COLUMNS = ["rep", "procedure", "method", "partner", "deviating", "p_raw", "p_adjusted", "rejected"]
RL_COLUMNS = ["rep", "pooling", "rl"]


# ====== SCENARIOS ======
def simulation_covariate(n: int, end: float = COVARIATE_END, curvature: float = 2.5) -> CovariateSeries:
    """Smooth increasing series from 0 to ``end``, shaped like a warming anomaly."""
    s = np.linspace(0.0, 1.0, n)
    return CovariateSeries(values=end * np.expm1(curvature * s) / np.expm1(curvature))


def _covariate(s: Scenario) -> CovariateSeries:
    return s.covariate if s.covariate is not None else simulation_covariate(s.n)


def desk_scenarios(a_dev: tuple[int, ...] = A_DEV_SMALL, n: int = 75) -> list[Scenario]:
    """Corners and centre of the (c_mu, c_sigma) face plus one mid-strength deviation."""
    points = [(0.0, 1.0), (-3.0, 0.7), (-3.0, 1.3), (3.0, 0.7), (3.0, 1.3), (1.5, 1.0)]
    return [Scenario(n=n, a_dev=a_dev, deviation=(c_mu, c_sigma, 0.0, 0.0)) for c_mu, c_sigma in points]


def full_sweep(a_dev: tuple[int, ...] | None = None, n: int = 75) -> list[Scenario]:
    """The homogeneous model plus every grid deviation (224 per deviating set).

    ``a_dev=None`` sweeps both deviating sets, 449 models in total.
    """
    sets = (A_DEV_SMALL, A_DEV_LARGE) if a_dev is None else (tuple(a_dev),)
    out = [Scenario(n=n)]
    msg = f"the full sweep runs {1 + 224 * len(sets)} models; expect a very long runtime"
    warnings.warn(msg, RuntimeWarning, stacklevel=2)
    logger.warning(msg)
    for a_dev in sets:
        for dev in itertools.product(*DEVIATION_GRID.values()):
            if np.allclose(dev, (0.0, 1.0, 0.0, 0.0)):
                continue
            out.append(Scenario(n=n, a_dev=a_dev, deviation=dev))
    return out


def generate_scenario_data(s: Scenario, rng: np.random.Generator) -> BlockMaximaPanel:
    covariate = _covariate(s)
    coords = s.coords()
    fields = simulate_max_stable(s.dependence, coords, s.n, rng)
    maxima = np.column_stack([
        from_frechet(fields[:, d], theta, covariate) for d, theta in enumerate(s.location_params())
    ])
    return BlockMaximaPanel(maxima=maxima, covariate=covariate, coords=coords,
                            location_ids=tuple(str(d + 1) for d in range(s.D)), loi=s.loi_index,
                            years=np.arange(1, s.n + 1))


def true_return_level(s: Scenario) -> float:
    return local_rl(s.base_params, RETURN_PERIOD, float(_covariate(s).values[-1]))


# ====== ONE REPLICATION ======
def _pooled_rl(panel: BlockMaximaPanel, A, reference_c: float) -> float:
    fit = fit_pooled_scale_gev(panel, A, hessian="analytic")
    return local_rl(fit.params, RETURN_PERIOD, reference_c)


def _decision_rows(rep, procedure, records, loi, dev, methods, alpha):
    partners = [next(d for d in r.A.A if d != loi) for r in records]
    raw = np.array([r.p_raw for r in records])
    rows, regions = [], {}
    for method in methods:
        adj = adjust(raw, method, alpha)
        for d, p, pa, rej in zip(partners, raw, adj.adjusted, adj.rejected):
            rows.append(dict(rep=rep, procedure=procedure.value, method=method.value, partner=d + 1,
                             deviating=d in dev, p_raw=float(p), p_adjusted=float(pa), rejected=bool(rej)))
        regions[method] = [loi] + [d for d, rej in zip(partners, adj.rejected) if not rej]
    return rows, regions


def simulate_replication(
    s: Scenario,
    rep: int,
    cfg: BootstrapConfig,
    procedures: Sequence[Procedure],
    methods: Sequence[AdjustMethod],
    alpha: float,
) -> tuple[list[dict], list[dict]]:
    """Decision rows and return-level rows of replication ``rep``."""
    data_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(DATA_STREAM, rep)))
    boot_seed = int(np.random.SeedSequence(cfg.seed, spawn_key=(BOOT_STREAM, rep)).generate_state(1)[0])
    rep_cfg = cfg.model_copy(update={"seed": boot_seed, "n_jobs": 1})
    panel = generate_scenario_data(s, data_rng)
    loi, dev = s.loi_index, set(s.a_dev_index)
    pairs = [(loi, d) for d in range(s.D) if d != loi]
    reference_c = float(panel.covariate.values[-1])
    procedures = [Procedure(p) for p in procedures]
    methods = [AdjustMethod(m) for m in methods]

    decisions: list[dict] = []
    rls = [dict(rep=rep, pooling="LOI", rl=_pooled_rl(panel, [loi], reference_c)),
           dict(rep=rep, pooling="full", rl=_pooled_rl(panel, range(s.D), reference_c))]

    targets = []
    if Procedure.B1 in procedures:
        targets.append(tuple(range(s.D)))
    if Procedure.B2 in procedures:
        targets.extend(pairs)
    if targets:
        records = bootstrap_global(panel, targets, rep_cfg)
        if Procedure.B1 in procedures:
            glob, records = records[0], records[1:]
            decisions.append(dict(rep=rep, procedure="B1", method="im", partner=0, deviating=bool(dev),
                                  p_raw=glob.p_raw, p_adjusted=glob.p_raw, rejected=glob.p_raw <= alpha))
        if Procedure.B2 in procedures:
            rows, regions = _decision_rows(rep, Procedure.B2, records, loi, dev, methods, alpha)
            decisions.extend(rows)
            for method, region in regions.items():
                rls.append(dict(rep=rep, pooling=f"MS-{method.value}", rl=_pooled_rl(panel, region, reference_c)))
    if Procedure.B3 in procedures:
        records = bootstrap_pairwise(panel, [d for _, d in pairs], rep_cfg)
        rows, regions = _decision_rows(rep, Procedure.B3, records, loi, dev, methods, alpha)
        decisions.extend(rows)
        for method, region in regions.items():
            rls.append(dict(rep=rep, pooling=f"biv-{method.value}", rl=_pooled_rl(panel, region, reference_c)))
    return decisions, rls


def _safe_replication(*args):
    try:
        return simulate_replication(*args)
    except RegionPoolError as e:
        logger.warning("replication %s failed: %s", args[1], e)
        return None


# ====== STUDY ======
def collect_decisions(
    s: Scenario,
    reps: int,
    cfg: BootstrapConfig,
    procedures: Sequence[Procedure] = tuple(Procedure),
    methods: Sequence[AdjustMethod] = tuple(AdjustMethod),
    alpha: float = 0.1,
) -> tuple[pd.DataFrame, pd.DataFrame, int]:
    """Run ``reps`` replications in parallel; returns (decisions, rl estimates, failed count)."""
    if reps < 1:
        raise ValueError("reps must be at least 1")
    results = Parallel(n_jobs=cfg.n_jobs)(
        delayed(_safe_replication)(s, rep, cfg, procedures, methods, alpha) for rep in range(reps)
    )
    ok = [r for r in results if r is not None]
    decisions = pd.DataFrame([row for d, _ in ok for row in d], columns=DECISION_COLUMNS)
    rls = pd.DataFrame([row for _, r in ok for row in r], columns=RL_COLUMNS)
    return decisions, rls, len(results) - len(ok)


def tally_metrics(decisions: pd.DataFrame, rls: pd.DataFrame, truth_rl: float, n_failed: int = 0) -> StudyMetrics:
    """StudyMetrics from the decision and return-level tables (FDR uses 0/0 = 0)."""
    reps = int(pd.concat([decisions["rep"], rls["rep"]]).nunique())
    metrics = StudyMetrics(reps=reps, n_failed=n_failed)

    b1 = decisions[decisions["procedure"] == "B1"]
    if len(b1):
        metrics.level_or_power = float(b1["rejected"].mean())

    pairwise = decisions[decisions["procedure"] != "B1"]
    for (procedure, method), grp in pairwise.groupby(["procedure", "method"], sort=True):
        per_rep = grp.groupby("rep").apply(_rep_rates, include_groups=False)
        key = f"{procedure}-{method}"
        metrics.fdr[key] = float(per_rep["fdr"].mean())
        metrics.fwer[key] = float(per_rep["fwer"].mean())
        power = per_rep["power"].dropna()
        if len(power):
            metrics.power[key] = float(power.mean())

    for pooling, grp in rls.groupby("pooling", sort=True):
        metrics.mse_by_method[pooling] = float(np.mean((grp["rl"].to_numpy() - truth_rl) ** 2))
    return metrics


def _rep_rates(grp: pd.DataFrame) -> pd.Series:
    rejected = grp["rejected"].astype(bool)
    deviating = grp["deviating"].astype(bool)
    false_rej = int((rejected & ~deviating).sum())
    total_rej = int(rejected.sum())
    n_dev = int(deviating.sum())
    return pd.Series({
        "fdr": false_rej / total_rej if total_rej else 0.0,
        "fwer": float(false_rej > 0),
        "power": (rejected & deviating).sum() / n_dev if n_dev else np.nan,
    })


def run_study(
    s: Scenario,
    reps: int,
    cfg: BootstrapConfig,
    procedures: Sequence[Procedure] = tuple(Procedure),
    methods: Sequence[AdjustMethod] = tuple(AdjustMethod),
    alpha: float = 0.1,
) -> StudyMetrics:
    decisions, rls, n_failed = collect_decisions(s, reps, cfg, procedures, methods, alpha)
    if n_failed:
        logger.warning("%d of %d replications failed", n_failed, reps)
    return tally_metrics(decisions, rls, true_return_level(s), n_failed)


# ====== REPORTING ======
def _scenario_fields(s: Scenario) -> dict:
    c_mu, c_sigma, c_gamma, c_alpha = s.deviation
    return dict(a_dev_size=len(s.a_dev), c_mu=c_mu, c_sigma=c_sigma, c_gamma=c_gamma, c_alpha=c_alpha, n=s.n)


def metrics_frame(results: Sequence[tuple[Scenario, StudyMetrics]]) -> pd.DataFrame:
    """Tidy table, one row per scenario."""
    rows = []
    for s, m in results:
        row = _scenario_fields(s)
        level = np.nan if m.level_or_power is None else m.level_or_power
        row.update(reps=m.reps, n_failed=m.n_failed, level_or_power=level)
        for name in ("fdr", "fwer", "power"):
            row.update({f"{name}_{k}": v for k, v in getattr(m, name).items()})
        row.update({f"mse_{k}": v for k, v in m.mse_by_method.items()})
        rows.append(row)
    return pd.DataFrame(rows)


def heatmap_rows(results: Sequence[tuple[Scenario, StudyMetrics]]) -> pd.DataFrame:
    """Long format keyed by (c_mu, c_sigma, c_gamma, c_alpha), one value per metric."""
    tidy = metrics_frame(results)
    keys = list(_scenario_fields(results[0][0]).keys()) if results else []
    return tidy.drop(columns=["reps", "n_failed"]).melt(id_vars=keys, var_name="metric", value_name="value").dropna()


def summarize(results: Sequence[tuple[Scenario, StudyMetrics]]) -> pd.DataFrame:
    """Minimum, maximum and mean of every metric across scenarios."""
    if not results:
        raise ValueError("nothing to summarize")
    tidy = metrics_frame(results)
    metric_cols = [c for c in tidy.columns if c.split("_")[0] in ("fdr", "fwer", "power", "mse", "level")]
    out = tidy[metric_cols].agg(["min", "max", "mean"]).T
    out.index.name = "metric"
    return out.reset_index().sort_values("metric", ignore_index=True)


def mse_difference(metrics: StudyMetrics, first: str, second: str) -> float:
    """MSE(first) - MSE(second); negative favours ``first``."""
    return metrics.mse_by_method[first] - metrics.mse_by_method[second]
