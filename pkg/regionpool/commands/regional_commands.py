from __future__ import annotations

import logging
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, model_validator

from regionpool.domain.errors import ConfigurationError, DomainError, FitError, RegionPoolError
from regionpool.domain.models import BlockMaximaPanel, DependenceFit, MaxStableFamily, ReturnSpec, ScaleGevParams
from regionpool.stats.dependence_models import select_max_stable
from regionpool.stats.gev_core import fit_pooled_scale_gev, to_frechet
from regionpool.stats.return_levels import (
    DEFAULT_B_SIM,
    independent_regional_rl,
    independent_regional_rp,
    local_rp,
    regional_rl_rp,
)
from regionpool.utils.panel_io import read_panel
from regionpool.utils.reports import round_sig, write_report
from regionpool.utils.settings import RunConfig

logger = logging.getLogger(__name__)

REPORT_NAME = "regional_rl"


class RegionalRequest(BaseModel):
    panel: str
    coords: str | None = None
    out_dir: str = "."
    pool: tuple[str, ...] | None = None
    T: float | None = None
    r: float | None = None
    reference_year: int
    dependence: Literal["fitted", "independent"] = "fitted"
    ms_families: tuple[MaxStableFamily, ...] = tuple(MaxStableFamily)
    B_sim: int = DEFAULT_B_SIM
    seed: int = 1
    jobs: int = 1
    hessian: Literal["numeric", "analytic"] = "numeric"

    @model_validator(mode="after")
    def _period_or_magnitude(self):
        if self.T is None and self.r is None:
            raise ValueError("give --T or --r")
        return self


def _region(panel: BlockMaximaPanel, pool) -> list[int]:
    if not pool:
        return list(range(panel.D))
    try:
        return sorted({panel.index_of(loc) for loc in pool})
    except KeyError as e:
        raise DomainError(f"pooling set names {e.args[0]}") from None


def _reference_c(panel: BlockMaximaPanel, year: int) -> float:
    years = panel.years if panel.years is not None else np.arange(1, panel.n + 1)
    hits = np.flatnonzero(years == year)
    if hits.size == 0:
        raise ConfigurationError(
            f"reference year {year} not in panel; available years: {years.min()}-{years.max()} "
            f"({', '.join(str(y) for y in years)})"
        )
    return float(panel.covariate.values[hits[0]])


def _fitted_dependence(panel: BlockMaximaPanel, A: list[int], pooled: ScaleGevParams, families) -> DependenceFit:
    """Max-stable fit on the region's columns, every column transformed with the pooled margins."""
    if panel.coords is None:
        raise ConfigurationError("fitted dependence needs --coords; use --dependence independent otherwise")
    frechet = np.column_stack([to_frechet(panel.column(d), pooled, panel.covariate) for d in A])
    return select_max_stable(frechet, panel.coords[A], families)


def cmd_regional_rl(req: RegionalRequest) -> tuple[Path, Path]:
    """Local RL, regional RP of that level and regional RL for one pooled region."""
    panel = read_panel(req.panel, coords=req.coords)
    A = _region(panel, req.pool)
    reference_c = _reference_c(panel, req.reference_year)
    pooled = fit_pooled_scale_gev(panel, A, hessian=req.hessian).params

    dependence = None
    if req.dependence == "fitted" and len(A) > 1:
        dependence = _fitted_dependence(panel, A, pooled, req.ms_families)
    coords = panel.coords[A] if panel.coords is not None else np.column_stack([np.arange(len(A)), np.zeros(len(A))])

    spec = ReturnSpec(T=req.T, r=req.r, reference_c=reference_c)
    est = regional_rl_rp(pooled, dependence, coords, spec, B_sim=req.B_sim, rng=req.seed, n_jobs=req.jobs)

    row = {
        "region": ",".join(panel.location_ids[d] for d in A),
        "n_sites": len(A),
        "reference_year": req.reference_year,
        "T": req.T,
        "r": round_sig(est.r),
        "rl_local": round_sig(est.rl_local),
        "rp_local": round_sig(local_rp(pooled, est.r, reference_c)),
        "rp_regional": round_sig(est.rp_regional),
        "rl_regional": round_sig(est.rl_regional),
        "rp_independent": round_sig(independent_regional_rp(pooled, est.r, reference_c, len(A))),
        "rl_independent": round_sig(independent_regional_rl(pooled, req.T, reference_c, len(A)))
        if req.T is not None else None,
        "dependence": est.dependence,
    }
    payload = {
        "pooled_params": {k: round_sig(v) for k, v in pooled.model_dump().items()},
        "dependence_params": None if dependence is None else [round_sig(v) for v in dependence.spec.params],
        "B_sim": est.B_sim,
        "seed": req.seed,
        "maxima_summary": {k: round_sig(v) for k, v in est.empirical_cdf_summary.items()},
        "result": row,
    }
    return write_report(req.out_dir, REPORT_NAME, pd.DataFrame([row]), payload)


def handle(args, cfg: RunConfig) -> int:
    req = RegionalRequest(
        panel=args.panel,
        coords=cfg.coords,
        out_dir=args.out_dir,
        pool=cfg.pool,
        T=args.T,
        r=args.r,
        reference_year=args.reference_year,
        dependence=args.dependence,
        ms_families=cfg.ms_families,
        B_sim=args.B_sim,
        seed=cfg.seed,
        jobs=cfg.jobs,
        hessian=cfg.hessian,
    )
    try:
        cmd_regional_rl(req)
    except RegionPoolError:
        raise
    except Exception as e:
        raise FitError(f"regional return level failed: {e}") from e
    return 0


def register(subparsers, parents) -> None:
    p = subparsers.add_parser("regional-rl", parents=parents, help="regional return level and period")
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--T", type=float, help="return period in years")
    target.add_argument("--r", type=float, help="event magnitude")
    p.add_argument("--reference-year", type=int, required=True)
    p.add_argument("--dependence", choices=("fitted", "independent"), default="fitted")
    p.add_argument("--B-sim", dest="B_sim", type=int, default=DEFAULT_B_SIM)
    p.set_defaults(handler=handle)
