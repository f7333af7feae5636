from __future__ import annotations

import logging
from pathlib import Path

import pandas as pd
from pydantic import BaseModel

from regionpool.domain.errors import DomainError, FitError, RegionPoolError
from regionpool.domain.models import BlockMaximaPanel, FitReport, StatisticKind
from regionpool.stats.gev_core import fit_local_scaling, fit_pooled_scale_gev, fit_scale_gev
from regionpool.utils.panel_io import read_panel
from regionpool.utils.reports import round_sig, write_report
from regionpool.utils.settings import RunConfig

logger = logging.getLogger(__name__)

REPORT_NAME = "fit"
PARAM_COLUMNS = ("mu", "sigma", "gamma", "alpha")


class FitRequest(BaseModel):
    panel: str
    out_dir: str = "."
    loi: str | None = None
    pool: tuple[str, ...] | None = None
    statistic: StatisticKind = StatisticKind.ED
    hessian: str = "numeric"


def _row(location_id: str, kind: str, report: FitReport | None = None, error: str = "") -> dict:
    row = {"location_id": location_id, "kind": kind}
    if report is None:
        row.update({c: None for c in PARAM_COLUMNS})
        row.update(nllh=None, converged=False, n=None, message=error)
        return row
    row.update({c: round_sig(getattr(report.params, c)) for c in PARAM_COLUMNS})
    row.update(nllh=round_sig(report.nllh, 8), converged=report.converged, n=report.n,
               message="; ".join(report.warnings))
    return row


def _pool_indices(panel: BlockMaximaPanel, pool) -> list[int]:
    try:
        return sorted(panel.index_of(loc) for loc in pool)
    except KeyError as e:
        raise DomainError(f"pooling set names {e.args[0]}") from None


def cmd_fit(req: FitRequest) -> tuple[Path, Path]:
    """Per-location scale-GEV fits, plus pooled and local-scaling rows for ``req.pool``.

    Failed locations get an error row; the report is still written and a
    FitError is raised afterwards.
    """
    panel = read_panel(req.panel, loi=req.loi)
    rows, failed = [], []

    for d, loc in enumerate(panel.location_ids):
        try:
            report = fit_scale_gev(panel.column(d), panel.covariate, hessian=req.hessian)
            rows.append(_row(loc, "local", report))
        except RegionPoolError as e:
            logger.error("fit failed for location '%s': %s", loc, e)
            rows.append(_row(loc, "local", error=str(e)))
            failed.append(loc)

    # a single location is its own pooled set
    pool = req.pool or (panel.location_ids if panel.D == 1 else None)
    ls_fit = None
    if pool:
        A = _pool_indices(panel, pool)
        label = ",".join(panel.location_ids[d] for d in A)
        try:
            rows.append(_row(label, "pooled", fit_pooled_scale_gev(panel, A, hessian=req.hessian)))
        except RegionPoolError as e:
            logger.error("pooled fit failed for %s: %s", label, e)
            rows.append(_row(label, "pooled", error=str(e)))
            failed.append(label)
        if req.statistic == StatisticKind.LS and len(A) >= 2:
            try:
                ls_fit = fit_local_scaling(panel, A)
                for d, params in zip(A, ls_fit.implied_params()):
                    rows.append({
                        "location_id": panel.location_ids[d],
                        "kind": "local_scaling",
                        **{c: round_sig(getattr(params, c)) for c in PARAM_COLUMNS},
                        "nllh": round_sig(ls_fit.nllh, 8),
                        "converged": ls_fit.converged,
                        "n": panel.n,
                        "message": ls_fit.message,
                    })
            except RegionPoolError as e:
                logger.error("local-scaling fit failed for %s: %s", label, e)
                failed.append(f"local scaling {label}")

    table = pd.DataFrame(rows)
    payload = {
        "panel": str(req.panel),
        "n_years": panel.n,
        "n_locations": panel.D,
        "loi": panel.location_ids[panel.loi],
        "pool": list(pool) if pool else None,
        "rows": table.to_dict(orient="records"),
        "local_scaling": None if ls_fit is None else {
            "delta": round_sig(ls_fit.delta), "eta": round_sig(ls_fit.eta), "gamma": round_sig(ls_fit.gamma),
        },
        "failed": failed,
    }
    paths = write_report(req.out_dir, REPORT_NAME, table, payload)
    if failed:
        raise FitError(f"fit failed for {len(failed)} item(s): {', '.join(failed)}",
                       diagnostics={"failed": failed})
    return paths


def handle(args, cfg: RunConfig) -> int:
    req = FitRequest(
        panel=args.panel,
        out_dir=args.out_dir,
        loi=cfg.loi,
        pool=cfg.pool,
        statistic=cfg.statistic,
        hessian=cfg.hessian,
    )
    try:
        cmd_fit(req)
    except RegionPoolError:
        raise
    except Exception as e:
        raise FitError(f"fit command failed: {e}") from e
    return 0


def register(subparsers, parents) -> None:
    p = subparsers.add_parser("fit", parents=parents, help="fit the scale-GEV model per location")
    p.set_defaults(handler=handle)
