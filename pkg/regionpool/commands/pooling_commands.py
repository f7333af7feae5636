from __future__ import annotations

import logging
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel

from regionpool.domain.errors import BootstrapError, DomainError, RegionPoolError
from regionpool.domain.models import AdjustMethod, BivEvSpec, BlockMaximaPanel, BootstrapConfig, PairTestRecord
from regionpool.stats.bootstrap_engine import bootstrap_global, bootstrap_pairwise
from regionpool.stats.dependence_models import empirical_extremal_coefficient, extremal_coefficient
from regionpool.stats.multiple_testing import recommend
from regionpool.utils.panel_io import read_panel
from regionpool.utils.reports import round_p, round_sig, write_report
from regionpool.utils.settings import RunConfig

logger = logging.getLogger(__name__)


class PairTestRequest(BaseModel):
    panel: str
    coords: str | None = None
    out_dir: str = "."
    loi: str | None = None
    bootstrap: Literal["ms", "biv"] = "ms"
    methods: tuple[AdjustMethod, ...] = (AdjustMethod.BH,)
    decide_with: AdjustMethod = AdjustMethod.BH
    alpha: float = 0.1
    config: BootstrapConfig = BootstrapConfig()


class GlobalTestRequest(BaseModel):
    panel: str
    coords: str | None = None
    out_dir: str = "."
    loi: str | None = None
    alpha: float = 0.1
    config: BootstrapConfig = BootstrapConfig()


def _rank_frechet(column: np.ndarray) -> np.ndarray:
    # margin-free unit-Frechet scores from ranks
    ranks = pd.Series(column).rank(method="average").to_numpy()
    return -1.0 / np.log(ranks / (len(column) + 1))


def _model_theta(record: PairTestRecord, panel: BlockMaximaPanel) -> float:
    spec = record.dependence.spec
    if panel.coords is None or isinstance(spec, BivEvSpec):
        return float(extremal_coefficient(spec))
    a, b = record.A.A
    return float(extremal_coefficient(spec, panel.coords[b] - panel.coords[a]))


def _bootstrap_meta(cfg: BootstrapConfig) -> dict:
    return {"B": cfg.B, "seed": cfg.seed, "statistic": cfg.statistic.value}


def cmd_test_pairs(req: PairTestRequest) -> tuple[Path, Path]:
    """Test every pair {loi, d} and recommend a pooling region."""
    panel = read_panel(req.panel, loi=req.loi, coords=req.coords)
    if panel.D < 2:
        raise DomainError("pairwise tests need at least two locations")
    loi = panel.loi
    partners = [d for d in range(panel.D) if d != loi]
    logger.info("testing %d pairs with the %s bootstrap (B=%d)", len(partners), req.bootstrap, req.config.B)

    try:
        if req.bootstrap == "ms":
            records = bootstrap_global(panel, [(loi, d) for d in partners], req.config)
        else:
            records = bootstrap_pairwise(panel, partners, req.config)
    except BootstrapError as e:
        if e.target is not None:
            partner = next((d for d in e.target if d != loi), None)
            if partner is not None:
                e.detail = f"partner '{panel.location_ids[partner]}': {e.detail}"
        raise

    report = recommend(records, req.decide_with, req.alpha, loi, panel.location_ids)
    rows = []
    for res, rec in zip(report.partners, records):
        row = {
            "partner": res.location_id,
            "observed_t": round_sig(res.observed_t, 6),
            "p_raw": round_p(res.p_raw),
        }
        for m in req.methods:
            if m != AdjustMethod.IM:
                row[f"p_{m.value}"] = round_p(res.adjusted[m])
        for m in req.methods:
            row[f"rejected_{m.value}"] = res.rejected[m]
        row.update(
            dependence=rec.dependence.family,
            theta_model=round_sig(_model_theta(rec, panel)),
            theta_empirical=round_sig(empirical_extremal_coefficient(
                _rank_frechet(panel.column(loi)), _rank_frechet(panel.column(res.partner)))),
            n_boot=int(rec.boot_ts.size),
            n_dropped=rec.n_dropped,
        )
        rows.append(row)

    regions = {}
    for m in req.methods:
        kept = [panel.location_ids[loi]] + [r.location_id for r in report.partners if not r.rejected[m]]
        regions[m.value] = kept
    payload = {
        "loi": report.loi_id,
        "alpha": req.alpha,
        "bootstrap": req.bootstrap,
        **_bootstrap_meta(req.config),
        "decided_with": report.method.value,
        "recommended": list(report.recommended_ids),
        "recommended_by_method": regions,
        "partners": rows,
    }
    return write_report(req.out_dir, "test_pairs", pd.DataFrame(rows), payload)


def cmd_test_global(req: GlobalTestRequest) -> tuple[Path, Path]:
    """One max-stable bootstrap test of homogeneity across every location."""
    panel = read_panel(req.panel, loi=req.loi, coords=req.coords)
    if panel.D < 2:
        raise DomainError("the global test needs at least two locations")
    (record,) = bootstrap_global(panel, [tuple(range(panel.D))], req.config)
    row = {
        "locations": ",".join(panel.location_ids),
        "observed_t": round_sig(record.observed_t, 6),
        "df": record.A.df,
        "p_raw": round_p(record.p_raw),
        "rejected": record.p_raw <= req.alpha,
        "dependence": record.dependence.family,
        "n_boot": int(record.boot_ts.size),
        "n_dropped": record.n_dropped,
    }
    payload = {
        "alpha": req.alpha,
        **_bootstrap_meta(req.config),
        "dependence_params": [round_sig(v) for v in record.dependence.spec.params],
        "result": row,
    }
    logger.info("global test T=%.3f p=%.4f", record.observed_t, record.p_raw)
    return write_report(req.out_dir, "test_global", pd.DataFrame([row]), payload)


def _guarded(fn, req) -> int:
    try:
        fn(req)
    except RegionPoolError:
        raise
    except Exception as e:
        raise BootstrapError(f"test command failed: {e}") from e
    return 0


def handle_pairs(args, cfg: RunConfig) -> int:
    req = PairTestRequest(
        panel=args.panel,
        coords=cfg.coords,
        out_dir=args.out_dir,
        loi=cfg.loi,
        bootstrap=cfg.bootstrap,
        methods=tuple(cfg.methods()),
        decide_with=cfg.primary_method(),
        alpha=cfg.alpha,
        config=cfg.bootstrap_config(),
    )
    return _guarded(cmd_test_pairs, req)


def handle_global(args, cfg: RunConfig) -> int:
    req = GlobalTestRequest(
        panel=args.panel,
        coords=cfg.coords,
        out_dir=args.out_dir,
        loi=cfg.loi,
        alpha=cfg.alpha,
        config=cfg.bootstrap_config(),
    )
    return _guarded(cmd_test_global, req)


def register(subparsers, parents) -> None:
    p = subparsers.add_parser("test-pairs", parents=parents, help="bootstrap tests of every pair with the LOI")
    p.set_defaults(handler=handle_pairs)
    p = subparsers.add_parser("test-global", parents=parents, help="bootstrap test of the whole panel")
    p.set_defaults(handler=handle_global)
