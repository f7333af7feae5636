from __future__ import annotations

import logging
from pathlib import Path
from typing import Literal

import pandas as pd
from pydantic import BaseModel, Field

from regionpool.domain.errors import FitError, RegionPoolError
from regionpool.domain.models import (
    A_DEV_LARGE,
    A_DEV_SMALL,
    AdjustMethod,
    BootstrapConfig,
    Procedure,
    Scenario,
)
from regionpool.stats.sim_harness import (
    collect_decisions,
    desk_scenarios,
    full_sweep,
    heatmap_rows,
    metrics_frame,
    summarize,
    tally_metrics,
    true_return_level,
)
from regionpool.utils.reports import write_report
from regionpool.utils.settings import RunConfig

logger = logging.getLogger(__name__)

A_DEV_SETS = {"2": (A_DEV_SMALL,), "7": (A_DEV_LARGE,), "both": (A_DEV_SMALL, A_DEV_LARGE)}
STUDY_B = 99


class StudyConfig(BaseModel):
    scenarios: Literal["desk", "full"] = "desk"
    a_dev: Literal["2", "7", "both"] = "2"
    reps: int = Field(default=200, ge=1)
    n: int = Field(default=75, ge=20)
    procedures: tuple[Procedure, ...] = tuple(Procedure)
    methods: tuple[AdjustMethod, ...] = tuple(AdjustMethod)
    alpha: float = 0.1
    out_dir: str = "."
    bootstrap: BootstrapConfig = BootstrapConfig(B=STUDY_B)


def study_scenarios(cfg: StudyConfig) -> list[Scenario]:
    sets = A_DEV_SETS[cfg.a_dev]
    if cfg.scenarios == "desk":
        return [s for a_dev in sets for s in desk_scenarios(a_dev, n=cfg.n)]
    return full_sweep(sets[0] if len(sets) == 1 else None, n=cfg.n)


def cmd_simulate(cfg: StudyConfig) -> list[Path]:
    """Run the study over the chosen scenarios; writes metrics, summary, heatmap and decision tables."""
    sets = A_DEV_SETS[cfg.a_dev]
    scenarios = study_scenarios(cfg)
    logger.info("simulating %d scenarios x %d replications (B=%d)", len(scenarios), cfg.reps, cfg.bootstrap.B)

    results, decision_tables = [], []
    for i, s in enumerate(scenarios):
        decisions, rls, n_failed = collect_decisions(s, cfg.reps, cfg.bootstrap, cfg.procedures, cfg.methods,
                                                     cfg.alpha)
        metrics = tally_metrics(decisions, rls, true_return_level(s), n_failed)
        results.append((s, metrics))
        decision_tables.append(decisions.assign(scenario=i, c_mu=s.deviation[0], c_sigma=s.deviation[1],
                                                c_gamma=s.deviation[2], c_alpha=s.deviation[3]))
        logger.info("scenario %d/%d deviation=%s done (%d failed)", i + 1, len(scenarios), s.deviation, n_failed)

    meta = {
        "scenarios": cfg.scenarios,
        "a_dev": [list(a_dev) for a_dev in sets],
        "reps": cfg.reps,
        "n": cfg.n,
        "B": cfg.bootstrap.B,
        "seed": cfg.bootstrap.seed,
        "alpha": cfg.alpha,
        "procedures": [p.value for p in cfg.procedures],
        "methods": [m.value for m in cfg.methods],
    }
    tidy = metrics_frame(results)
    summary = summarize(results)
    paths = []
    paths += write_report(cfg.out_dir, "simulate", tidy, {**meta, "metrics": [m for _, m in results]})
    paths += write_report(cfg.out_dir, "simulate_summary", summary, {**meta, "rows": summary.to_dict(orient="records")})
    paths += write_report(cfg.out_dir, "simulate_heatmap", heatmap_rows(results), meta)
    paths += write_report(cfg.out_dir, "simulate_decisions", pd.concat(decision_tables, ignore_index=True), meta)
    return paths


def handle(args, cfg: RunConfig) -> int:
    study = StudyConfig(
        scenarios=args.scenarios,
        a_dev=args.a_dev,
        reps=args.reps,
        n=args.n,
        procedures=tuple(args.procedures.split(",")),
        methods=tuple(AdjustMethod) if args.methods is None else tuple(args.methods.split(",")),
        alpha=cfg.alpha,
        out_dir=args.out_dir,
        bootstrap=cfg.bootstrap_config().model_copy(update={"B": cfg.replicates_or(STUDY_B)}),
    )
    try:
        cmd_simulate(study)
    except RegionPoolError:
        raise
    except Exception as e:
        raise FitError(f"simulation failed: {e}") from e
    return 0


def register(subparsers, parents) -> None:
    p = subparsers.add_parser("simulate", parents=parents, help="Monte Carlo study on the 4x4 grid")
    p.add_argument("--scenarios", choices=("desk", "full"), default="desk")
    p.add_argument("--a-dev", dest="a_dev", choices=tuple(A_DEV_SETS), default="2",
                   help="deviating set: 2 = {4,8}, 7 = {1,2,3,4,8,12,16}, both = one after the other")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--n", type=int, default=75)
    p.add_argument("--procedures", default="B1,B2,B3")
    p.add_argument("--methods", default=None, help="comma separated subset of im,holm,bh (default: all three)")
    p.set_defaults(handler=handle)
