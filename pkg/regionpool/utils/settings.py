"""Run configuration: defaults, REGIONPOOL_* environment, --config file, flags.

Later sources win: flags > config file > environment > defaults.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Any, Literal, Mapping

from dotenv import dotenv_values
from pydantic import BaseModel, ValidationError, field_validator

from regionpool.domain.errors import ConfigurationError
from regionpool.domain.models import (
    AdjustMethod,
    BivEvFamily,
    BootstrapConfig,
    MaxStableFamily,
    StatisticKind,
)

logger = logging.getLogger(__name__)

ENV_PREFIX = "REGIONPOOL_"

CONFIG_KEYS = (
    "LOI",
    "METHOD",
    "ALPHA",
    "B",
    "SEED",
    "BOOTSTRAP",
    "STATISTIC",
    "MS_FAMILIES",
    "BIV_FAMILIES",
    "COORDS",
    "POOL",
    "JOBS",
    "HESSIAN",
    "LOG_LEVEL",
)

_LIST_FIELDS = ("ms_families", "biv_families", "pool")


def _split(v):
    if isinstance(v, str):
        return tuple(item.strip() for item in v.split(",") if item.strip())
    return v


class RunConfig(BaseModel):
    loi: str | None = None
    method: Literal["im", "holm", "bh", "all"] = "bh"
    alpha: float = 0.1
    B: int = 200
    seed: int = 1
    bootstrap: Literal["ms", "biv"] = "ms"
    statistic: StatisticKind = StatisticKind.ED
    ms_families: tuple[MaxStableFamily, ...] = tuple(MaxStableFamily)
    biv_families: tuple[BivEvFamily, ...] = tuple(BivEvFamily)
    coords: str | None = None
    pool: tuple[str, ...] | None = None
    jobs: int = 1
    hessian: Literal["numeric", "analytic"] = "numeric"
    log_level: str = "INFO"

    @field_validator(*_LIST_FIELDS, mode="before")
    @classmethod
    def _comma_separated(cls, v):
        return _split(v)

    @field_validator("method", "bootstrap", "hessian", mode="before")
    @classmethod
    def _lower(cls, v):
        return v.lower() if isinstance(v, str) else v

    @field_validator("alpha")
    @classmethod
    def _alpha_open_unit(cls, v: float) -> float:
        if not 0 < v < 1:
            raise ValueError("alpha must lie in (0, 1)")
        return v

    @field_validator("B")
    @classmethod
    def _positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("B must be at least 1")
        return v

    @field_validator("jobs")
    @classmethod
    def _worker_count(cls, v: int) -> int:
        # joblib convention: -1 uses every core
        if v == 0 or v < -1:
            raise ValueError("jobs must be positive or -1")
        return v

    @field_validator("log_level")
    @classmethod
    def _level(cls, v: str) -> str:
        v = v.upper()
        if v not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"unknown log level {v}")
        return v

    def methods(self) -> list[AdjustMethod]:
        return list(AdjustMethod) if self.method == "all" else [AdjustMethod(self.method)]

    def primary_method(self) -> AdjustMethod:
        """Method that decides the recommended region; 'all' decides with BH."""
        return AdjustMethod.BH if self.method == "all" else AdjustMethod(self.method)

    def replicates_or(self, default: int) -> int:
        """B from a flag, the config file or the environment; ``default`` when none of them set it."""
        return self.B if "B" in self.model_fields_set else default

    def bootstrap_config(self) -> BootstrapConfig:
        return BootstrapConfig(
            B=self.B,
            seed=self.seed,
            ms_families=self.ms_families,
            biv_families=self.biv_families,
            statistic=self.statistic,
            n_jobs=self.jobs,
            hessian=self.hessian,
        )


def _field_name(key: str) -> str:
    return next(name for name in RunConfig.model_fields if name.upper() == key)


def _from_environment(environ: Mapping[str, str]) -> dict[str, str]:
    return {
        _field_name(key): environ[ENV_PREFIX + key]
        for key in CONFIG_KEYS
        if environ.get(ENV_PREFIX + key, "") != ""
    }


def read_config_file(path: str | os.PathLike) -> dict[str, str]:
    """KEY=VALUE file; keys may carry the REGIONPOOL_ prefix."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    values = {}
    for raw_key, value in dotenv_values(path).items():
        key = raw_key.upper().removeprefix(ENV_PREFIX)
        if key not in CONFIG_KEYS:
            raise ConfigurationError(f"unknown configuration key '{raw_key}' in {path}")
        if value is not None and value != "":
            values[_field_name(key)] = value
    return values


def resolve_config(
    flags: Mapping[str, Any] | None = None,
    config_file: str | os.PathLike | None = None,
    environ: Mapping[str, str] | None = None,
) -> RunConfig:
    merged: dict[str, Any] = {}
    merged.update(_from_environment(os.environ if environ is None else environ))
    if config_file is not None:
        merged.update(read_config_file(config_file))
    for key, value in (flags or {}).items():
        if key in RunConfig.model_fields and value is not None:
            merged[key] = value
    try:
        cfg = RunConfig(**merged)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigurationError(f"invalid configuration: {problems}") from e
    logger.debug("resolved configuration %s", cfg.model_dump(mode="json"))
    return cfg
