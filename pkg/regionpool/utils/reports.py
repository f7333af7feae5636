"""Report writers. Every command writes ``<name>.csv`` next to ``<name>.json``.

Files are written to a temporary sibling and renamed into place.
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import pandas as pd
from pydantic import BaseModel

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
P_DECIMALS = 4
PARAM_DIGITS = 4


def schema_name(name: str) -> str:
    return f"regionpool.{name}/{SCHEMA_VERSION}"


def round_p(p: float | None) -> float | None:
    if p is None or not math.isfinite(p):
        return p
    return round(float(p), P_DECIMALS)


def round_sig(x: float | None, digits: int = PARAM_DIGITS) -> float | None:
    if x is None or not math.isfinite(x):
        return x
    return float(f"{float(x):.{digits}g}")


def atomic_write_text(path: str | os.PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _jsonable(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return _jsonable(value.model_dump(mode="json"))
    if isinstance(value, Mapping):
        return {str(k.value if hasattr(k, "value") else k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        # JSON has no infinity; "inf" keeps an unbounded return period readable
        return None if math.isnan(value) else ("inf" if value > 0 else "-inf")
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


def write_report(out_dir: str | os.PathLike, name: str, table: pd.DataFrame, payload: Mapping[str, Any]) -> tuple[Path, Path]:
    """Write the table as CSV and ``{"schema": ..., **payload}`` as JSON."""
    out_dir = Path(out_dir)
    csv_path = atomic_write_text(out_dir / f"{name}.csv", table.to_csv(index=False))
    document = {"schema": schema_name(name), **_jsonable(dict(payload))}
    json_path = atomic_write_text(out_dir / f"{name}.json", json.dumps(document, indent=2) + "\n")
    logger.info("wrote %s and %s", csv_path, json_path)
    return csv_path, json_path
