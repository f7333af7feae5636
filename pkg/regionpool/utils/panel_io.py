"""Panel and coordinate CSV ingestion.

A panel file is long format with one row per (year, location):
``year,location_id,maximum,covariate``. Locations keep the order of their first
appearance and years are sorted, so writing a panel back out and reading it
again reproduces the same in-memory panel.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from regionpool.domain.errors import ConfigurationError, IngestionError
from regionpool.domain.models import BlockMaximaPanel, CovariateSeries
from regionpool.utils.reports import atomic_write_text

logger = logging.getLogger(__name__)

PANEL_COLUMNS = ("year", "location_id", "maximum", "covariate")
COORD_COLUMNS = ("location_id", "x", "y")
_HEADER_LINES = 1


def _read_csv(path: str | os.PathLike, required: Sequence[str], what: str) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"{what} file not found: {path}")
    try:
        df = pd.read_csv(path, dtype={"location_id": str}, skip_blank_lines=False, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise IngestionError(f"unreadable {what} file {path}: {e}") from e
    df.columns = [str(c).strip() for c in df.columns]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise IngestionError(f"{what} file {path} lacks column(s) {', '.join(missing)}", line=1)
    df = df[list(required)].copy()
    df["line"] = np.arange(len(df)) + _HEADER_LINES + 1
    return df[~df[list(required)].isna().all(axis=1)].reset_index(drop=True)


def _first_bad(df: pd.DataFrame, mask: pd.Series, detail: str, column: str | None = None):
    if mask.any():
        row = df[mask].iloc[0]
        loc = None if pd.isna(row["location_id"]) else str(row["location_id"])
        value = f" '{row[column]}'" if column is not None else ""
        raise IngestionError(f"{detail}{value}" + (f" (location '{loc}')" if loc else ""),
                             line=int(row["line"]), location=loc)


def _numeric(df: pd.DataFrame, column: str, detail: str) -> pd.Series:
    values = pd.to_numeric(df[column], errors="coerce")
    _first_bad(df, ~np.isfinite(values.astype(float)), detail, column)
    return values.astype(float)


def read_panel(
    path: str | os.PathLike,
    loi: str | None = None,
    coords: str | os.PathLike | None = None,
) -> BlockMaximaPanel:
    df = _read_csv(path, PANEL_COLUMNS, "panel")
    if df.empty:
        raise IngestionError(f"panel file {path} has no data rows")

    df["location_id"] = df["location_id"].astype("string").str.strip()
    _first_bad(df, df["location_id"].isna() | (df["location_id"] == ""), "missing location id")
    years = _numeric(df, "year", "missing or non-numeric year")
    _first_bad(df, years != np.round(years), "year is not an integer", "year")
    df["year"] = years.astype(int)
    df["maximum"] = _numeric(df, "maximum", "missing or non-numeric maximum")
    df["covariate"] = _numeric(df, "covariate", "missing or non-numeric covariate")

    dup = df.duplicated(["year", "location_id"], keep="first")
    _first_bad(df, dup, "duplicate row for this year", "year")

    reference = df.groupby("year")["covariate"].transform("first")
    _first_bad(df, df["covariate"] != reference, "covariate differs from the value given earlier for the same year",
               "covariate")

    locations = list(pd.unique(df["location_id"]))
    all_years = np.sort(df["year"].unique())
    wide = df.pivot(index="year", columns="location_id", values="maximum").reindex(index=all_years, columns=locations)
    for loc in locations:
        absent = wide.index[wide[loc].isna()].tolist()
        if absent:
            shown = ", ".join(str(y) for y in absent[:10]) + (" ..." if len(absent) > 10 else "")
            raise IngestionError(f"location '{loc}' has no row for year(s) {shown}", location=loc)

    covariate = df.groupby("year")["covariate"].first().reindex(all_years).to_numpy()
    loi_index = 0
    if loi is not None:
        if str(loi) not in locations:
            raise ConfigurationError(f"unknown location of interest '{loi}'; available: {', '.join(locations)}")
        loi_index = locations.index(str(loi))
    coord_matrix = read_coords(coords, locations) if coords is not None else None

    try:
        panel = BlockMaximaPanel(
            maxima=wide.to_numpy(dtype=float),
            covariate=CovariateSeries(values=covariate),
            coords=coord_matrix,
            location_ids=tuple(str(loc) for loc in locations),
            loi=loi_index,
            years=all_years,
        )
    except ValidationError as e:
        raise IngestionError(f"invalid panel {path}: {e.errors()[0]['msg']}") from e
    logger.info("read panel %s: %d years x %d locations", path, panel.n, panel.D)
    return panel


def read_coords(path: str | os.PathLike, location_ids: Sequence[str]) -> np.ndarray:
    """D x 2 planar coordinates in the order of ``location_ids``; extra rows are ignored."""
    df = _read_csv(path, COORD_COLUMNS, "coordinates")
    df["location_id"] = df["location_id"].astype("string").str.strip()
    _first_bad(df, df["location_id"].isna(), "missing location id")
    df["x"] = _numeric(df, "x", "missing or non-numeric x coordinate")
    df["y"] = _numeric(df, "y", "missing or non-numeric y coordinate")
    _first_bad(df, df.duplicated("location_id"), "duplicate coordinates for location", "location_id")

    indexed = df.set_index("location_id")
    absent = [loc for loc in location_ids if loc not in indexed.index]
    if absent:
        raise IngestionError(f"no coordinates for location '{absent[0]}' in {path}", location=absent[0])
    extra = set(indexed.index) - set(location_ids)
    if extra:
        logger.debug("ignoring coordinates of %d locations absent from the panel", len(extra))
    return indexed.loc[list(location_ids), ["x", "y"]].to_numpy(dtype=float)


def panel_frame(panel: BlockMaximaPanel) -> pd.DataFrame:
    years = panel.years if panel.years is not None else np.arange(1, panel.n + 1)
    return pd.DataFrame({
        "year": np.repeat(np.asarray(years, dtype=int), panel.D),
        "location_id": np.tile(np.array(panel.location_ids, dtype=object), panel.n),
        "maximum": panel.maxima.reshape(-1),
        "covariate": np.repeat(panel.covariate.values, panel.D),
    })


def write_panel_csv(panel: BlockMaximaPanel, path: str | os.PathLike) -> Path:
    return atomic_write_text(path, panel_frame(panel).to_csv(index=False))


def write_coords_csv(panel: BlockMaximaPanel, path: str | os.PathLike) -> Path:
    if panel.coords is None:
        raise ConfigurationError("panel has no coordinates to write")
    frame = pd.DataFrame({"location_id": panel.location_ids, "x": panel.coords[:, 0], "y": panel.coords[:, 1]})
    return atomic_write_text(path, frame.to_csv(index=False))
