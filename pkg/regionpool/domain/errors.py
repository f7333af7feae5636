"""Error hierarchy shared by the library and the command line.

Every error carries a human readable ``detail`` and the process ``exit_code``
the CLI should terminate with (1 = usage/ingestion, 2 = numerical failure).
"""

from __future__ import annotations

from typing import Any

EXIT_USAGE = 1
EXIT_NUMERICAL = 2


class RegionPoolError(Exception):
    exit_code = EXIT_NUMERICAL

    def __init__(self, detail: str, exit_code: int | None = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code

    def __str__(self) -> str:
        return self.detail


# --------------------------
# USAGE / INGESTION
# --------------------------
class IngestionError(RegionPoolError):
    """Malformed panel or coordinate file. ``line`` is 1-based (header = 1)."""

    exit_code = EXIT_USAGE

    def __init__(self, detail: str, line: int | None = None, location: str | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + detail)
        self.line = line
        self.location = location


class ConfigurationError(RegionPoolError):
    exit_code = EXIT_USAGE


class DomainError(RegionPoolError, ValueError):
    """Argument outside the mathematical domain of an operation."""

    exit_code = EXIT_USAGE


# --------------------------
# NUMERICAL
# --------------------------
class FitError(RegionPoolError):
    def __init__(self, detail: str, diagnostics: dict[str, Any] | None = None):
        super().__init__(detail)
        self.diagnostics = diagnostics or {}


class DegenerateDataError(FitError):
    pass


class CovarianceError(RegionPoolError):
    def __init__(self, detail: str, location: str | int | None = None):
        super().__init__(detail)
        self.location = location


class WaldTestError(RegionPoolError):
    def __init__(self, detail: str, A: tuple[int, ...] | None = None):
        super().__init__(detail)
        self.A = A


class SelectionError(RegionPoolError):
    pass


class BootstrapError(RegionPoolError):
    def __init__(self, detail: str, target: tuple[int, ...] | None = None):
        super().__init__(detail)
        self.target = target
