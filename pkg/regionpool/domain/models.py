from __future__ import annotations

from enum import Enum
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class _ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)


# --------------------------
# ENUMS
# --------------------------
class StatisticKind(str, Enum):
    ED = "ed"
    LS = "ls"


class AdjustMethod(str, Enum):
    IM = "im"
    HOLM = "holm"
    BH = "bh"


class MaxStableFamily(str, Enum):
    SMITH = "smith"
    SCHLATHER = "schlather"
    BROWN_RESNICK = "brown_resnick"


class BivEvFamily(str, Enum):
    HUSLER_REISS = "husler_reiss"
    LOGISTIC = "logistic"
    ASYMMETRIC_LOGISTIC = "asymmetric_logistic"


class Procedure(str, Enum):
    B1 = "B1"  # global max-stable bootstrap on all locations
    B2 = "B2"  # max-stable bootstrap on every pair {loi, d}
    B3 = "B3"  # bivariate bootstrap on every pair {loi, d}


# --------------------------
# MARGINAL MODELS
# --------------------------
class GevParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    mu: float
    sigma: float
    gamma: float

    @field_validator("sigma")
    @classmethod
    def _sigma_positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("sigma must be positive")
        return v


class ScaleGevParams(BaseModel):
    """(mu, sigma, gamma, alpha) of the scale-GEV model.

    mu and sigma share the factor exp(alpha * c / mu) for covariate value c.
    """

    model_config = ConfigDict(frozen=True)

    mu: float
    sigma: float
    gamma: float
    alpha: float

    @field_validator("mu", "sigma")
    @classmethod
    def _positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("mu and sigma must be positive")
        return v

    def as_array(self) -> np.ndarray:
        return np.array([self.mu, self.sigma, self.gamma, self.alpha], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "ScaleGevParams":
        mu, sigma, gamma, alpha = (float(v) for v in arr)
        return cls(mu=mu, sigma=sigma, gamma=gamma, alpha=alpha)


class CovariateSeries(_ArrayModel):
    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _finite_vector(cls, v):
        arr = np.asarray(v, dtype=float)
        if arr.ndim != 1:
            raise ValueError("covariate must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise ValueError("covariate values must be finite")
        return arr

    def __len__(self) -> int:
        return len(self.values)


class BlockMaximaPanel(_ArrayModel):
    """n years x D locations of block maxima with the shared covariate."""

    maxima: np.ndarray
    covariate: CovariateSeries
    coords: np.ndarray | None = None
    location_ids: tuple[str, ...]
    loi: int = 0
    years: np.ndarray | None = None

    @field_validator("maxima", mode="before")
    @classmethod
    def _matrix(cls, v):
        arr = np.asarray(v, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ValueError("maxima must be an n x D matrix")
        if not np.all(np.isfinite(arr)):
            raise ValueError("panel contains missing or non-finite maxima")
        return arr

    @field_validator("coords", mode="before")
    @classmethod
    def _coords(cls, v):
        if v is None:
            return None
        arr = np.asarray(v, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError("coords must be a D x 2 matrix")
        return arr

    @model_validator(mode="after")
    def _consistent(self):
        n, D = self.maxima.shape
        if len(self.covariate) != n:
            raise ValueError(f"covariate length {len(self.covariate)} != year count {n}")
        if len(self.location_ids) != D:
            raise ValueError("one location id per column required")
        if len(set(self.location_ids)) != D:
            raise ValueError("location ids must be unique")
        if not 0 <= self.loi < D:
            raise ValueError(f"loi index {self.loi} out of range for {D} locations")
        if self.coords is not None:
            if self.coords.shape[0] != D:
                raise ValueError("one coordinate pair per location required")
            if len(np.unique(self.coords, axis=0)) != D:
                raise ValueError("coords must be pairwise distinct")
        if self.years is not None and len(self.years) != n:
            raise ValueError("one year label per row required")
        return self

    @property
    def n(self) -> int:
        return self.maxima.shape[0]

    @property
    def D(self) -> int:
        return self.maxima.shape[1]

    def column(self, d: int) -> np.ndarray:
        return self.maxima[:, d]

    def index_of(self, location_id: str) -> int:
        try:
            return self.location_ids.index(str(location_id))
        except ValueError:
            raise KeyError(f"unknown location '{location_id}'") from None


class FitReport(_ArrayModel):
    params: ScaleGevParams
    nllh: float
    converged: bool
    n_iter: int = 0
    message: str = ""
    hessian: np.ndarray  # Hessian of the mean log-likelihood at the estimate
    n: int
    warnings: list[str] = Field(default_factory=list)


class LocalScalingFit(_ArrayModel):
    """Constrained fit with shared mu/sigma ratio, alpha/mu ratio and shape."""

    delta: float
    eta: float
    gamma: float
    mus: tuple[float, ...]
    A: tuple[int, ...]
    nllh: float
    converged: bool
    message: str = ""

    def implied_params(self) -> list[ScaleGevParams]:
        return [
            ScaleGevParams(mu=m, sigma=m / self.delta, gamma=self.gamma, alpha=self.eta * m)
            for m in self.mus
        ]


# --------------------------
# UNCERTAINTY / WALD
# --------------------------
class ParamCovariance(_ArrayModel):
    """Joint covariance of the stacked per-location estimators.

    ``blocks[j, k]`` is the 4x4 block for locations j and k.
    """

    blocks: np.ndarray
    n: int
    warnings: list[str] = Field(default_factory=list)

    @field_validator("blocks", mode="before")
    @classmethod
    def _shape(cls, v):
        arr = np.asarray(v, dtype=float)
        if arr.ndim != 4 or arr.shape[0] != arr.shape[1] or arr.shape[2:] != (4, 4):
            raise ValueError("blocks must have shape (D, D, 4, 4)")
        return arr

    @property
    def D(self) -> int:
        return self.blocks.shape[0]

    def full(self) -> np.ndarray:
        D = self.D
        return self.blocks.transpose(0, 2, 1, 3).reshape(4 * D, 4 * D)


class StandardizedResiduals(_ArrayModel):
    z: np.ndarray


class HypothesisSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    A: tuple[int, ...]
    kind: StatisticKind = StatisticKind.ED

    @field_validator("A", mode="before")
    @classmethod
    def _sorted_distinct(cls, v):
        idx = tuple(int(i) for i in v)
        if len(set(idx)) != len(idx):
            raise ValueError("hypothesis set indices must be distinct")
        if len(idx) < 2:
            raise ValueError("hypothesis set needs at least two locations")
        if min(idx) < 0:
            raise ValueError("hypothesis set indices must be nonnegative")
        return tuple(sorted(idx))

    @property
    def k(self) -> int:
        return len(self.A)

    @property
    def df(self) -> int:
        per = 4 if self.kind == StatisticKind.ED else 3
        return per * (self.k - 1)


class WaldResult(BaseModel):
    statistic: float = Field(ge=0)
    df: int = Field(ge=1)
    asymptotic_p: float
    used_pinv: bool = False


# --------------------------
# DEPENDENCE MODELS
# --------------------------
class MaxStableSpec(BaseModel):
    """Smith: (s11, s12, s22); Schlather: (nugget, range, smooth); Brown-Resnick: (range, smooth)."""

    model_config = ConfigDict(frozen=True)

    family: MaxStableFamily
    params: tuple[float, ...]

    @model_validator(mode="after")
    def _constraints(self):
        p = self.params
        if self.family == MaxStableFamily.SMITH:
            if len(p) != 3:
                raise ValueError("Smith needs (s11, s12, s22)")
            s11, s12, s22 = p
            if not (s11 > 0 and s22 > 0 and s11 * s22 - s12**2 > 0):
                raise ValueError("Smith covariance must be positive definite")
        elif self.family == MaxStableFamily.SCHLATHER:
            if len(p) != 3:
                raise ValueError("Schlather needs (nugget, range, smooth)")
            nugget, rng, smooth = p
            if not (0 <= nugget < 1 and rng > 0 and 0 < smooth <= 2):
                raise ValueError("Schlather parameters out of range")
        else:
            if len(p) != 2:
                raise ValueError("Brown-Resnick needs (range, smooth)")
            rng, smooth = p
            if not (rng > 0 and 0 < smooth <= 2):
                raise ValueError("Brown-Resnick parameters out of range")
        return self


class BivEvSpec(BaseModel):
    """Husler-Reiss: (lambda,); logistic: (r,); asymmetric logistic: (r, t1) with t2 = 1."""

    model_config = ConfigDict(frozen=True)

    family: BivEvFamily
    params: tuple[float, ...]

    @model_validator(mode="after")
    def _constraints(self):
        p = self.params
        if self.family == BivEvFamily.HUSLER_REISS:
            if len(p) != 1 or not p[0] > 0:
                raise ValueError("Husler-Reiss needs lambda > 0")
        elif self.family == BivEvFamily.LOGISTIC:
            if len(p) != 1 or not 0 < p[0] <= 1:
                raise ValueError("logistic needs r in (0, 1]")
        else:
            if len(p) != 2 or not (0 < p[0] <= 1 and 0 <= p[1] <= 1):
                raise ValueError("asymmetric logistic needs r in (0, 1] and t1 in [0, 1]")
        return self


class DependenceFit(BaseModel):
    spec: MaxStableSpec | BivEvSpec
    criterion: float
    loglik: float
    converged: bool
    at_boundary: bool = False
    n_params: int
    message: str = ""

    @model_validator(mode="after")
    def _finite_when_converged(self):
        if self.converged and not np.isfinite(self.criterion):
            raise ValueError("criterion must be finite for a converged fit")
        return self

    @property
    def family(self) -> str:
        return self.spec.family.value


# --------------------------
# BOOTSTRAP / TESTING
# --------------------------
class BootstrapConfig(BaseModel):
    B: int = Field(default=200, ge=1)
    seed: int = 1
    ms_families: tuple[MaxStableFamily, ...] = tuple(MaxStableFamily)
    biv_families: tuple[BivEvFamily, ...] = tuple(BivEvFamily)
    statistic: StatisticKind = StatisticKind.ED
    n_jobs: int = 1
    hessian: Literal["numeric", "analytic"] = "numeric"


class PairTestRecord(_ArrayModel):
    A: HypothesisSet
    observed_t: float
    boot_ts: np.ndarray
    p_raw: float
    dependence: DependenceFit
    null_fit: ScaleGevParams
    null_params: tuple[ScaleGevParams, ...] = ()
    n_dropped: int = 0


class AdjustedPValues(_ArrayModel):
    method: AdjustMethod
    raw: np.ndarray
    adjusted: np.ndarray
    alpha: float = 0.1

    @property
    def rejected(self) -> np.ndarray:
        return self.adjusted <= self.alpha


class PartnerResult(BaseModel):
    partner: int
    location_id: str
    observed_t: float
    p_raw: float
    adjusted: dict[AdjustMethod, float]
    rejected: dict[AdjustMethod, bool]


class PoolingReport(BaseModel):
    loi: int
    loi_id: str
    method: AdjustMethod
    alpha: float
    partners: list[PartnerResult]
    recommended: tuple[int, ...]
    recommended_ids: tuple[str, ...]

    @model_validator(mode="after")
    def _loi_recommended(self):
        if self.loi not in self.recommended:
            raise ValueError("location of interest must belong to the recommended set")
        return self


# --------------------------
# RETURN LEVELS
# --------------------------
class ReturnSpec(BaseModel):
    T: float | None = None
    r: float | None = None
    reference_c: float

    @field_validator("T")
    @classmethod
    def _period(cls, v):
        if v is not None and not v > 1:
            raise ValueError("return period T must exceed 1")
        return v

    @model_validator(mode="after")
    def _something_to_compute(self):
        if self.T is None and self.r is None:
            raise ValueError("supply a return period T or an event magnitude r")
        return self


class RegionalEstimate(BaseModel):
    rl_regional: float | None
    rp_regional: float | None
    rl_local: float | None
    r: float | None
    B_sim: int
    n_sites: int
    dependence: str
    empirical_cdf_summary: dict[str, float]


# --------------------------
# SIMULATION STUDY
# --------------------------
DEVIATION_GRID = {
    "c_mu": (-3.0, -1.5, 0.0, 1.5, 3.0),
    "c_sigma": (0.7, 0.85, 1.0, 1.15, 1.3),
    "c_gamma": (-0.1, 0.0, 0.1),
    "c_alpha": (-1.0, 0.0, 1.0),
}

A_DEV_SMALL = (4, 8)
A_DEV_LARGE = (1, 2, 3, 4, 8, 12, 16)


class Scenario(_ArrayModel):
    """One simulation model on the 4x4 grid. Location labels run 1..16 row-wise."""

    grid_size: int = 4
    n: int = Field(default=75, ge=20)
    base_params: ScaleGevParams = ScaleGevParams(mu=20.0, sigma=5.5, gamma=0.1, alpha=1.5)
    a_dev: tuple[int, ...] = A_DEV_SMALL
    deviation: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 0.0)
    dependence: MaxStableSpec = MaxStableSpec(family=MaxStableFamily.SMITH, params=(0.4, 0.2, 0.9))
    loi: int = 10
    covariate: CovariateSeries | None = None

    @field_validator("deviation")
    @classmethod
    def _on_grid(cls, v):
        for value, grid in zip(v, DEVIATION_GRID.values()):
            if not any(np.isclose(value, g) for g in grid):
                raise ValueError(f"deviation component {value} not on the grid {grid}")
        return v

    @model_validator(mode="after")
    def _labels(self):
        D = self.grid_size**2
        if not 1 <= self.loi <= D:
            raise ValueError("loi label out of range")
        if any(not 1 <= d <= D for d in self.a_dev) or self.loi in self.a_dev:
            raise ValueError("a_dev labels must lie on the grid and exclude the loi")
        if self.covariate is not None and len(self.covariate) != self.n:
            raise ValueError("covariate length must equal n")
        return self

    @property
    def D(self) -> int:
        return self.grid_size**2

    @property
    def loi_index(self) -> int:
        return self.loi - 1

    @property
    def a_dev_index(self) -> tuple[int, ...]:
        return tuple(d - 1 for d in self.a_dev)

    @property
    def is_homogeneous(self) -> bool:
        return np.allclose(self.deviation, (0.0, 1.0, 0.0, 0.0))

    def coords(self) -> np.ndarray:
        # unit spacing between neighbouring cell centres, labels row-wise
        rows, cols = np.divmod(np.arange(self.D), self.grid_size)
        return np.column_stack([cols, -rows]).astype(float)

    def deviated_params(self) -> ScaleGevParams:
        c_mu, c_sigma, c_gamma, c_alpha = self.deviation
        b = self.base_params
        return ScaleGevParams(
            mu=b.mu + c_mu, sigma=b.sigma * c_sigma, gamma=b.gamma + c_gamma, alpha=b.alpha + c_alpha
        )

    def location_params(self) -> list[ScaleGevParams]:
        dev = set(self.a_dev_index)
        deviated = self.deviated_params()
        return [deviated if d in dev else self.base_params for d in range(self.D)]


class StudyMetrics(BaseModel):
    reps: int
    level_or_power: float | None = None
    fdr: dict[str, float] = Field(default_factory=dict)
    fwer: dict[str, float] = Field(default_factory=dict)
    power: dict[str, float] = Field(default_factory=dict)
    mse_by_method: dict[str, float] = Field(default_factory=dict)
    n_failed: int = 0
