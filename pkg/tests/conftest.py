import numpy as np
import pytest

from regionpool.domain.models import (
    BlockMaximaPanel,
    CovariateSeries,
    MaxStableFamily,
    MaxStableSpec,
    ScaleGevParams,
)
from regionpool.stats.dependence_models import simulate_dependence
from regionpool.stats.gev_core import from_frechet
from regionpool.stats.sim_harness import simulation_covariate

BASE = ScaleGevParams(mu=20.0, sigma=5.5, gamma=0.1, alpha=1.5)
SMITH = MaxStableSpec(family=MaxStableFamily.SMITH, params=(0.4, 0.2, 0.9))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def base_params():
    return BASE


def simulate_panel(
    D: int = 3,
    n: int = 75,
    seed: int = 0,
    dependence=None,
    params=None,
    coords=None,
    ids=None,
) -> BlockMaximaPanel:
    """Panel with unit-spaced coordinates on a line unless ``coords`` is given."""
    rng = np.random.default_rng(seed)
    covariate = simulation_covariate(n)
    if coords is None:
        coords = np.column_stack([np.arange(D, dtype=float), np.zeros(D)])
    params = params or [BASE] * D
    fields = simulate_dependence(dependence, coords, n, rng)
    maxima = np.column_stack([from_frechet(fields[:, d], params[d], covariate) for d in range(D)])
    return BlockMaximaPanel(
        maxima=maxima,
        covariate=CovariateSeries(values=covariate.values),
        coords=coords,
        location_ids=tuple(ids or (f"L{d + 1}" for d in range(D))),
        years=np.arange(1950, 1950 + n),
    )


@pytest.fixture
def make_panel():
    return simulate_panel
