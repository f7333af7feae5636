import numpy as np
import pytest
from pydantic import ValidationError

from regionpool.domain.errors import DomainError
from regionpool.domain.models import (
    BivEvFamily,
    BivEvSpec,
    DependenceFit,
    MaxStableFamily,
    MaxStableSpec,
    ReturnSpec,
    ScaleGevParams,
)
from regionpool.stats.return_levels import (
    independent_regional_rl,
    independent_regional_rp,
    local_rl,
    local_rp,
    regional_rl_rp,
)

BASE = ScaleGevParams(mu=20.0, sigma=5.5, gamma=0.1, alpha=1.5)
SMITH = MaxStableSpec(family=MaxStableFamily.SMITH, params=(0.4, 0.2, 0.9))
C_REF = 0.925
LINE4 = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])


class TestLocal:
    def test_hundred_year_level(self):
        assert local_rl(BASE, 100, C_REF) == pytest.approx(55.871, abs=0.01)

    @pytest.mark.parametrize("T", [2.0, 10.0, 100.0, 1000.0])
    def test_period_inverts_level(self, T):
        assert local_rp(BASE, local_rl(BASE, T, C_REF), C_REF) == pytest.approx(T, rel=1e-8)

    def test_beyond_upper_endpoint(self):
        bounded = ScaleGevParams(mu=20.0, sigma=5.0, gamma=-0.5, alpha=0.0)
        assert local_rp(bounded, 100.0, 0.0) == np.inf

    @pytest.mark.parametrize("T", [1.0, 0.5])
    def test_period_must_exceed_one(self, T):
        with pytest.raises(DomainError):
            local_rl(BASE, T, C_REF)

    def test_independent_formulas(self):
        r = local_rl(BASE, 100, C_REF)
        assert independent_regional_rp(BASE, r, C_REF, 4) == pytest.approx(1 / (1 - 0.99**4))
        assert independent_regional_rl(BASE, 100, C_REF, 1) == pytest.approx(r)
        assert independent_regional_rl(BASE, 100, C_REF, 4) > r


class TestRegional:
    def test_single_site_matches_local(self):
        spec = ReturnSpec(T=100, reference_c=C_REF)
        est = regional_rl_rp(BASE, None, LINE4[:1], spec, B_sim=50_000, rng=1)
        assert est.rl_regional == pytest.approx(est.rl_local, rel=0.03)
        assert est.rp_regional == pytest.approx(100, rel=0.15)
        assert est.n_sites == 1
        assert est.dependence == "independent"

    def test_independent_sites_match_closed_form(self):
        spec = ReturnSpec(T=100, reference_c=C_REF)
        est = regional_rl_rp(BASE, None, LINE4, spec, B_sim=50_000, rng=2)
        assert est.rl_regional == pytest.approx(independent_regional_rl(BASE, 100, C_REF, 4), rel=0.03)
        assert est.rp_regional == pytest.approx(independent_regional_rp(BASE, est.r, C_REF, 4), rel=0.1)

    def test_dependence_sits_between_local_and_independent(self):
        spec = ReturnSpec(T=100, reference_c=C_REF)
        est = regional_rl_rp(BASE, SMITH, LINE4, spec, B_sim=30_000, rng=3)
        assert est.rl_local * 0.99 <= est.rl_regional <= independent_regional_rl(BASE, 100, C_REF, 4) * 1.01
        assert est.rp_regional <= 100
        assert est.dependence == "smith"
        assert est.empirical_cdf_summary["q0.5"] < est.empirical_cdf_summary["q0.99"]

    def test_magnitude_only(self):
        est = regional_rl_rp(BASE, None, LINE4, ReturnSpec(r=50.0, reference_c=C_REF), B_sim=5000, rng=4)
        assert est.rl_regional is None
        assert est.rl_local is None
        assert est.r == 50.0
        assert est.rp_regional > 1

    def test_fit_object_accepted_and_reproducible(self):
        fit = DependenceFit(spec=SMITH, criterion=0.0, loglik=0.0, converged=True, n_params=3)
        spec = ReturnSpec(T=50, reference_c=0.0)
        a = regional_rl_rp(BASE, fit, LINE4, spec, B_sim=2000, rng=5)
        b = regional_rl_rp(BASE, SMITH, LINE4, spec, B_sim=2000, rng=5)
        assert a == b

    def test_small_simulation_warns(self):
        with pytest.warns(RuntimeWarning, match="B_sim"):
            regional_rl_rp(BASE, None, LINE4, ReturnSpec(T=10, reference_c=0.0), B_sim=500, rng=6)

    def test_bad_coordinates(self):
        with pytest.raises(DomainError):
            regional_rl_rp(BASE, None, np.zeros((3, 3)), ReturnSpec(T=10, reference_c=0.0), B_sim=1000)

    def test_bivariate_model_needs_two_sites(self):
        logistic = BivEvSpec(family=BivEvFamily.LOGISTIC, params=(0.6,))
        with pytest.raises(DomainError, match="2 sites"):
            regional_rl_rp(BASE, logistic, LINE4, ReturnSpec(T=10, reference_c=0.0), B_sim=1000)
        est = regional_rl_rp(BASE, logistic, LINE4[:2], ReturnSpec(T=10, reference_c=0.0), B_sim=2000, rng=7)
        assert est.n_sites == 2
        assert est.dependence == "logistic"


class TestReturnSpec:
    def test_needs_period_or_magnitude(self):
        with pytest.raises(ValidationError):
            ReturnSpec(reference_c=0.0)

    def test_period_must_exceed_one(self):
        with pytest.raises(ValidationError):
            ReturnSpec(T=1.0, reference_c=0.0)
