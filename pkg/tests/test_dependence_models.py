import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate, stats

from regionpool.domain.errors import SelectionError
from regionpool.domain.models import (
    BivEvFamily,
    BivEvSpec,
    DependenceFit,
    MaxStableFamily,
    MaxStableSpec,
)
from regionpool.stats.dependence_models import (
    _select,
    biv_log_density,
    empirical_extremal_coefficient,
    extremal_coefficient,
    fit_biv_ev,
    fit_max_stable,
    pairwise_loglik,
    select_biv_ev,
    simulate_biv_ev,
    simulate_dependence,
    simulate_max_stable,
)

SMITH = MaxStableSpec(family=MaxStableFamily.SMITH, params=(0.4, 0.2, 0.9))
GRID = np.array([[x, y] for y in range(3) for x in range(3)], dtype=float)


# ====== EXTREMAL COEFFICIENTS ======
class TestExtremalCoefficient:
    def test_smith_closed_form(self):
        h = np.array([1.0, 0.5])
        prec = np.linalg.inv(np.array([[0.4, 0.2], [0.2, 0.9]]))
        expected = 2 * stats.norm.cdf(np.sqrt(h @ prec @ h) / 2)
        assert extremal_coefficient(SMITH, h) == pytest.approx(expected)

    def test_smith_limits(self):
        h = np.array([1.0, 0.0])
        wide = MaxStableSpec(family=MaxStableFamily.SMITH, params=(1e16, 0.0, 1e16))
        narrow = MaxStableSpec(family=MaxStableFamily.SMITH, params=(1e-6, 0.0, 1e-6))
        assert extremal_coefficient(wide, h) == pytest.approx(1.0, abs=1e-6)
        assert extremal_coefficient(narrow, h) == pytest.approx(2.0, abs=1e-6)

    def test_brown_resnick_and_schlather_are_monotone_in_distance(self):
        dist = np.array([0.1, 1.0, 5.0])
        br = MaxStableSpec(family=MaxStableFamily.BROWN_RESNICK, params=(2.0, 1.0))
        sch = MaxStableSpec(family=MaxStableFamily.SCHLATHER, params=(0.0, 2.0, 1.0))
        for spec in (br, sch):
            theta = extremal_coefficient(spec, dist)
            assert np.all(np.diff(theta) > 0)
            assert np.all((theta >= 1) & (theta <= 2))
        # Schlather never reaches independence
        assert extremal_coefficient(sch, 1e6) == pytest.approx(1 + np.sqrt(0.5))

    def test_bivariate_families(self):
        assert extremal_coefficient(BivEvSpec(family=BivEvFamily.LOGISTIC, params=(0.5,))) == pytest.approx(2**0.5)
        hr = BivEvSpec(family=BivEvFamily.HUSLER_REISS, params=(1.0,))
        assert extremal_coefficient(hr) == pytest.approx(2 * stats.norm.cdf(0.5))
        alog = BivEvSpec(family=BivEvFamily.ASYMMETRIC_LOGISTIC, params=(0.5, 1.0))
        assert extremal_coefficient(alog) == pytest.approx(2**0.5)

    def test_empirical_estimator_limits(self, rng):
        y = 1.0 / rng.exponential(size=4000)
        assert empirical_extremal_coefficient(y, y) == pytest.approx(1.0)
        independent = empirical_extremal_coefficient(y, 1.0 / rng.exponential(size=4000))
        assert independent == pytest.approx(2.0, abs=0.1)


# ====== DENSITIES ======
class TestDensities:
    @pytest.mark.parametrize(
        "spec",
        [
            BivEvSpec(family=BivEvFamily.HUSLER_REISS, params=(1.2,)),
            BivEvSpec(family=BivEvFamily.LOGISTIC, params=(0.6,)),
            BivEvSpec(family=BivEvFamily.ASYMMETRIC_LOGISTIC, params=(0.5, 0.4)),
        ],
    )
    def test_density_integrates_to_one(self, spec):
        # on the log scale; the mass outside [-4, 14]^2 is below 1e-5
        def integrand(s2, s1):
            y1, y2 = np.exp(s1), np.exp(s2)
            return float(np.exp(biv_log_density(y1, y2, spec)) * y1 * y2)

        total, _ = integrate.dblquad(integrand, -4, 14, -4, 14, epsabs=1e-7)
        assert total == pytest.approx(1.0, abs=2e-3)

    def test_independence_limits(self, rng):
        y1, y2 = 1.0 / rng.exponential(size=(2, 50))
        independent = -2 * np.log(y1) - 1 / y1 - 2 * np.log(y2) - 1 / y2
        logistic = BivEvSpec(family=BivEvFamily.LOGISTIC, params=(1.0,))
        alog = BivEvSpec(family=BivEvFamily.ASYMMETRIC_LOGISTIC, params=(0.4, 0.0))
        assert_allclose(biv_log_density(y1, y2, logistic), independent, rtol=1e-10)
        assert_allclose(biv_log_density(y1, y2, alog), independent, rtol=1e-10)

    def test_asymmetric_with_full_weight_is_logistic(self, rng):
        y1, y2 = 1.0 / rng.exponential(size=(2, 50))
        logistic = BivEvSpec(family=BivEvFamily.LOGISTIC, params=(0.3,))
        alog = BivEvSpec(family=BivEvFamily.ASYMMETRIC_LOGISTIC, params=(0.3, 1.0))
        assert_allclose(biv_log_density(y1, y2, alog), biv_log_density(y1, y2, logistic))

    def test_pairwise_loglik_per_year(self, rng):
        Y = simulate_max_stable(SMITH, GRID, 40, rng)
        ll = pairwise_loglik(Y, GRID, SMITH)
        assert ll.shape == (40,)
        assert np.all(np.isfinite(ll))


# ====== SIMULATION ======
class TestSimulation:
    def test_smith_margins_and_dependence(self, rng):
        coords = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [2.0, 2.0]])
        Y = simulate_max_stable(SMITH, coords, 3000, rng)
        assert Y.shape == (3000, 4)
        assert stats.kstest(np.exp(-1.0 / Y[:, 0]), "uniform").pvalue > 1e-3
        for k in (1, 2, 3):
            expected = extremal_coefficient(SMITH, coords[k] - coords[0])
            assert empirical_extremal_coefficient(Y[:, 0], Y[:, k]) == pytest.approx(expected, rel=0.08)

    @pytest.mark.parametrize(
        "spec",
        [
            MaxStableSpec(family=MaxStableFamily.SCHLATHER, params=(0.1, 1.5, 1.0)),
            MaxStableSpec(family=MaxStableFamily.BROWN_RESNICK, params=(1.5, 1.0)),
        ],
    )
    def test_other_max_stable_families(self, rng, spec):
        coords = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
        Y = simulate_max_stable(spec, coords, 3000, rng)
        for k in (1, 2):
            expected = extremal_coefficient(spec, coords[k] - coords[0])
            assert empirical_extremal_coefficient(Y[:, 0], Y[:, k]) == pytest.approx(expected, rel=0.08)

    @pytest.mark.parametrize(
        "spec",
        [
            BivEvSpec(family=BivEvFamily.HUSLER_REISS, params=(1.0,)),
            BivEvSpec(family=BivEvFamily.LOGISTIC, params=(0.5,)),
            BivEvSpec(family=BivEvFamily.ASYMMETRIC_LOGISTIC, params=(0.5, 0.6)),
        ],
    )
    def test_bivariate_simulation(self, rng, spec):
        Y = simulate_biv_ev(spec, 4000, rng)
        assert stats.kstest(np.exp(-1.0 / Y[:, 0]), "uniform").pvalue > 1e-3
        assert stats.kstest(np.exp(-1.0 / Y[:, 1]), "uniform").pvalue > 1e-3
        assert empirical_extremal_coefficient(Y[:, 0], Y[:, 1]) == pytest.approx(
            extremal_coefficient(spec), rel=0.06)

    def test_independent_sites(self, rng):
        Y = simulate_dependence(None, GRID, 100, rng)
        assert Y.shape == (100, 9)
        assert np.all(Y > 0)

    def test_reproducible(self):
        a = simulate_max_stable(SMITH, GRID, 20, np.random.default_rng(3))
        b = simulate_max_stable(SMITH, GRID, 20, np.random.default_rng(3))
        assert_allclose(a, b)

    @pytest.mark.slow
    def test_smith_fidelity_at_three_distances(self, rng):
        coords = np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 1.0], [2.0, 0.0]])
        Y = simulate_max_stable(SMITH, coords, 10_000, rng)
        for k in (1, 2, 3):
            expected = extremal_coefficient(SMITH, coords[k] - coords[0])
            assert empirical_extremal_coefficient(Y[:, 0], Y[:, k]) == pytest.approx(expected, rel=0.05)
        for d in range(4):
            assert stats.kstest(np.exp(-1.0 / Y[:, d]), "uniform").pvalue > 0.01


# ====== FITTING AND SELECTION ======
class TestFitting:
    def test_logistic_fit_recovers_parameter(self, rng):
        spec = BivEvSpec(family=BivEvFamily.LOGISTIC, params=(0.5,))
        fit = fit_biv_ev(simulate_biv_ev(spec, 800, rng), BivEvFamily.LOGISTIC)
        assert fit.converged
        assert fit.spec.params[0] == pytest.approx(0.5, abs=0.06)
        assert fit.criterion == pytest.approx(2 - 2 * fit.loglik)

    def test_select_biv_returns_finite_criterion(self, rng):
        spec = BivEvSpec(family=BivEvFamily.HUSLER_REISS, params=(1.0,))
        best = select_biv_ev(simulate_biv_ev(spec, 400, rng))
        assert np.isfinite(best.criterion)
        assert best.family in {f.value for f in BivEvFamily}

    def test_smith_fit_recovers_dependence(self, rng):
        Y = simulate_max_stable(SMITH, GRID, 400, rng)
        fit = fit_max_stable(Y, GRID, MaxStableFamily.SMITH)
        assert fit.converged
        h = np.array([1.0, 0.0])
        assert extremal_coefficient(fit.spec, h) == pytest.approx(extremal_coefficient(SMITH, h), abs=0.1)
        assert np.isfinite(fit.criterion)

    def test_short_pair_rejected(self, rng):
        with pytest.raises(ValueError):
            fit_biv_ev(1.0 / rng.exponential(size=(10, 2)), BivEvFamily.LOGISTIC)

    def test_no_candidates(self, rng):
        with pytest.raises(SelectionError):
            select_biv_ev(1.0 / rng.exponential(size=(50, 2)), families=())

    def test_ties_prefer_fewer_parameters(self):
        def fit(family, params, p):
            return DependenceFit(spec=BivEvSpec(family=family, params=params), criterion=10.0, loglik=-5.0,
                                 converged=True, n_params=p)

        fits = [fit(BivEvFamily.ASYMMETRIC_LOGISTIC, (0.5, 0.5), 2), fit(BivEvFamily.LOGISTIC, (0.5,), 1),
                fit(BivEvFamily.HUSLER_REISS, (1.0,), 1)]
        chosen = _select(fits, [BivEvFamily.HUSLER_REISS, BivEvFamily.LOGISTIC, BivEvFamily.ASYMMETRIC_LOGISTIC])
        assert chosen.family == "husler_reiss"

    def test_converged_fits_beat_boundary_fits(self):
        boundary = DependenceFit(spec=BivEvSpec(family=BivEvFamily.LOGISTIC, params=(0.02,)), criterion=1.0,
                                 loglik=0.0, converged=False, at_boundary=True, n_params=1)
        interior = DependenceFit(spec=BivEvSpec(family=BivEvFamily.HUSLER_REISS, params=(1.0,)), criterion=5.0,
                                 loglik=-2.0, converged=True, n_params=1)
        assert _select([boundary, interior], list(BivEvFamily)).family == "husler_reiss"
