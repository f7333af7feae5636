"""Spatial and bivariate dependence models with unit-Frechet margins.

Max-stable families (Smith, Schlather, Brown-Resnick) are fitted by the
pairwise composite likelihood and ranked by CLIC; bivariate extreme-value
families (Husler-Reiss, logistic, asymmetric logistic) by full likelihood and
AIC. All simulators draw exactly through extremal functions: for each site the
Poisson points are generated until their running level falls below the
current maximum at that site.
"""

from __future__ import annotations

import logging
import warnings
from typing import Callable, Sequence

import numdifftools as nd
import numpy as np
from scipy import optimize, stats

from regionpool.domain.errors import DomainError, FitError, SelectionError
from regionpool.domain.models import (
    BivEvFamily,
    BivEvSpec,
    DependenceFit,
    MaxStableFamily,
    MaxStableSpec,
)

logger = logging.getLogger(__name__)

MS_ORDER = (MaxStableFamily.SMITH, MaxStableFamily.SCHLATHER, MaxStableFamily.BROWN_RESNICK)
BIV_ORDER = (BivEvFamily.HUSLER_REISS, BivEvFamily.LOGISTIC, BivEvFamily.ASYMMETRIC_LOGISTIC)
N_PARAMS = {
    MaxStableFamily.SMITH: 3,
    MaxStableFamily.SCHLATHER: 3,
    MaxStableFamily.BROWN_RESNICK: 2,
    BivEvFamily.HUSLER_REISS: 1,
    BivEvFamily.LOGISTIC: 1,
    BivEvFamily.ASYMMETRIC_LOGISTIC: 2,
}
MIN_PAIR_YEARS = 20
LOGISTIC_INDEPENDENCE = 1.0 - 1e-9


# ====== GEOMETRY ======
def _pair_index(D: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(D, k=1)


def _lags(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    coords = np.asarray(coords, dtype=float)
    i, k = _pair_index(coords.shape[0])
    return i, k, coords[k] - coords[i]


def _semivariogram(dist, rng_, smooth):
    return (np.asarray(dist, dtype=float) / rng_) ** smooth


def _schlather_rho(dist, nugget, rng_, smooth):
    return (1.0 - nugget) * np.exp(-_semivariogram(dist, rng_, smooth))


def _smith_a(h: np.ndarray, params) -> np.ndarray:
    s11, s12, s22 = params
    det = s11 * s22 - s12**2
    q = (s22 * h[..., 0] ** 2 - 2 * s12 * h[..., 0] * h[..., 1] + s11 * h[..., 1] ** 2) / det
    return np.sqrt(np.maximum(q, 0.0))


def _hr_type_a(spec: MaxStableSpec, h: np.ndarray) -> np.ndarray:
    if spec.family == MaxStableFamily.SMITH:
        return _smith_a(h, spec.params)
    rng_, smooth = spec.params
    return np.sqrt(2.0 * _semivariogram(np.linalg.norm(h, axis=-1), rng_, smooth))


# ====== BIVARIATE LOG DENSITIES ======
def _hr_logdens(y1, y2, a):
    a = np.maximum(a, 1e-12)
    lr = np.log(y2 / y1)
    w = a / 2 + lr / a
    v = a / 2 - lr / a
    l1, l2 = np.log(y1), np.log(y2)
    V = stats.norm.cdf(w) / y1 + stats.norm.cdf(v) / y2
    first = stats.norm.logcdf(w) + stats.norm.logcdf(v) - 2 * l1 - 2 * l2
    second = stats.norm.logpdf(w) - np.log(a) - 2 * l1 - l2
    return np.logaddexp(first, second) - V


def _schlather_logdens(y1, y2, rho):
    Q = np.sqrt(y1**2 - 2 * rho * y1 * y2 + y2**2)
    N = y1 + y2 + Q
    Q1 = (y1 - rho * y2) / Q
    Q2 = (y2 - rho * y1) / Q
    Q12 = -(1 - rho**2) * y1 * y2 / Q**3
    p = y1 * y2
    V = N / (2 * p)
    V1 = (1 + Q1) / (2 * p) - N / (2 * y1 * p)
    V2 = (1 + Q2) / (2 * p) - N / (2 * y2 * p)
    V12 = Q12 / (2 * p) - (1 + Q1) / (2 * y2 * p) - (1 + Q2) / (2 * y1 * p) + N / (2 * p * p)
    dens = V1 * V2 - V12
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(dens > 0, np.log(np.where(dens > 0, dens, 1.0)), -np.inf) - V


def _alog_logdens(y1, y2, r, t1):
    """Asymmetric logistic with t2 = 1; t1 = 1 gives the logistic model."""
    l1, l2 = np.log(y1), np.log(y2)
    with np.errstate(divide="ignore"):
        la1 = (np.log(t1) - l1) / r
        log_keep = np.log1p(-t1) if t1 < 1 else -np.inf
    la2 = -l2 / r
    lS = np.logaddexp(la1, la2)
    V = (1 - t1) / y1 + np.exp(r * lS)
    A = np.logaddexp(log_keep - 2 * l1, (r - 1) * lS + la1 - l1)
    term1 = A + (r - 1) * lS + la2 - l2
    if r >= 1:
        return term1 - V
    term2 = np.log((1 - r) / r) + (r - 2) * lS + la1 + la2 - l1 - l2
    return np.logaddexp(term1, term2) - V


def biv_log_density(y1, y2, spec: BivEvSpec):
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    if spec.family == BivEvFamily.HUSLER_REISS:
        return _hr_logdens(y1, y2, spec.params[0])
    if spec.family == BivEvFamily.LOGISTIC:
        return _alog_logdens(y1, y2, spec.params[0], 1.0)
    r, t1 = spec.params
    return _alog_logdens(y1, y2, r, t1)


def pairwise_loglik(frechet: np.ndarray, coords: np.ndarray, spec: MaxStableSpec) -> np.ndarray:
    """Composite log-likelihood contribution of each year, summed over all pairs."""
    Y = np.asarray(frechet, dtype=float)
    i, k, h = _lags(coords)
    y1, y2 = Y[:, i], Y[:, k]
    with np.errstate(all="ignore"):
        if spec.family == MaxStableFamily.SCHLATHER:
            nugget, rng_, smooth = spec.params
            rho = _schlather_rho(np.linalg.norm(h, axis=-1), nugget, rng_, smooth)
            ll = _schlather_logdens(y1, y2, rho)
        else:
            ll = _hr_logdens(y1, y2, _hr_type_a(spec, h))
    return ll.sum(axis=1)


# ====== EXTREMAL COEFFICIENTS ======
def extremal_coefficient(spec: MaxStableSpec | BivEvSpec, h=None):
    """theta in [1, 2]; max-stable families need the lag h (a 2-vector, or a distance for isotropic ones)."""
    if isinstance(spec, BivEvSpec):
        if spec.family == BivEvFamily.HUSLER_REISS:
            return float(2 * stats.norm.cdf(spec.params[0] / 2))
        if spec.family == BivEvFamily.LOGISTIC:
            return float(2 ** spec.params[0])
        r, t1 = spec.params
        return float((1 - t1) + (t1 ** (1 / r) + 1) ** r)
    if h is None:
        raise DomainError("max-stable extremal coefficients need a lag")
    h = np.asarray(h, dtype=float)
    if spec.family == MaxStableFamily.SMITH:
        if h.shape[-1:] != (2,):
            raise DomainError("Smith extremal coefficient needs a 2-vector lag")
        out = 2 * stats.norm.cdf(_smith_a(h, spec.params) / 2)
    else:
        dist = np.linalg.norm(h, axis=-1) if h.ndim and h.shape[-1:] == (2,) else np.abs(h)
        if spec.family == MaxStableFamily.SCHLATHER:
            out = 1 + np.sqrt((1 - _schlather_rho(dist, *spec.params)) / 2)
        else:
            out = 2 * stats.norm.cdf(np.sqrt(_semivariogram(dist, *spec.params) / 2))
    out = np.clip(out, 1.0, 2.0)
    return out if out.ndim else float(out)


def empirical_extremal_coefficient(y1, y2) -> float:
    """Madogram estimate from unit-Frechet samples."""
    F1 = np.exp(-1.0 / np.asarray(y1, dtype=float))
    F2 = np.exp(-1.0 / np.asarray(y2, dtype=float))
    nu = 0.5 * np.mean(np.abs(F1 - F2))
    return float(np.clip((1 + 2 * nu) / (1 - 2 * nu), 1.0, 2.0))


# ====== FITTING ======
class _Candidate:
    """Optimizer view of one family: bounds, which bounds are excluded limits, spec builder."""

    def __init__(self, family, bounds, open_bounds, to_spec, starts):
        self.family = family
        self.bounds = bounds
        self.open_bounds = open_bounds  # (index, side) with side 0 = lower, 1 = upper
        self.to_spec = to_spec
        self.starts = starts


def _smith_spec(v) -> MaxStableSpec:
    l11, l21, l22 = v
    return MaxStableSpec(family=MaxStableFamily.SMITH, params=(l11**2, l11 * l21, l21**2 + l22**2))


def _max_stable_candidate(family: MaxStableFamily, coords: np.ndarray) -> _Candidate:
    _, _, h = _lags(coords)
    dist = np.linalg.norm(h, axis=1)
    dmin, dmax, dmed = dist.min(), dist.max(), float(np.median(dist))
    lo, hi = 1e-2 * dmin, 1e2 * dmax
    if family == MaxStableFamily.SMITH:
        starts = [np.array([s * dmed, 0.0, s * dmed]) for s in (0.5, 1.0, 2.0)]
        return _Candidate(family, [(lo, hi), (-hi, hi), (lo, hi)],
                          [(0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1)], _smith_spec, starts)
    if family == MaxStableFamily.SCHLATHER:
        starts = [np.array([0.1, dmed, 1.0]), np.array([0.1, 0.5 * dmed, 1.5]), np.array([0.3, 2 * dmed, 0.7])]
        return _Candidate(family, [(0.0, 0.99), (lo, hi), (0.05, 2.0)], [(0, 1), (1, 0), (1, 1), (2, 0)],
                          lambda v: MaxStableSpec(family=family, params=tuple(float(p) for p in v)), starts)
    starts = [np.array([dmed, 1.0]), np.array([0.5 * dmed, 1.5]), np.array([2 * dmed, 0.7])]
    return _Candidate(family, [(lo, hi), (0.05, 2.0)], [(0, 0), (0, 1), (1, 0)],
                      lambda v: MaxStableSpec(family=family, params=tuple(float(p) for p in v)), starts)


def _biv_candidate(family: BivEvFamily, pair: np.ndarray) -> _Candidate:
    theta0 = float(np.clip(empirical_extremal_coefficient(pair[:, 0], pair[:, 1]), 1.05, 1.95))
    if family == BivEvFamily.HUSLER_REISS:
        lam = 2 * stats.norm.ppf(theta0 / 2)
        return _Candidate(family, [(1e-3, 50.0)], [(0, 0), (0, 1)],
                          lambda v: BivEvSpec(family=family, params=(float(v[0]),)),
                          [np.array([lam]), np.array([1.0])])
    r0 = float(np.clip(np.log2(theta0), 0.05, 0.95))
    if family == BivEvFamily.LOGISTIC:
        return _Candidate(family, [(0.02, 1.0)], [(0, 0)],
                          lambda v: BivEvSpec(family=family, params=(float(v[0]),)),
                          [np.array([r0]), np.array([0.5])])
    return _Candidate(family, [(0.02, 1.0), (0.0, 1.0)], [(0, 0)],
                      lambda v: BivEvSpec(family=family, params=(float(v[0]), float(v[1]))),
                      [np.array([r0, 0.9]), np.array([r0, 0.5])])


def _pinned(v: np.ndarray, bounds) -> list[tuple[int, int]]:
    hits = []
    for idx, (lo, hi) in enumerate(bounds):
        for side, bound in enumerate((lo, hi)):
            if np.isclose(v[idx], bound, rtol=1e-6, atol=1e-9):
                hits.append((idx, side))
    return hits


def _fit_candidate(
    cand: _Candidate,
    per_year: Callable[[np.ndarray], np.ndarray],
    n: int,
    criterion: str,
) -> DependenceFit:
    def objective(v):
        try:
            val = per_year(v).sum()
        except ValueError:
            return 1e300
        return -val if np.isfinite(val) else 1e300

    start = min(cand.starts, key=objective)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = optimize.minimize(objective, start, method="L-BFGS-B", bounds=cand.bounds)
    v = np.asarray(res.x, dtype=float)
    loglik = -float(res.fun)
    if not np.isfinite(loglik) or res.fun >= 1e300:
        raise FitError(f"{cand.family.value} fit failed", diagnostics={"message": str(res.message)})

    hits = _pinned(v, cand.bounds)
    at_boundary = bool(hits)
    excluded = [h for h in hits if h in cand.open_bounds]
    # L-BFGS-B line-search stops near a flat optimum are accepted; excluded limits are not
    converged = not excluded
    p = len(v)
    spec = cand.to_spec(v)
    message = str(res.message)
    if at_boundary:
        msg = f"{cand.family.value}: parameters {v.round(6).tolist()} at a constraint boundary"
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        logger.warning(msg)
        message = msg

    if criterion == "aic":
        score = 2 * p - 2 * loglik
    else:
        score = _clic(per_year, v, n, loglik)
        if not np.isfinite(score):
            logger.warning("%s: CLIC penalty not finite; using 2p", cand.family.value)
            score = -2 * loglik + 2 * p
    return DependenceFit(spec=spec, criterion=float(score), loglik=loglik, converged=converged,
                         at_boundary=at_boundary, n_params=p, message=message)


def _clic(per_year: Callable[[np.ndarray], np.ndarray], v: np.ndarray, n: int, loglik: float) -> float:
    """-2 l_p + 2 tr(J^-1 K), J the negative mean composite Hessian, K the score covariance."""
    p = len(v)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            scores = np.asarray(nd.Jacobian(per_year)(v), dtype=float).reshape(n, p)
            H = np.asarray(nd.Hessian(lambda t: per_year(t).sum())(v), dtype=float).reshape(p, p)
    except (ValueError, np.linalg.LinAlgError):
        return np.nan
    if not (np.all(np.isfinite(scores)) and np.all(np.isfinite(H))):
        return np.nan
    J = -H / n
    K = np.cov(scores, rowvar=False, bias=True).reshape(p, p)
    try:
        penalty = float(np.trace(np.linalg.solve(J, K)))
    except np.linalg.LinAlgError:
        return np.nan
    return -2 * loglik + 2 * penalty


def fit_max_stable(frechet: np.ndarray, coords: np.ndarray, family: MaxStableFamily) -> DependenceFit:
    Y = np.asarray(frechet, dtype=float)
    coords = np.asarray(coords, dtype=float)
    if Y.ndim != 2 or Y.shape[1] < 2:
        raise DomainError("max-stable fitting needs at least two locations")
    if coords.shape != (Y.shape[1], 2):
        raise DomainError("one coordinate pair per column required")
    family = MaxStableFamily(family)
    cand = _max_stable_candidate(family, coords)

    def per_year(v):
        return pairwise_loglik(Y, coords, cand.to_spec(v))

    fit = _fit_candidate(cand, per_year, Y.shape[0], "clic")
    logger.debug("max-stable %s: loglik=%.3f CLIC=%.3f", family.value, fit.loglik, fit.criterion)
    return fit


def fit_biv_ev(pair: np.ndarray, family: BivEvFamily) -> DependenceFit:
    Y = np.asarray(pair, dtype=float)
    if Y.ndim != 2 or Y.shape[1] != 2:
        raise DomainError("bivariate fitting needs an n x 2 sample")
    if Y.shape[0] < MIN_PAIR_YEARS:
        raise DomainError(f"at least {MIN_PAIR_YEARS} pairs required, got {Y.shape[0]}")
    family = BivEvFamily(family)
    cand = _biv_candidate(family, Y)

    def per_year(v):
        with np.errstate(all="ignore"):
            return biv_log_density(Y[:, 0], Y[:, 1], cand.to_spec(v))

    fit = _fit_candidate(cand, per_year, Y.shape[0], "aic")
    logger.debug("bivariate %s: loglik=%.3f AIC=%.3f", family.value, fit.loglik, fit.criterion)
    return fit


def _select(fits: list[DependenceFit], order: Sequence) -> DependenceFit:
    converged = [f for f in fits if f.converged]
    pool = converged
    if not pool:
        pool = [f for f in fits if np.isfinite(f.criterion)]
        if pool:
            msg = "no candidate converged away from its limits; selecting among boundary fits"
            warnings.warn(msg, RuntimeWarning, stacklevel=3)
            logger.warning(msg)
    if not pool:
        raise SelectionError("all candidate dependence models failed")
    return min(pool, key=lambda f: (round(f.criterion, 8), f.n_params, list(order).index(f.spec.family)))


def select_max_stable(frechet, coords, families: Sequence[MaxStableFamily] = MS_ORDER) -> DependenceFit:
    fits = []
    for family in families:
        try:
            fits.append(fit_max_stable(frechet, coords, family))
        except (FitError, ValueError) as e:
            logger.warning("max-stable family %s failed: %s", MaxStableFamily(family).value, e)
    best = _select(fits, MS_ORDER)
    logger.info("selected max-stable model %s (CLIC %.2f)", best.family, best.criterion)
    return best


def select_biv_ev(pair, families: Sequence[BivEvFamily] = BIV_ORDER) -> DependenceFit:
    fits = []
    for family in families:
        try:
            fits.append(fit_biv_ev(pair, family))
        except (FitError, ValueError) as e:
            logger.warning("bivariate family %s failed: %s", BivEvFamily(family).value, e)
    return _select(fits, BIV_ORDER)


# ====== SIMULATION ======
ExtremalSampler = Callable[[int, int, np.random.Generator], np.ndarray]


def _simulate_extremal(sampler: ExtremalSampler, D: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Exact simulation of n max-stable vectors from the extremal functions at each site."""
    Z = np.zeros((n, D))
    for j in range(D):
        arrivals = rng.exponential(size=n)
        active = 1.0 / arrivals > Z[:, j]
        while active.any():
            idx = np.flatnonzero(active)
            cand = sampler(j, idx.size, rng) / arrivals[idx, None]
            keep = np.all(cand[:, :j] < Z[idx, :j], axis=1) if j else np.ones(idx.size, dtype=bool)
            rows = idx[keep]
            Z[rows] = np.maximum(Z[rows], cand[keep])
            arrivals[idx] += rng.exponential(size=idx.size)
            active[idx] = 1.0 / arrivals[idx] > Z[idx, j]
    return Z


def _psd_factor(M: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _smith_sampler(spec: MaxStableSpec, coords: np.ndarray) -> ExtremalSampler:
    s11, s12, s22 = spec.params
    cov = np.array([[s11, s12], [s12, s22]])
    L = np.linalg.cholesky(cov)
    prec = np.linalg.inv(cov)

    def sample(j, m, rng):
        U = coords[j] + rng.standard_normal((m, 2)) @ L.T
        diff = coords[None, :, :] - U[:, None, :]
        q = np.einsum("mda,ab,mdb->md", diff, prec, diff)
        return np.exp(-0.5 * (q - q[:, j:j + 1]))

    return sample


def _brown_resnick_sampler(spec: MaxStableSpec, coords: np.ndarray) -> ExtremalSampler:
    rng_, smooth = spec.params
    dist = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)
    vario = _semivariogram(dist, rng_, smooth)
    factors = [_psd_factor(vario[:, j][:, None] + vario[:, j][None, :] - vario) for j in range(len(coords))]

    def sample(j, m, rng):
        G = rng.standard_normal((m, len(coords))) @ factors[j].T
        return np.exp(G - vario[:, j])

    return sample


def _schlather_sampler(spec: MaxStableSpec, coords: np.ndarray) -> ExtremalSampler:
    nugget, rng_, smooth = spec.params
    dist = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)
    R = _schlather_rho(dist, nugget, rng_, smooth)
    np.fill_diagonal(R, 1.0)
    F = _psd_factor(R)

    def sample(j, m, rng):
        G = rng.standard_normal((m, len(coords))) @ F.T
        w = np.sqrt(2.0 * rng.exponential(size=m))
        W = G - np.outer(G[:, j], R[j]) + np.outer(w, R[j])
        return np.maximum(W, 0.0) / w[:, None]

    return sample


def simulate_max_stable(spec: MaxStableSpec, coords, n: int, rng: np.random.Generator) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    builders = {
        MaxStableFamily.SMITH: _smith_sampler,
        MaxStableFamily.SCHLATHER: _schlather_sampler,
        MaxStableFamily.BROWN_RESNICK: _brown_resnick_sampler,
    }
    return _simulate_extremal(builders[spec.family](spec, coords), coords.shape[0], n, rng)


def _hr_sampler(lam: float) -> ExtremalSampler:
    def sample(j, m, rng):
        Y = np.ones((m, 2))
        Y[:, 1 - j] = np.exp(lam * rng.standard_normal(m) - lam**2 / 2)
        return Y

    return sample


def _logistic_sampler(r: float) -> ExtremalSampler:
    def sample(j, m, rng):
        Y = np.ones((m, 2))
        tilted = rng.gamma(1.0 - r, size=m)
        Y[:, 1 - j] = (tilted / rng.exponential(size=m)) ** r
        return Y

    return sample


def _simulate_logistic(r: float, n: int, rng: np.random.Generator) -> np.ndarray:
    if r >= LOGISTIC_INDEPENDENCE:
        return 1.0 / rng.exponential(size=(n, 2))
    return _simulate_extremal(_logistic_sampler(r), 2, n, rng)


def simulate_biv_ev(spec: BivEvSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if spec.family == BivEvFamily.HUSLER_REISS:
        return _simulate_extremal(_hr_sampler(spec.params[0]), 2, n, rng)
    if spec.family == BivEvFamily.LOGISTIC:
        return _simulate_logistic(spec.params[0], n, rng)
    # componentwise max of an independent part at site 1 and a logistic pair
    r, t1 = spec.params
    L = _simulate_logistic(r, n, rng)
    lone = 1.0 / rng.exponential(size=n)
    out = L.copy()
    out[:, 0] = np.maximum((1 - t1) * lone, t1 * L[:, 0])
    return out


def simulate_dependence(spec: MaxStableSpec | BivEvSpec | None, coords, n: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-Frechet fields; ``spec=None`` means independent sites."""
    if spec is None:
        D = len(coords)
        return 1.0 / rng.exponential(size=(n, D))
    if isinstance(spec, BivEvSpec):
        return simulate_biv_ev(spec, n, rng)
    return simulate_max_stable(spec, coords, n, rng)
