"""GEV primitives, the scale-GEV temporal model and its maximum-likelihood fits.

The scale-GEV model lets location and scale share an exponential trend in a
scalar covariate c::

    mu(c) = mu * exp(alpha * c / mu),  sigma(c) = sigma * exp(alpha * c / mu)

with a constant shape gamma. Scores and Hessians are analytic: the standardized
GEV derivatives at (0, 1, gamma) are pushed through the Jacobian of
theta -> (mu(c), sigma(c), gamma).
"""

from __future__ import annotations

import logging
import warnings

import numdifftools as nd
import numpy as np
from scipy import optimize, special

from regionpool.domain.errors import DegenerateDataError, DomainError, FitError
from regionpool.domain.models import (
    BlockMaximaPanel,
    CovariateSeries,
    FitReport,
    GevParams,
    LocalScalingFit,
    ScaleGevParams,
)

logger = logging.getLogger(__name__)

GUMBEL_TOL = 1e-6
FRECHET_FLOOR = 1e-10
SHAPE_LIMIT = -0.5
SHAPE_BARRIER_START = -0.4
MIN_YEARS = 20
EULER_GAMMA = 0.5772156649015329


def _is_gumbel(gamma: float) -> bool:
    return abs(gamma) < GUMBEL_TOL


def _as_covariate(covariate) -> np.ndarray:
    if isinstance(covariate, CovariateSeries):
        return covariate.values
    return np.asarray(covariate, dtype=float)


# ====== PLAIN GEV ======
def gev_cdf(x, p: GevParams):
    """G(x) for GEV(mu, sigma, gamma); 0 below / 1 above the support."""
    z = (np.asarray(x, dtype=float) - p.mu) / p.sigma
    if _is_gumbel(p.gamma):
        out = np.exp(-np.exp(-z))
    else:
        w = 1.0 + p.gamma * z
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            t = np.where(w > 0, np.power(np.where(w > 0, w, 1.0), -1.0 / p.gamma), np.inf)
        out = np.where(w > 0, np.exp(-t), 0.0 if p.gamma > 0 else 1.0)
    return out if out.ndim else float(out)


def gev_quantile(q, p: GevParams):
    q = np.asarray(q, dtype=float)
    if np.any((q <= 0) | (q >= 1)):
        raise DomainError("quantile level must lie strictly between 0 and 1")
    y = -np.log(q)
    if _is_gumbel(p.gamma):
        out = p.mu - p.sigma * np.log(y)
    else:
        out = p.mu + p.sigma * np.expm1(-p.gamma * np.log(y)) / p.gamma
    return out if out.ndim else float(out)


def gev_log_density(x, p: GevParams):
    z = (np.asarray(x, dtype=float) - p.mu) / p.sigma
    if _is_gumbel(p.gamma):
        out = -np.log(p.sigma) - z - np.exp(-z)
    else:
        w = 1.0 + p.gamma * z
        safe = np.where(w > 0, w, 1.0)
        val = -np.log(p.sigma) - (1.0 + 1.0 / p.gamma) * np.log(safe) - np.power(safe, -1.0 / p.gamma)
        out = np.where(w > 0, val, -np.inf)
    return out if out.ndim else float(out)


def gev_pwm_start(series) -> GevParams:
    """Probability-weighted-moment estimates of a stationary GEV."""
    x = np.sort(np.asarray(series, dtype=float))
    n = len(x)
    j = np.arange(n)
    b0 = x.mean()
    b1 = np.sum(j * x) / (n * (n - 1))
    b2 = np.sum(j * (j - 1) * x) / (n * (n - 1) * (n - 2))
    l2 = 2 * b1 - b0
    t3 = (3 * b2 - b0) / l2 if l2 > 0 else 0.0
    c = 2.0 / (3.0 + t3) - np.log(2) / np.log(3)
    k = 7.859 * c + 2.9554 * c**2  # k = -gamma
    k = float(np.clip(k, -0.5, 0.4))
    if abs(k) < 1e-4 or l2 <= 0:
        sigma = max(l2, 1e-8) / np.log(2)
        return GevParams(mu=b0 - EULER_GAMMA * sigma, sigma=sigma, gamma=0.0)
    g = special.gamma(1.0 + k)
    sigma = l2 * k / (g * (1.0 - 2.0**-k))
    mu = b0 + sigma * (g - 1.0) / k
    return GevParams(mu=mu, sigma=sigma, gamma=-k)


# ====== SCALE-GEV MODEL ======
def effective_params(theta: ScaleGevParams, c: float) -> GevParams:
    factor = np.exp(theta.alpha * c / theta.mu)
    return GevParams(mu=theta.mu * factor, sigma=theta.sigma * factor, gamma=theta.gamma)


def effective_arrays(th: np.ndarray, c: np.ndarray):
    mu, sigma, _, alpha = th
    factor = np.exp(alpha * c / mu)
    return mu * factor, sigma * factor


def _log_density_arrays(x: np.ndarray, c: np.ndarray, th: np.ndarray) -> np.ndarray:
    mu_c, sigma_c = effective_arrays(th, c)
    gamma = th[2]
    z = (x - mu_c) / sigma_c
    if _is_gumbel(gamma):
        return -np.log(sigma_c) - z - np.exp(-z)
    w = 1.0 + gamma * z
    safe = np.where(w > 0, w, 1.0)
    lw = np.log(safe)
    val = -np.log(sigma_c) - (1.0 + 1.0 / gamma) * lw - np.exp(-lw / gamma)
    return np.where(w > 0, val, -np.inf)


def scale_gev_log_density(x, c, theta: ScaleGevParams):
    th = theta.as_array()
    out = _log_density_arrays(np.asarray(x, dtype=float), np.asarray(c, dtype=float), th)
    return out if out.ndim else float(out)


def scale_gev_loglik(series, covariate, theta: ScaleGevParams) -> float:
    return float(np.sum(scale_gev_log_density(series, _as_covariate(covariate), theta)))


# ====== DERIVATIVES ======
def _standardized_derivatives(z: np.ndarray, gamma: float):
    """(f_z, f_zz, f_g, f_zg, f_gg) of f(z, g) = log GEV(0, 1, g) density."""
    if _is_gumbel(gamma):
        u = np.exp(-z)
        L_g = z**2 / 2
        L_gg = -2.0 * z**3 / 3
        f_z = u - 1.0
        f_zz = -u
        f_g = (1.0 - u) * L_g - z
        f_zg = u * L_g - 1.0 - (u - 1.0) * z
        f_gg = (2.0 - u * L_g) * L_g + (1.0 - u) * L_gg
        return f_z, f_zz, f_g, f_zg, f_gg
    w = 1.0 + gamma * z
    lw = np.log1p(gamma * z)
    L = -lw / gamma
    u = np.exp(L)
    L_g = lw / gamma**2 - z / (gamma * w)
    L_gg = 2.0 * z / (gamma**2 * w) - 2.0 * lw / gamma**3 + z**2 / (gamma * w**2)
    f_z = (u - 1.0 - gamma) / w
    f_zz = (1.0 + gamma) * (gamma - u) / w**2
    f_g = (gamma + 1.0 - u) * L_g + L
    f_zg = ((u * L_g - 1.0) * w - (u - 1.0 - gamma) * z) / w**2
    f_gg = (2.0 - u * L_g) * L_g + (gamma + 1.0 - u) * L_gg
    return f_z, f_zz, f_g, f_zg, f_gg


def standardized_score(z, gamma: float) -> np.ndarray:
    """Score of the plain GEV log density at (0, 1, gamma), shape (..., 3)."""
    z = np.asarray(z, dtype=float)
    f_z, _, f_g, _, _ = _standardized_derivatives(z, gamma)
    return np.stack([-f_z, -1.0 - z * f_z, f_g], axis=-1)


def standardized_hessian(z, gamma: float) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    f_z, f_zz, _, f_zg, f_gg = _standardized_derivatives(z, gamma)
    H = np.empty(z.shape + (3, 3))
    H[..., 0, 0] = f_zz
    H[..., 0, 1] = H[..., 1, 0] = z * f_zz + f_z
    H[..., 1, 1] = 1.0 + z**2 * f_zz + 2.0 * z * f_z
    H[..., 0, 2] = H[..., 2, 0] = -f_zg
    H[..., 1, 2] = H[..., 2, 1] = -z * f_zg
    H[..., 2, 2] = f_gg
    return H


def chain_matrix(c, theta) -> np.ndarray:
    """B_c: Jacobian of theta -> (mu(c), sigma(c), gamma), rows (mu, sigma, gamma, alpha)."""
    th = theta.as_array() if isinstance(theta, ScaleGevParams) else np.asarray(theta, dtype=float)
    mu, sigma, _, alpha = th
    c = np.asarray(c, dtype=float)
    s = alpha * c / mu
    e = np.exp(s)
    B = np.zeros(c.shape + (4, 3))
    B[..., 0, 0] = e * (1.0 - s)
    B[..., 0, 1] = -sigma * e * s / mu
    B[..., 1, 1] = e
    B[..., 2, 2] = 1.0
    B[..., 3, 0] = c * e
    B[..., 3, 1] = sigma * c * e / mu
    return B


def _chain_second(c: np.ndarray, th: np.ndarray) -> np.ndarray:
    """Second derivatives of mu(c) and sigma(c) in theta, shape (..., 2, 4, 4)."""
    mu, sigma, _, alpha = th
    s = alpha * c / mu
    e = np.exp(s)
    P = np.zeros(c.shape + (2, 4, 4))
    # mu(c)
    P[..., 0, 0, 0] = e * s**2 / mu
    P[..., 0, 0, 3] = P[..., 0, 3, 0] = -e * s * c / mu
    P[..., 0, 3, 3] = c**2 * e / mu
    # sigma(c)
    P[..., 1, 0, 0] = sigma * e * (s**2 / mu**2 + 2.0 * alpha * c / mu**3)
    P[..., 1, 0, 1] = P[..., 1, 1, 0] = -e * s / mu
    P[..., 1, 0, 3] = P[..., 1, 3, 0] = -sigma * e * c * (1.0 + s) / mu**2
    P[..., 1, 1, 3] = P[..., 1, 3, 1] = e * c / mu
    P[..., 1, 3, 3] = sigma * c**2 * e / mu**2
    return P


def _standardize(x: np.ndarray, c: np.ndarray, th: np.ndarray):
    mu_c, sigma_c = effective_arrays(th, c)
    z = (x - mu_c) / sigma_c
    gamma = th[2]
    if not _is_gumbel(gamma) and np.any(1.0 + gamma * z <= 0):
        raise DomainError("observation on or outside the support boundary")
    return z, sigma_c


def score_matrix(x, c, theta: ScaleGevParams) -> np.ndarray:
    """Per-observation scores, shape (n, 4)."""
    th = theta.as_array()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    c = np.broadcast_to(np.asarray(c, dtype=float), x.shape)
    z, sigma_c = _standardize(x, c, th)
    s0 = standardized_score(z, th[2])
    g = s0 / np.stack([sigma_c, sigma_c, np.ones_like(sigma_c)], axis=-1)
    return np.einsum("nij,nj->ni", chain_matrix(c, th), g)


def score(x: float, c: float, theta: ScaleGevParams) -> np.ndarray:
    return score_matrix([x], [c], theta)[0]


def hessian_matrices(x, c, theta: ScaleGevParams) -> np.ndarray:
    """Per-observation Hessians, shape (n, 4, 4)."""
    th = theta.as_array()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    c = np.broadcast_to(np.asarray(c, dtype=float), x.shape)
    z, sigma_c = _standardize(x, c, th)
    tinv = np.stack([1.0 / sigma_c, 1.0 / sigma_c, np.ones_like(sigma_c)], axis=-1)
    g = standardized_score(z, th[2]) * tinv
    H_plain = standardized_hessian(z, th[2]) * tinv[..., :, None] * tinv[..., None, :]
    B = chain_matrix(c, th)
    H = np.einsum("nia,nab,njb->nij", B, H_plain, B)
    H += np.einsum("nk,nkij->nij", g[..., :2], _chain_second(c, th))
    return H


def hessian(x: float, c: float, theta: ScaleGevParams) -> np.ndarray:
    return hessian_matrices([x], [c], theta)[0]


def mean_hessian(series, covariate, theta: ScaleGevParams) -> np.ndarray:
    """Analytic Hessian of the mean log-likelihood."""
    return hessian_matrices(series, _as_covariate(covariate), theta).mean(axis=0)


# ====== FITTING ======
def _shape_barrier(gamma: float) -> tuple[float, float]:
    """Penalty and its derivative, zero above SHAPE_BARRIER_START and infinite at SHAPE_LIMIT."""
    if gamma >= SHAPE_BARRIER_START:
        return 0.0, 0.0
    if gamma <= SHAPE_LIMIT:
        return np.inf, 0.0
    a = SHAPE_BARRIER_START - gamma
    b = gamma - SHAPE_LIMIT
    pen = (a / b) ** 2
    dpen = 2.0 * (a / b) * (-b - a) / b**2
    return pen, dpen


def _nllh(th: np.ndarray, x: np.ndarray, c: np.ndarray) -> float:
    if th[0] <= 0 or th[1] <= 0 or not np.all(np.isfinite(th)):
        return np.inf
    pen, _ = _shape_barrier(th[2])
    if not np.isfinite(pen):
        return np.inf
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        ll = _log_density_arrays(x, c, th)
    total = ll.sum()
    if not np.isfinite(total):
        return np.inf
    return -total + pen


def _nllh_grad(th: np.ndarray, x: np.ndarray, c: np.ndarray) -> np.ndarray:
    if not np.isfinite(_nllh(th, x, c)):
        return np.zeros(4)
    grad = -score_matrix(x, c, ScaleGevParams.from_array(th)).sum(axis=0)
    grad[2] += _shape_barrier(th[2])[1]
    return grad


def _feasible_start(x: np.ndarray, c: np.ndarray, start: np.ndarray) -> np.ndarray:
    th = start.copy()
    th[0] = max(th[0], 1e-3 * max(np.std(x), 1e-8))
    for _ in range(60):
        if np.isfinite(_nllh(th, x, c)):
            return th
        th[2] *= 0.5
        th[1] *= 1.25
    raise FitError("no admissible starting value found", diagnostics={"start": start.tolist()})


def _numeric_mean_hessian(x: np.ndarray, c: np.ndarray, th: np.ndarray) -> np.ndarray | None:
    def mean_loglik(t):
        with np.errstate(all="ignore"):
            return float(np.mean(_log_density_arrays(x, c, t))) if t[0] > 0 and t[1] > 0 else -np.inf

    try:
        H = nd.Hessian(mean_loglik, method="central")(th)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError):
        return None
    H = np.asarray(H, dtype=float)
    if not np.all(np.isfinite(H)):
        return None
    return 0.5 * (H + H.T)


def fit_scale_gev(
    series,
    covariate,
    start: ScaleGevParams | None = None,
    hessian: str = "numeric",
) -> FitReport:
    """Maximum-likelihood fit of the scale-GEV model to one series.

    Nelder-Mead from probability-weighted-moment starting values (alpha = 0),
    refined by BFGS with the analytic score; the better of the two is kept.
    """
    x = np.asarray(series, dtype=float)
    c = _as_covariate(covariate)
    if x.shape != c.shape:
        raise DomainError(f"series length {len(x)} != covariate length {len(c)}")
    if len(x) < MIN_YEARS:
        raise DomainError(f"at least {MIN_YEARS} observations required, got {len(x)}")
    if np.ptp(x) == 0:
        raise DegenerateDataError("all observations are equal", diagnostics={"value": float(x[0])})

    if start is None:
        pwm = gev_pwm_start(x)
        x0 = np.array([pwm.mu, pwm.sigma, pwm.gamma, 0.0])
    else:
        x0 = start.as_array()
    x0 = _feasible_start(x, c, x0)

    simplex = np.tile(x0, (5, 1))
    simplex[1, 0] += 0.1 * x0[0]
    simplex[2, 1] += 0.1 * x0[1]
    simplex[3, 2] += 0.1
    simplex[4, 3] += 0.2 * x0[1]
    nm = optimize.minimize(
        _nllh, x0, args=(x, c), method="Nelder-Mead",
        options={"initial_simplex": simplex, "maxiter": 4000, "xatol": 1e-7, "fatol": 1e-9},
    )
    best, n_iter = nm, nm.nit

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            qn = optimize.minimize(_nllh, nm.x, args=(x, c), jac=_nllh_grad, method="BFGS",
                                   options={"gtol": 1e-6, "maxiter": 500})
        n_iter += qn.nit
        if np.isfinite(qn.fun) and qn.fun <= nm.fun:
            best = qn
    except (DomainError, FloatingPointError) as e:
        logger.debug("BFGS refinement skipped: %s", e)

    th = np.asarray(best.x, dtype=float)
    nllh = float(best.fun)
    grad_ok = np.isfinite(nllh) and np.max(np.abs(_nllh_grad(th, x, c))) / len(x) < 1e-3
    converged = bool(np.isfinite(nllh) and (nm.success or best.success or grad_ok))
    diagnostics = {"nllh": nllh, "params": th.tolist(), "message": str(best.message), "n_iter": n_iter}
    if not converged:
        raise FitError("optimizer did not converge", diagnostics=diagnostics)

    params = ScaleGevParams.from_array(th)
    notes: list[str] = []
    H = None
    if hessian == "numeric":
        H = _numeric_mean_hessian(x, c, th)
        if H is None:
            notes.append("numeric Hessian not finite; analytic Hessian used")
    if H is None:
        H = mean_hessian(x, c, params)
    for note in notes:
        logger.warning(note)

    logger.debug("scale-GEV fit n=%d nllh=%.4f params=%s", len(x), nllh, th)
    return FitReport(params=params, nllh=nllh, converged=True, n_iter=int(n_iter),
                     message=str(best.message), hessian=H, n=len(x), warnings=notes)


def fit_pooled_scale_gev(
    panel: BlockMaximaPanel,
    A,
    start: ScaleGevParams | None = None,
    hessian: str = "numeric",
) -> FitReport:
    """Fit one scale-GEV model to the concatenated columns in A."""
    A = sorted({int(d) for d in A})
    if not A:
        raise DomainError("pooling set must not be empty")
    if A[0] < 0 or A[-1] >= panel.D:
        raise DomainError(f"pooling set {A} out of range for {panel.D} locations")
    series = panel.maxima[:, A].T.reshape(-1)
    covariate = np.tile(panel.covariate.values, len(A))
    return fit_scale_gev(series, covariate, start=start, hessian=hessian)


def fit_panel(panel: BlockMaximaPanel, hessian: str = "numeric") -> list[FitReport]:
    return [fit_scale_gev(panel.column(d), panel.covariate, hessian=hessian) for d in range(panel.D)]


# ====== LOCAL SCALING (INDEX FLOOD) ======
def _ls_unpack(v: np.ndarray):
    delta, eta, gamma = v[:3]
    mus = v[3:]
    return delta, eta, gamma, mus


def _ls_nllh(v: np.ndarray, X: np.ndarray, c: np.ndarray) -> float:
    delta, eta, gamma, mus = _ls_unpack(v)
    if delta <= 0 or np.any(mus <= 0):
        return np.inf
    total = 0.0
    for j, m in enumerate(mus):
        val = _nllh(np.array([m, m / delta, gamma, eta * m]), X[:, j], c)
        if not np.isfinite(val):
            return np.inf
        total += val
    return total


def _ls_grad(v: np.ndarray, X: np.ndarray, c: np.ndarray) -> np.ndarray:
    delta, eta, gamma, mus = _ls_unpack(v)
    if not np.isfinite(_ls_nllh(v, X, c)):
        return np.zeros_like(v)
    grad = np.zeros_like(v)
    for j, m in enumerate(mus):
        th = ScaleGevParams(mu=m, sigma=m / delta, gamma=gamma, alpha=eta * m)
        s = score_matrix(X[:, j], c, th).sum(axis=0)
        grad[0] -= s[1] * (-m / delta**2)
        grad[1] -= s[3] * m
        grad[2] -= s[2]
        grad[3 + j] -= s[0] + s[1] / delta + s[3] * eta
    grad[2] += len(mus) * _shape_barrier(gamma)[1]
    return grad


def fit_local_scaling(panel: BlockMaximaPanel, A) -> LocalScalingFit:
    """Joint fit with shared mu/sigma, alpha/mu and gamma and one mu per location."""
    A = tuple(sorted({int(d) for d in A}))
    if len(A) < 1 or A[0] < 0 or A[-1] >= panel.D:
        raise DomainError(f"invalid location set {A}")
    X = panel.maxima[:, A]
    c = panel.covariate.values
    if X.shape[0] < MIN_YEARS:
        raise DomainError(f"at least {MIN_YEARS} observations required, got {X.shape[0]}")
    if np.any(np.ptp(X, axis=0) == 0):
        raise DegenerateDataError("a column of the local-scaling fit is constant")

    starts = [gev_pwm_start(X[:, j]) for j in range(len(A))]
    mus = np.array([max(s.mu, 1e-3) for s in starts])
    delta = float(np.mean([max(s.mu, 1e-3) / s.sigma for s in starts]))
    gamma = float(np.clip(np.mean([s.gamma for s in starts]), -0.3, 0.4))
    v0 = np.concatenate([[delta, 0.0, gamma], mus])
    for _ in range(60):
        if np.isfinite(_ls_nllh(v0, X, c)):
            break
        v0[0] /= 1.25
        v0[2] *= 0.5
    else:
        raise FitError("no admissible local-scaling starting value found")

    nm = optimize.minimize(_ls_nllh, v0, args=(X, c), method="Nelder-Mead",
                           options={"maxiter": 2000 * len(v0), "xatol": 1e-7, "fatol": 1e-9, "adaptive": True})
    best = nm
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            qn = optimize.minimize(_ls_nllh, nm.x, args=(X, c), jac=_ls_grad, method="BFGS",
                                   options={"gtol": 1e-6, "maxiter": 1000})
        if np.isfinite(qn.fun) and qn.fun <= nm.fun:
            best = qn
    except (DomainError, FloatingPointError) as e:
        logger.debug("local-scaling BFGS refinement skipped: %s", e)

    if not np.isfinite(best.fun):
        raise FitError("local-scaling fit failed", diagnostics={"message": str(best.message)})
    delta, eta, gamma, mus = _ls_unpack(np.asarray(best.x))
    grad = _ls_grad(np.asarray(best.x), X, c)
    converged = bool(nm.success or best.success or np.max(np.abs(grad)) / X.size < 1e-3)
    return LocalScalingFit(delta=float(delta), eta=float(eta), gamma=float(gamma),
                           mus=tuple(float(m) for m in mus), A=A, nllh=float(best.fun),
                           converged=converged, message=str(best.message))


# ====== MARGIN TRANSFORMS ======
def to_frechet(series, theta: ScaleGevParams, covariate) -> np.ndarray:
    """Map block maxima to unit Frechet using the effective parameters of each year.

    Values are clamped to [FRECHET_FLOOR, 1 / FRECHET_FLOOR] where the positive
    part of 1 + gamma * z vanishes.
    """
    x = np.asarray(series, dtype=float)
    mu_c, sigma_c = effective_arrays(theta.as_array(), _as_covariate(covariate))
    z = (x - mu_c) / sigma_c
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        if _is_gumbel(theta.gamma):
            y = np.exp(z)
        else:
            w = np.maximum(1.0 + theta.gamma * z, 0.0)
            y = np.power(w, 1.0 / theta.gamma)
    y = np.where(np.isnan(y), FRECHET_FLOOR, y)
    return np.clip(y, FRECHET_FLOOR, 1.0 / FRECHET_FLOOR)


def from_frechet(y, theta: ScaleGevParams, covariate) -> np.ndarray:
    """Inverse of to_frechet; the covariate runs along the last axis of y."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise DomainError("Frechet values must be positive")
    mu_c, sigma_c = effective_arrays(theta.as_array(), _as_covariate(covariate))
    ly = np.log(y)
    if _is_gumbel(theta.gamma):
        return mu_c + sigma_c * ly
    return mu_c + sigma_c * np.expm1(theta.gamma * ly) / theta.gamma
