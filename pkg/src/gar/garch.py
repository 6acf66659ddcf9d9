"""AR(1)-GARCH(1,1) quantile forecasts with a residual bootstrap.

Model: ``Y[t] = phi0 + phi1 Y[t-1] + sigma[t] Z[t]`` with
``sigma2[t] = omega + alpha e[t-1]^2 + gamma sigma2[t-1]``. Parameters are
estimated by Gaussian quasi-maximum likelihood; the innovation quantile is
taken from a bootstrap of the standardized residuals.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize, signal

from .errors import DegenerateSeries, NoConvergence, NonStationarySolution, TooShort
from .qr_core import check_tau

log = logging.getLogger(__name__)

MIN_LENGTH = 30
STATIONARITY_MARGIN = 1e-6
GRAD_TOL = 1e-5
_STARTS = ((0.05, 0.05), (0.10, 0.80), (0.05, 0.90))


@dataclass(frozen=True)
class GarchParams:
    phi0: float
    phi1: float
    omega: float
    alpha: float
    gamma: float

    def as_array(self) -> np.ndarray:
        return np.array([self.phi0, self.phi1, self.omega, self.alpha, self.gamma])


@dataclass(frozen=True)
class GarchFit:
    params: GarchParams
    standardized_residuals: np.ndarray
    loglik: float
    sigma_path: np.ndarray       # sigma[t] for t = 1..T-1 (the first row has no lag)
    y: np.ndarray
    at_boundary: bool = False
    grad_norm: float = 0.0

    def next_state(self):
        """Mean and standard deviation of the one-step-ahead forecast."""
        p = self.params
        e_last = self.y[-1] - p.phi0 - p.phi1 * self.y[-2]
        s2 = p.omega + p.alpha * e_last**2 + p.gamma * self.sigma_path[-1] ** 2
        return p.phi0 + p.phi1 * self.y[-1], float(np.sqrt(s2))


def _filter(theta, y, h0):
    """Residuals and conditional variances for standardized data."""
    phi0, phi1, omega, alpha, gamma = theta
    e = y[1:] - phi0 - phi1 * y[:-1]
    u = np.empty_like(e)
    u[0] = h0
    u[1:] = omega + alpha * e[:-1] ** 2
    h = signal.lfilter([1.0], [1.0, -gamma], u)
    return e, h


def _nll_grad(theta, y, h0):
    """Mean Gaussian negative log-likelihood (without constants) and its gradient."""
    phi0, phi1, omega, alpha, gamma = theta
    e, h = _filter(theta, y, h0)
    if np.any(h <= 0):
        return np.inf, np.zeros(5)
    n = e.size
    f = 0.5 * np.mean(np.log(h) + e**2 / h)
    dh = 0.5 * (1.0 / h - e**2 / h**2) / n        # d f / d h_t
    de = (e / h) / n                                # d f / d e_t
    ylag = y[:-1]
    # inputs to the h recursion, u_1 is the fixed start value
    g = np.zeros((5, n))
    g[0, 1:] = alpha * 2 * e[:-1] * -1.0
    g[1, 1:] = alpha * 2 * e[:-1] * -ylag[:-1]
    g[2, 1:] = 1.0
    g[3, 1:] = e[:-1] ** 2
    g[4, 1:] = h[:-1]
    dH = signal.lfilter([1.0], [1.0, -gamma], g, axis=1)
    grad = dH @ dh
    grad[0] += -de.sum()
    grad[1] += -(de * ylag).sum()
    return float(f), grad


def _ar1_start(y):
    X = np.column_stack([np.ones(y.size - 1), y[:-1]])
    coef, *_ = np.linalg.lstsq(X, y[1:], rcond=None)
    return coef


def fit_garch(y, strict: bool = False) -> GarchFit:
    """Gaussian QML fit of AR(1)-GARCH(1,1).

    The variance recursion starts at the sample variance of ``y``. Estimation
    runs on ``y / sd(y)`` and is mapped back, so the fit is scale equivariant.
    A solution on the stationarity boundary is returned with
    ``at_boundary=True``; with ``strict`` it raises instead.
    """
    y = np.asarray(y, dtype=float).ravel()
    if y.size < MIN_LENGTH:
        raise TooShort(f"need at least {MIN_LENGTH} observations")
    if not np.all(np.isfinite(y)):
        raise DegenerateSeries("series has non-finite values")
    scale = float(np.std(y))
    if scale <= 1e-12 * max(1.0, float(np.max(np.abs(y)))):
        raise DegenerateSeries("series is constant")
    z = y / scale
    h0 = float(np.var(z))
    c0, c1 = _ar1_start(z)
    bounds = [(None, None), (-0.9999, 0.9999), (1e-8, None), (0.0, 1.0), (0.0, 1.0)]
    cons = [{"type": "ineq", "fun": lambda t: 1.0 - STATIONARITY_MARGIN - t[3] - t[4],
             "jac": lambda t: np.array([0, 0, 0, -1.0, -1.0])}]
    best = None
    for a, g in _STARTS:
        x0 = np.array([c0, c1, h0 * (1 - a - g), a, g])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = optimize.minimize(_nll_grad, x0, args=(z, h0), jac=True, method="SLSQP",
                                    bounds=bounds, constraints=cons,
                                    options={"ftol": 1e-14, "maxiter": 500})
        # later starts must improve clearly, so flat likelihoods keep the first start
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun - 1e-10):
            best = res
    if best is None:
        raise NoConvergence("no start produced a finite likelihood")
    theta = best.x
    f, grad = _nll_grad(theta, z, h0)
    at_boundary = theta[3] + theta[4] >= 1.0 - STATIONARITY_MARGIN - 1e-9
    # gradient components pinned by active bounds do not count
    free = np.ones(5, dtype=bool)
    free[2] = theta[2] > 1e-8 * 1.01
    free[3] = theta[3] > 1e-10 and not at_boundary
    free[4] = theta[4] > 1e-10 and not at_boundary
    grad_norm = float(np.linalg.norm(grad[free]))
    if grad_norm > 100 * GRAD_TOL:
        raise NoConvergence(f"QML gradient norm {grad_norm:.2e} at the returned point")
    if at_boundary:
        if strict:
            raise NonStationarySolution("alpha + gamma reached the stationarity bound")
        log.warning("GARCH fit on the stationarity boundary")
    e, h = _filter(theta, z, h0)
    params = GarchParams(float(theta[0] * scale), float(theta[1]), float(theta[2] * scale**2),
                         float(theta[3]), float(theta[4]))
    sigma = np.sqrt(h) * scale
    n = e.size
    loglik = -(f * n + 0.5 * n * np.log(2 * np.pi)) - n * np.log(scale)
    return GarchFit(params, e / np.sqrt(h), float(loglik), sigma, y, bool(at_boundary),
                    grad_norm)


def bootstrap_quantile(residuals, tau: float, n_boot: int = 100_000, rng=None) -> float:
    """Empirical tau-quantile of ``n_boot`` draws with replacement."""
    tau = check_tau(tau)
    if n_boot < 1000:
        raise ValueError("n_boot must be at least 1000")
    rng = np.random.default_rng(rng)
    draws = rng.choice(np.asarray(residuals, dtype=float), size=n_boot, replace=True)
    return float(np.quantile(draws, tau, method="inverted_cdf"))


def forecast_quantile(fit: GarchFit, tau: float, n_boot: int = 100_000, rng=None,
                      y_last: Optional[float] = None,
                      sigma_next: Optional[float] = None) -> float:
    """``mu[T+1] + sigma[T+1] * F^{-1}(tau)`` with a bootstrapped ``F``.

    ``y_last`` and ``sigma_next`` default to the end of the fitted sample.
    """
    mu, sigma = fit.next_state()
    if y_last is not None:
        mu = fit.params.phi0 + fit.params.phi1 * y_last
    if sigma_next is not None:
        sigma = float(sigma_next)
    return mu + sigma * bootstrap_quantile(fit.standardized_residuals, tau, n_boot, rng)


def simulate(params: GarchParams, T: int, rng=None, burn: int = 500) -> np.ndarray:
    """Gaussian AR(1)-GARCH(1,1) path of length ``T``."""
    rng = np.random.default_rng(rng)
    n = T + burn
    z = rng.standard_normal(n)
    y = np.zeros(n)
    s2 = params.omega / max(1.0 - params.alpha - params.gamma, 1e-12)
    e_prev = 0.0
    for t in range(1, n):
        s2 = params.omega + params.alpha * e_prev**2 + params.gamma * s2
        e_prev = np.sqrt(s2) * z[t]
        y[t] = params.phi0 + params.phi1 * y[t - 1] + e_prev
    return y[burn:]
