"""Quantile loss, linear quantile regression and least-squares projection.

The quantile-regression solver is a bounded-variable primal-dual interior
point method (Frisch-Newton with Mehrotra predictor-corrector) applied to
the dual of the check-loss linear program, followed by a crossover step that
moves the interior solution onto an optimal vertex whenever one is found.
Vertex solutions interpolate exactly ``k`` observations, which keeps sign
counts and zero coefficients exact rather than approximate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import AllZeroWeights, DataError, NoConvergence, RankDeficient

__all__ = [
    "FitResult",
    "rho",
    "psi",
    "check_tau",
    "mean_loss",
    "fit_qr",
    "solve_check_lp",
    "ols_project",
    "weighted_quantile",
]

GAP_TOL = 1e-8
MAX_ITER = 200
_STEP = 0.99995
_EARLY_GAP = 1e-2


def check_tau(tau: float) -> float:
    tau = float(tau)
    if not 0.0 < tau < 1.0:
        raise DataError(f"quantile level must lie in (0, 1), got {tau}")
    return tau


def rho(tau, u):
    """Check loss ``u * (tau - 1(u < 0))``; vectorised over ``u``."""
    u = np.asarray(u, dtype=float)
    out = u * (tau - (u < 0))
    return out if out.ndim else float(out)


def psi(tau, u):
    """Subgradient of the check loss, ``tau - 1(u < 0)`` (zero maps to ``tau``)."""
    u = np.asarray(u, dtype=float)
    out = tau - (u < 0).astype(float)
    return out if out.ndim else float(out)


def mean_loss(tau: float, u) -> float:
    return float(np.mean(rho(tau, np.asarray(u, dtype=float))))


@dataclass(frozen=True)
class FitResult:
    """Solution of a (possibly weighted) check-loss regression.

    ``dual`` holds the optimal dual vector: for observations with non-zero
    residual it equals the subgradient of the loss, and ``X' dual = 0``
    certifies optimality.
    """

    coefficients: np.ndarray
    intercept: float
    objective: float
    iterations: int
    converged: bool
    residuals: np.ndarray
    dual: np.ndarray

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        return self.intercept + X @ self.coefficients


_ZERO_RESID = 1e-11


def _r_factor(X: np.ndarray, rtol: float = 1e-10):
    """Triangular QR factor of ``X``, or ``None`` when ``X`` is rank deficient."""
    if X.shape[1] == 0:
        return np.zeros((0, 0))
    if X.shape[0] < X.shape[1]:
        return None
    r = linalg.qr(X, mode="r", check_finite=False)[0][: X.shape[1]]
    d = np.abs(np.diag(r))
    if d.min() <= rtol * max(d.max(), 1.0):
        return None
    return r


def _full_rank(X: np.ndarray, rtol: float = 1e-10) -> bool:
    return _r_factor(X, rtol) is not None


def _check_objective(r, cpos, cneg) -> float:
    return float(cpos @ np.maximum(r, 0.0) + cneg @ np.maximum(-r, 0.0))


def solve_check_lp(X, y, cpos, cneg, tol: float = GAP_TOL, max_iter: int = MAX_ITER,
                   crossover: bool = True, r_factor=None):
    """Minimise ``sum(cpos * r+ + cneg * r-)`` over ``beta`` with ``r = y - X beta``.

    Every observation carries its own positive/negative residual cost, which
    covers plain quantile regression (``cpos = tau``, ``cneg = 1 - tau``),
    observation weights, and l1 penalties written as pseudo-observations.

    Returns ``(beta, dual, iterations, converged)`` where ``dual`` lies in
    ``[-cneg, cpos]`` and satisfies ``X' dual = 0``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    cpos = np.asarray(cpos, dtype=float)
    cneg = np.asarray(cneg, dtype=float)
    n, k = X.shape
    if k == 0:
        return np.zeros(0), np.where(y >= 0, cpos, -cneg), 0, True

    u = cpos + cneg
    a = cneg.copy()
    s = cpos.copy()
    b = X.T @ cneg
    if r_factor is not None:
        # semi-normal equations R'R beta = X'y
        beta = linalg.cho_solve((r_factor, False), X.T @ y, check_finite=False)
    else:
        beta = np.linalg.lstsq(X, y, rcond=None)[0]
    r = y - X @ beta
    delta = 1e-2 * (np.mean(np.abs(r)) + 1e-8)
    w = np.maximum(r, 0.0) + delta
    z = np.maximum(-r, 0.0) + delta

    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gap = z @ a + w @ s
        scale = max(1.0, abs(y @ a - y @ cneg))
        if gap <= tol * scale:
            converged = True
            it -= 1
            break
        if crossover and gap <= _EARLY_GAP * scale:
            # near the optimum the smallest residuals usually pin the optimal
            # vertex; stop as soon as its dual certifies optimality
            vb, vd = _crossover(X, y, cpos, cneg, beta, a - cneg)
            if vb is not beta and _in_box(vd, cpos, cneg):
                return vb, vd, it - 1, True
        rp1 = b - X.T @ a
        rp2 = u - a - s
        rd = y - X @ beta + z - w
        q = 1.0 / (z / a + w / s)
        M = X.T @ (q[:, None] * X)
        try:
            fac = linalg.cho_factor(M, check_finite=False)

            def solve(v):
                return linalg.cho_solve(fac, v, check_finite=False)
        except linalg.LinAlgError:
            Mp = np.linalg.pinv(M)

            def solve(v):
                return Mp @ v

        def direction(rz, rw):
            rho_ = rd + rz / a - rw / s + (w / s) * rp2
            dbeta = solve(X.T @ (q * rho_) - rp1)
            da = q * (rho_ - X @ dbeta)
            ds = rp2 - da
            dz = rz / a - (z / a) * da
            dw = rw / s - (w / s) * ds
            return dbeta, da, ds, dz, dw

        def steplen(v, dv, v2, dv2):
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = np.where(dv < 0, -v / dv, np.inf).min()
                t2 = np.where(dv2 < 0, -v2 / dv2, np.inf).min()
            return min(1.0, _STEP * float(min(t1, t2)))

        # predictor
        dbeta, da, ds, dz, dw = direction(-a * z, -s * w)
        ap = steplen(a, da, s, ds)
        ad = steplen(z, dz, w, dw)
        gap_aff = (a + ap * da) @ (z + ad * dz) + (s + ap * ds) @ (w + ad * dw)
        mu = gap / (2 * n)
        sigma = (gap_aff / gap) ** 3
        # corrector
        rz = sigma * mu - a * z - da * dz
        rw = sigma * mu - s * w - ds * dw
        dbeta, da, ds, dz, dw = direction(rz, rw)
        ap = steplen(a, da, s, ds)
        ad = steplen(z, dz, w, dw)
        a = a + ap * da
        s = s + ap * ds
        beta = beta + ad * dbeta
        z = z + ad * dz
        w = w + ad * dw

    dual = a - cneg
    if crossover:
        beta, dual = _crossover(X, y, cpos, cneg, beta, dual)
    return beta, dual, it, converged


def _crossover(X, y, cpos, cneg, beta, dual):
    """Try the vertex through the ``k`` smallest absolute residuals."""
    n, k = X.shape
    if n < k:
        return beta, dual
    r = y - X @ beta
    obj = _check_objective(r, cpos, cneg)
    h = np.argsort(np.abs(r), kind="stable")[:k]
    Xh = X[h]
    try:
        lu = linalg.lu_factor(Xh, check_finite=False)
        if not np.all(np.isfinite(lu[0])) or np.min(np.abs(np.diag(lu[0]))) < 1e-12 * max(
            1.0, np.max(np.abs(np.diag(lu[0])))
        ):
            return beta, dual
        bh = linalg.lu_solve(lu, y[h], check_finite=False)
    except (linalg.LinAlgError, ValueError):
        return beta, dual
    rh = y - X @ bh
    rh[h] = 0.0
    obj_h = _check_objective(rh, cpos, cneg)
    if obj_h > obj + 1e-9 * max(1.0, abs(obj)):
        return beta, dual
    # exact dual for the vertex: subgradient off-basis, solved on the basis
    d = np.where(rh > 0, cpos, -cneg)
    rest = np.ones(n, dtype=bool)
    rest[h] = False
    d[h] = linalg.lu_solve(lu, -(X[rest].T @ d[rest]), trans=1, check_finite=False)
    return bh, d


def fit_qr(Y, X_S, tau: float, include_intercept: bool = True, *,
           tol: float = GAP_TOL, max_iter: int = MAX_ITER) -> FitResult:
    """Linear quantile regression of ``Y`` on the columns of ``X_S``.

    Raises
    ------
    RankDeficient
        If the design (with intercept) is not of full column rank.
    NoConvergence
        If the interior point method hits ``max_iter``.
    """
    tau = check_tau(tau)
    Y = np.asarray(Y, dtype=float).ravel()
    n = Y.shape[0]
    X_S = np.asarray(X_S, dtype=float).reshape(n, -1)
    X = np.column_stack([np.ones(n), X_S]) if include_intercept else X_S
    k = X.shape[1]
    if k == 0:
        return FitResult(np.zeros(0), 0.0, mean_loss(tau, Y), 0, True, Y.copy(), psi(tau, Y))
    R = _r_factor(X)
    if R is None:
        raise RankDeficient(f"design with {k} columns and {n} rows is rank deficient")
    cpos = np.full(n, tau)
    cneg = np.full(n, 1.0 - tau)
    beta, dual, it, ok = solve_check_lp(X, Y, cpos, cneg, tol=tol, max_iter=max_iter,
                                        r_factor=R)
    if not ok:
        # the crossover may still have landed on a certified vertex
        if not _dual_certified(X, dual, cpos, cneg):
            raise NoConvergence(f"interior point stopped after {max_iter} iterations")
    resid = Y - X @ beta
    # interpolated rows carry rounding noise; make their sign convention exact
    resid[np.abs(resid) <= _ZERO_RESID * max(1.0, float(np.max(np.abs(Y))))] = 0.0
    if include_intercept:
        icpt, coef = float(beta[0]), beta[1:].copy()
    else:
        icpt, coef = 0.0, beta.copy()
    return FitResult(coef, icpt, mean_loss(tau, resid), it, True, resid, dual)


def _in_box(dual, cpos, cneg, tol=1e-9) -> bool:
    return bool(np.all(dual <= cpos + tol) and np.all(dual >= -cneg - tol))


def _dual_certified(X, dual, cpos, cneg, tol=1e-7) -> bool:
    inside = np.all(dual <= cpos + tol) and np.all(dual >= -cneg - tol)
    scale = np.maximum(np.abs(X).sum(axis=0), 1.0)
    return bool(inside and np.all(np.abs(X.T @ dual) <= tol * scale))


def ols_project(x_j, X_S):
    """Least-squares projection of ``x_j`` on ``X_S`` (plus an intercept).

    An intercept column is prepended when ``X_S`` has at least one column;
    with an empty conditioning set nothing is projected out and the residual
    is ``x_j`` itself. ``residual_var`` uses divisor ``T``.

    Returns ``(theta, residual, residual_var)``; ``theta`` starts with the
    intercept when one was added.
    """
    x_j = np.asarray(x_j, dtype=float).ravel()
    n = x_j.shape[0]
    X_S = np.asarray(X_S, dtype=float).reshape(n, -1)
    if X_S.shape[1] == 0:
        return np.zeros(0), x_j.copy(), float(np.mean(x_j**2))
    Z = np.column_stack([np.ones(n), X_S])
    if not _full_rank(Z):
        raise RankDeficient("conditioning set is rank deficient")
    q, r = linalg.qr(Z, mode="economic", check_finite=False)
    theta = linalg.solve_triangular(r, q.T @ x_j, check_finite=False)
    resid = x_j - Z @ theta
    return theta, resid, float(np.mean(resid**2))


def weighted_quantile(values, weights, tau: float, rule: str = "objective") -> float:
    """Weighted tau-quantile restricted to the observed values.

    ``rule="objective"`` minimises ``|sum_t w_t (tau - 1(v_t <= q))|`` over
    observed ``q`` (the forest prediction rule); ``rule="cdf"`` returns the
    smallest observed ``q`` whose weighted CDF reaches ``tau``. Ties go to
    the smallest value in both cases.
    """
    tau = check_tau(tau)
    v = np.asarray(values, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    if v.shape != w.shape:
        raise DataError("values and weights differ in length")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DataError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise AllZeroWeights("all weights are zero")
    order = np.argsort(v, kind="stable")
    v, w = v[order], w[order]
    uniq, start = np.unique(v, return_index=True)
    cum = np.cumsum(w)
    # cumulative weight at the last copy of each distinct value
    ends = np.append(start[1:], v.size) - 1
    F = cum[ends]
    target = tau * total
    if rule == "cdf":
        idx = int(np.argmax(F >= target * (1 - 1e-12)))
        return float(uniq[idx])
    if rule != "objective":
        raise ValueError(f"unknown rule {rule!r}")
    obj = np.abs(target - F)
    best = obj.min()
    idx = int(np.argmax(obj <= best + 1e-12 * total))
    return float(uniq[idx])
