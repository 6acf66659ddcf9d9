"""Penalized linear quantile regression: l1, SCAD and MCP.

Folded-concave penalties are handled by local linear approximation: each
outer step solves a weighted-l1 quantile regression whose weights are the
penalty derivative at the previous iterate. Weighted-l1 problems are solved
exactly as linear programs by appending one pseudo-observation per penalized
coefficient.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .dataset import PanelData
from .errors import DataError, GarError, NoConvergence, RankDeficient
from .model import QuantileModel, active_from_beta
from .qr_core import (
    GAP_TOL,
    MAX_ITER,
    _dual_certified,
    _full_rank,
    check_tau,
    mean_loss,
    solve_check_lp,
)

log = logging.getLogger(__name__)

LLA_MAX_ITER = 25
LLA_TOL = 1e-6
# smallest positive penalty weight passed to the LP; tinier ones overflow the box scaling
_W_FLOOR = 1e-12


class PenaltyKind(str, Enum):
    L1 = "l1"
    SCAD = "scad"
    MCP = "mcp"


DEFAULT_A = {PenaltyKind.L1: 0.0, PenaltyKind.SCAD: 3.7, PenaltyKind.MCP: 3.0}


@dataclass(frozen=True)
class PenaltySpec:
    kind: PenaltyKind
    lam: float
    a: float = float("nan")

    def __post_init__(self):
        kind = PenaltyKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if np.isnan(self.a):
            object.__setattr__(self, "a", DEFAULT_A[kind])
        if self.lam < 0:
            raise DataError("lambda must be nonnegative")
        if kind is PenaltyKind.SCAD and not self.a > 2:
            raise DataError("SCAD requires a > 2")
        if kind is PenaltyKind.MCP and not self.a > 1:
            raise DataError("MCP requires a > 1")


@dataclass(frozen=True)
class CvGrid:
    lambdas: tuple
    a_values: tuple = (float("nan"),)
    n_folds: int = 5

    def __post_init__(self):
        lams = tuple(float(v) for v in self.lambdas)
        object.__setattr__(self, "lambdas", lams)
        object.__setattr__(self, "a_values", tuple(float(v) for v in self.a_values))
        if self.n_folds < 2:
            raise DataError("n_folds must be >= 2")
        if not lams or any(v < 0 for v in lams):
            raise DataError("lambdas must be a nonempty list of nonnegative values")
        if any(b >= a for a, b in zip(lams, lams[1:])):
            raise DataError("lambdas must be strictly decreasing")


def penalty_value(spec: PenaltySpec, b):
    """Penalty ``q(b)``; SCAD and MCP are the integrals of their derivatives."""
    t = np.abs(np.asarray(b, dtype=float))
    lam, a = spec.lam, spec.a
    if spec.kind is PenaltyKind.L1:
        out = lam * t
    elif spec.kind is PenaltyKind.SCAD:
        mid = (2 * a * lam * t - t**2 - lam**2) / (2 * (a - 1))
        out = np.where(t <= lam, lam * t,
                       np.where(t < a * lam, mid, (a + 1) * lam**2 / 2))
    else:
        out = np.where(t <= a * lam, lam * t - t**2 / (2 * a), a * lam**2 / 2)
    return out if out.ndim else float(out)


def penalty_derivative(spec: PenaltySpec, b):
    """Derivative ``q'(b)`` for ``b >= 0`` (the right derivative at zero is ``lambda``)."""
    t = np.asarray(b, dtype=float)
    if np.any(t < 0):
        raise DataError("penalty_derivative expects b >= 0")
    lam, a = spec.lam, spec.a
    if spec.kind is PenaltyKind.L1:
        out = np.full_like(t, lam)
    elif spec.kind is PenaltyKind.SCAD:
        if lam == 0:
            out = np.zeros_like(t)
        else:
            out = lam * np.where(t <= lam, 1.0, np.maximum(a * lam - t, 0.0) / ((a - 1) * lam))
    else:
        out = np.where(t <= a * lam, lam - t / a, 0.0)
    return out if out.ndim else float(out)


def penalized_objective(Y, X, tau, spec, intercept, beta) -> float:
    r = np.asarray(Y) - intercept - np.asarray(X) @ beta
    return mean_loss(tau, r) + float(np.sum(penalty_value(spec, beta)))


def weighted_l1_qr(Y, X, tau: float, weights, *, tol: float = GAP_TOL,
                   max_iter: int = MAX_ITER):
    """Minimise ``mean rho_tau(Y - b0 - X b) + sum_j weights_j |b_j|`` exactly.

    Returns ``(intercept, beta)``; coefficients driven to zero are exact zeros.
    """
    Y = np.asarray(Y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    T, p = X.shape
    w = np.broadcast_to(np.asarray(weights, dtype=float), (p,))
    if np.any(w < 0):
        raise DataError("penalty weights must be nonnegative")
    w = np.where((w > 0) & (w < _W_FLOOR), _W_FLOOR, w)
    D = np.column_stack([np.ones(T), X])
    free = np.flatnonzero(w == 0)
    if not _full_rank(D[:, np.r_[0, free + 1]]):
        raise RankDeficient("unpenalized part of the design is rank deficient")
    pen = np.flatnonzero(w > 0)
    rows = np.zeros((pen.size, p + 1))
    rows[np.arange(pen.size), pen + 1] = 1.0
    A = np.vstack([D, rows])
    y = np.concatenate([Y, np.zeros(pen.size)])
    cost = T * w[pen]
    cpos = np.concatenate([np.full(T, tau), cost])
    cneg = np.concatenate([np.full(T, 1.0 - tau), cost])
    theta, dual, _, ok = solve_check_lp(A, y, cpos, cneg, tol=tol, max_iter=max_iter)
    if not ok and not _dual_certified(A, dual, cpos, cneg):
        raise NoConvergence("weighted l1 quantile regression did not converge")
    return float(theta[0]), theta[1:].copy()


def penalized_qr(Y, X, tau: float, spec: PenaltySpec, *, max_outer: int = LLA_MAX_ITER,
                 outer_tol: float = LLA_TOL, return_history: bool = False):
    """Array interface of :func:`fit_penalized`; returns ``(intercept, beta)``."""
    tau = check_tau(tau)
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    # first LLA step from zero is the l1 problem with weight q'(0+) = lambda
    b0, beta = weighted_l1_qr(Y, X, tau, np.full(p, spec.lam))
    history = [penalized_objective(Y, X, tau, spec, b0, beta)]
    if spec.kind is not PenaltyKind.L1 and spec.lam > 0:
        for _ in range(max_outer):
            w = penalty_derivative(spec, np.abs(beta))
            b0_new, beta_new = weighted_l1_qr(Y, X, tau, w)
            change = np.max(np.abs(np.r_[b0_new - b0, beta_new - beta]), initial=0.0)
            b0, beta = b0_new, beta_new
            history.append(penalized_objective(Y, X, tau, spec, b0, beta))
            if change <= outer_tol:
                break
    if return_history:
        return b0, beta, history
    return b0, beta


def fit_penalized(panel: PanelData, tau: float, spec: PenaltySpec) -> QuantileModel:
    b0, beta = penalized_qr(panel.Y, panel.X, tau, spec)
    return QuantileModel(
        tau=tau, active_set=active_from_beta(beta), beta=beta, intercept=b0,
        column_names=panel.column_names, method=spec.kind.value,
        extra={"lambda": spec.lam, "a": spec.a},
    )


def lambda_max(Y, X, tau: float) -> float:
    """Smallest l1 weight at which every slope is zero.

    Uses the exact dual of the intercept-only fit: subgradients
    ``tau - 1(r < 0)`` off the interpolated points, with the interpolated
    point(s) absorbing the remainder so the dual sums to zero.
    """
    Y = np.asarray(Y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    T = Y.shape[0]
    q = np.sort(Y)[int(np.ceil(tau * T)) - 1] if T else 0.0
    r = Y - q
    d = np.where(r > 0, tau, tau - 1.0)
    zero = r == 0
    if zero.any():
        d[zero] = -d[~zero].sum() / zero.sum()
    return float(np.max(np.abs(X.T @ d)) / T)


def default_grid(Y, X, tau: float, kind, n_lambda: int = 50, ratio: float = 1e-3,
                 n_folds: int = 5, a_values: Optional[Sequence[float]] = None) -> CvGrid:
    """Log-spaced lambdas from ``lambda_max`` down to ``ratio * lambda_max``."""
    kind = PenaltyKind(kind)
    lmax = lambda_max(Y, X, tau)
    lams = np.geomspace(lmax, lmax * ratio, n_lambda) if lmax > 0 else np.array([0.0])
    if a_values is None:
        a_values = (DEFAULT_A[kind],)
    return CvGrid(tuple(lams), tuple(a_values), n_folds)


def fold_ids(T: int, n_folds: int, scheme: str = "blocked", seed: int = 0) -> np.ndarray:
    """Fold label per row: contiguous time blocks, or a seeded shuffle."""
    ids = np.arange(T) * n_folds // T
    if scheme == "blocked":
        return ids
    if scheme == "shuffled":
        return np.random.default_rng(seed).permutation(ids)
    raise ValueError(f"unknown fold scheme {scheme!r}")


def cv_losses(Y, X, tau: float, kind, grid: CvGrid, scheme: str = "blocked",
              seed: int = 0) -> np.ndarray:
    """Held-out mean check loss, shape ``(len(a_values), len(lambdas))``.

    Grid points whose fit fails in any fold are reported as ``nan``.
    """
    kind = PenaltyKind(kind)
    Y = np.asarray(Y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    ids = fold_ids(Y.shape[0], grid.n_folds, scheme, seed)
    out = np.zeros((len(grid.a_values), len(grid.lambdas)))
    for ia, a in enumerate(grid.a_values):
        for il, lam in enumerate(grid.lambdas):
            spec = PenaltySpec(kind, lam, a)
            total = 0.0
            for k in range(grid.n_folds):
                test = ids == k
                try:
                    b0, beta = penalized_qr(Y[~test], X[~test], tau, spec)
                except GarError as exc:
                    log.warning("cv fit failed at lambda=%g a=%g: %s", lam, a, exc)
                    total = np.nan
                    break
                total += mean_loss(tau, Y[test] - b0 - X[test] @ beta)
            out[ia, il] = total / grid.n_folds
    return out


def select_from_cv(losses: np.ndarray, grid: CvGrid, kind) -> PenaltySpec:
    if np.all(np.isnan(losses)):
        raise NoConvergence("every cross-validation grid point failed")
    best = np.nanmin(losses)
    # lambdas are decreasing, so the first hit in column order is the largest lambda
    hits = np.argwhere(losses <= best + 1e-12 * max(1.0, abs(best)))
    ia, il = min(hits, key=lambda t: (t[1], t[0]))
    return PenaltySpec(PenaltyKind(kind), grid.lambdas[il], grid.a_values[ia])


def cross_validate(panel: PanelData, tau: float, kind, grid: Optional[CvGrid] = None,
                   scheme: str = "blocked", seed: int = 0) -> PenaltySpec:
    """K-fold choice of ``(lambda, a)`` minimising held-out check loss.

    Ties go to the larger lambda.
    """
    if grid is None:
        grid = default_grid(panel.Y, panel.X, tau, kind)
    losses = cv_losses(panel.Y, panel.X, tau, kind, grid, scheme, seed)
    return select_from_cv(losses, grid, kind)


def fit_cv(Y, X, tau: float, kind, grid: Optional[CvGrid] = None, scheme: str = "blocked",
           seed: int = 0):
    """Cross-validate then refit on all rows; returns ``(spec, intercept, beta)``."""
    if grid is None:
        grid = default_grid(Y, X, tau, kind)
    spec = select_from_cv(cv_losses(Y, X, tau, kind, grid, scheme, seed), grid, kind)
    b0, beta = penalized_qr(Y, X, tau, spec)
    return spec, b0, beta
