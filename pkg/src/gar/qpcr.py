"""Quantile partial correlation regression (QPCR).

Forward selection driven by the sample quantile partial correlation between
the response and each candidate, conditional on the current active set plus
a "confounding set" of predictors strongly correlated with earlier winners.
Model size is chosen by an extended BIC on the check loss.

Confounding sets are built for the first ``d_star`` winners. Under the
default ``"previous"`` rule each step conditions on the confounding set of
the latest winner only, and the set found at step ``d_star - 1`` stays in
force afterwards. ``"accumulate"`` keeps the union of all sets instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .dataset import PanelData
from .errors import (
    DataError,
    DegeneratePredictor,
    EmptyPanel,
    NonPositiveLoss,
    RankDeficient,
)
from .model import QuantileModel
from .qr_core import check_tau, fit_qr, ols_project, psi

__all__ = [
    "QpcrConfig",
    "SelectionPath",
    "sample_qpcor",
    "confounding_set",
    "ebic",
    "ebic_penalty",
    "fit_qpcr",
    "qpcr",
]

_VAR_FLOOR = 1e-12
_LOSS_FLOOR = 1e-12

CONFOUNDING_RULES = ("previous", "accumulate")
EBIC_FORMS = ("size", "log_size")


@dataclass(frozen=True)
class QpcrConfig:
    tau: float
    d_star: int
    m_schedule: tuple
    D_max: int
    ebic_C: float = 1.0
    confounding: str = "previous"
    ebic_form: str = "size"

    def __post_init__(self):
        check_tau(self.tau)
        object.__setattr__(self, "m_schedule", tuple(int(m) for m in self.m_schedule))
        if not 1 <= self.d_star <= self.D_max:
            raise DataError("need 1 <= d_star <= D_max")
        if len(self.m_schedule) < self.d_star or any(m < 1 for m in self.m_schedule):
            raise DataError("m_schedule needs d_star entries, all >= 1")
        if self.ebic_C < 0:
            raise DataError("ebic_C must be nonnegative")
        if self.confounding not in CONFOUNDING_RULES:
            raise DataError(f"confounding must be one of {CONFOUNDING_RULES}")
        if self.ebic_form not in EBIC_FORMS:
            raise DataError(f"ebic_form must be one of {EBIC_FORMS}")

    @classmethod
    def default(cls, T: int, tau: float = 0.05, ebic_C: float = 1.0, **kw) -> "QpcrConfig":
        """``D_max = floor(T / log T)``; ``d* = m_d = floor(sqrt(D_max))``."""
        D_max = max(1, int(math.floor(T / math.log(T))))
        root = max(1, int(math.floor(math.sqrt(D_max))))
        return cls(tau=tau, d_star=root, m_schedule=(root,) * root, D_max=D_max,
                   ebic_C=ebic_C, **kw)


@dataclass
class SelectionPath:
    ordered_selected: list = field(default_factory=list)
    confounding_history: list = field(default_factory=list)
    qpc_trace: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    ebic_trace: list = field(default_factory=list)
    D_star: int = 0

    def to_dict(self) -> dict:
        return {
            "ordered_selected": [int(j) for j in self.ordered_selected],
            "conditioning_sets": [sorted(int(j) for j in s) for s in self.confounding_history],
            "qpc_trace": [float(v) for v in self.qpc_trace],
            "losses": [float(v) for v in self.losses],
            "ebic_trace": [float(v) for v in self.ebic_trace],
            "D_star": self.D_star,
        }


def ebic_penalty(T: int, D: int, p: int, form: str = "size") -> float:
    """Complexity term added to ``log(loss)``, before scaling by ``C``.

    ``"size"``: ``D log(T) max(1, log log p) / T``.
    ``"log_size"``: ``log(T) log(D) / T``.
    """
    if D < 1 or T < 1:
        raise DataError("D and T must be positive")
    if form == "log_size":
        return math.log(T) * math.log(D) / T
    if form != "size":
        raise DataError(f"unknown ebic form {form!r}")
    growth = max(1.0, math.log(math.log(p))) if p > 1 else 1.0
    return D * math.log(T) * growth / T


def ebic(loss: float, T: int, D: int, C: float, p: int = 1, form: str = "size") -> float:
    """``log(loss) + C * penalty``; losses below 1e-12 are floored."""
    if not np.isfinite(loss) or loss < 0:
        raise NonPositiveLoss(f"mean check loss must be nonnegative, got {loss}")
    return math.log(max(loss, _LOSS_FLOOR)) + C * ebic_penalty(T, D, p, form)


def sample_qpcor(Y, x_j, X_S, tau: float) -> float:
    """Sample quantile partial correlation of ``Y`` and ``x_j`` given ``X_S``.

    Both the quantile fit and the projection include an intercept, so with an
    empty ``X_S`` this is the quantile correlation of ``Y`` and ``x_j``.
    """
    tau = check_tau(tau)
    Y = np.asarray(Y, dtype=float).ravel()
    x_j = np.asarray(x_j, dtype=float).ravel()
    T = Y.shape[0]
    X_S = np.asarray(X_S, dtype=float).reshape(T, -1)
    fit = fit_qr(Y, X_S, tau)
    if X_S.shape[1] == 0:
        resid = x_j - x_j.mean()
        var = float(np.mean(resid**2))
    else:
        _, resid, var = ols_project(x_j, X_S)
    if var <= _VAR_FLOOR:
        raise DegeneratePredictor("candidate lies in the span of the conditioning set")
    num = float(np.mean(psi(tau, fit.residuals) * resid))
    return num / math.sqrt(tau * (1 - tau) * var)


def confounding_set(corr, j: int, m: int) -> set:
    """Indices ``k != j`` whose |correlation| with ``j`` is at least the m-th largest."""
    a = np.abs(np.asarray(corr, dtype=float)[j]).copy()
    p = a.shape[0]
    others = np.array([k for k in range(p) if k != j], dtype=int)
    if m <= 0 or others.size == 0:
        return set()
    if m >= others.size:
        return set(others.tolist())
    vals = np.sort(a[others])[::-1]
    cutoff = vals[m - 1]
    return {int(k) for k in others if a[k] >= cutoff}


def _abs_corr(X: np.ndarray) -> np.ndarray:
    Xc = X - X.mean(axis=0)
    sd = np.sqrt(np.mean(Xc**2, axis=0))
    sd = np.where(sd > 0, sd, np.inf)
    Z = Xc / sd
    C = (Z.T @ Z) / X.shape[0]
    return C


def _qpcor_scan(Y, X, cond: Sequence[int], candidates: np.ndarray, tau: float):
    """qpcor of every candidate column given the same conditioning set.

    Returns ``(values, valid)``; invalid entries are degenerate candidates.
    """
    T = Y.shape[0]
    cond = list(cond)
    fit = fit_qr(Y, X[:, cond], tau)
    sub = psi(tau, fit.residuals)
    Xc = X[:, candidates]
    if cond:
        Z = np.column_stack([np.ones(T), X[:, cond]])
        q, _ = linalg.qr(Z, mode="economic", check_finite=False)
        R = Xc - q @ (q.T @ Xc)
    else:
        R = Xc - Xc.mean(axis=0)
    var = np.mean(R**2, axis=0)
    valid = var > _VAR_FLOOR
    vals = np.zeros(candidates.size)
    num = (sub @ R) / T
    vals[valid] = num[valid] / np.sqrt(tau * (1 - tau) * var[valid])
    return vals, valid


def qpcr(Y, X, config: QpcrConfig, column_names: tuple = ()):
    """Array interface of :func:`fit_qpcr`."""
    Y = np.asarray(Y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    T, p = X.shape
    if T == 0 or p == 0:
        raise EmptyPanel("empty panel")
    tau = config.tau
    corr = _abs_corr(X)
    path = SelectionPath()
    selected: list = []
    confounders: set = set()
    for d in range(1, config.D_max + 1):
        cond = sorted(set(selected) | confounders)
        in_cond = np.zeros(p, dtype=bool)
        in_cond[cond] = True
        candidates = np.flatnonzero(~in_cond)
        if candidates.size == 0:
            break
        try:
            vals, valid = _qpcor_scan(Y, X, cond, candidates, tau)
        except RankDeficient:
            break
        if not valid.any():
            break
        score = np.where(valid, np.abs(vals), -np.inf)
        best = int(np.argmax(score))  # first maximum -> lowest column index
        j_star = int(candidates[best])
        selected.append(j_star)
        path.confounding_history.append(frozenset(cond))
        path.qpc_trace.append(float(abs(vals[best])))
        if d <= config.d_star:
            new = confounding_set(corr, j_star, config.m_schedule[d - 1])
            if config.confounding == "accumulate":
                confounders |= new
            elif d < config.d_star:
                confounders = new
    path.ordered_selected = selected

    # EBIC over the nested supports S_1, S_2, ...
    fits = []
    for D in range(1, len(selected) + 1):
        try:
            f = fit_qr(Y, X[:, selected[:D]], tau)
        except RankDeficient:
            break
        fits.append(f)
        path.losses.append(f.objective)
        path.ebic_trace.append(ebic(f.objective, T, D, config.ebic_C, p, config.ebic_form))
    if fits:
        D_star = int(np.argmin(path.ebic_trace)) + 1
        f = fits[D_star - 1]
        support = selected[:D_star]
        model = QuantileModel.from_support(
            tau, p, support, f.coefficients, f.intercept,
            ebic_value=path.ebic_trace[D_star - 1], column_names=tuple(column_names),
            method="qpcr",
        )
    else:
        D_star = 0
        f = fit_qr(Y, np.zeros((T, 0)), tau)
        model = QuantileModel.from_support(tau, p, [], [], f.intercept,
                                           column_names=tuple(column_names), method="qpcr")
    path.D_star = D_star
    return model, path


def fit_qpcr(panel: PanelData, config: Optional[QpcrConfig] = None, tau: float = 0.05):
    """Run QPCR on a panel; returns ``(QuantileModel, SelectionPath)``.

    Without ``config`` the default hyperparameters for ``panel.T`` are used.
    """
    if panel.T == 0 or panel.p == 0:
        raise EmptyPanel("empty panel")
    if config is None:
        config = QpcrConfig.default(panel.T, tau)
    return qpcr(panel.Y, panel.X, config, panel.column_names)
