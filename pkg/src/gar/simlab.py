"""Monte Carlo designs for predictor-selection studies.

Predictors are iid half-normal, ``X[t, j] = |N(0, 1)|``, and the response
follows the location-scale model ``Y[t] = X[t]'alpha_t + (X[t]'beta_t) eps_t``
with standard normal ``eps_t``, so the conditional tau-quantile is
``X[t]'(alpha_t + beta_t * Phi^{-1}(tau))``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import norm

from .dataset import PanelData, RawPanel
from .errors import DataError, GarError

log = logging.getLogger(__name__)


class Setup(str, Enum):
    FIXED_SPARSE = "fixed-sparse"
    TIME_VARYING_SPARSE = "time-varying-sparse"
    DENSE = "dense"


@dataclass(frozen=True)
class DgpSpec:
    setup: Setup
    T: int
    p: int
    s: int = 5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "setup", Setup(self.setup))
        if not 0 <= self.s <= self.p:
            raise DataError("need 0 <= s <= p")
        if self.T < 2:
            raise DataError("need T >= 2")


@dataclass
class SimulationReport:
    per_relevant_frequency: np.ndarray
    avg_false: float
    n_reps: int
    method: str
    n_failed: int = 0
    spec: Optional[DgpSpec] = None
    selections: list = field(default_factory=list, repr=False)

    def row(self) -> dict:
        out = {
            "setup": self.spec.setup.value if self.spec else "",
            "T": self.spec.T if self.spec else "",
            "p": self.spec.p if self.spec else "",
            "method": self.method,
        }
        for j, f in enumerate(self.per_relevant_frequency, 1):
            out[f"X{j}"] = round(float(f), 6)
        out["avg_false"] = round(float(self.avg_false), 6)
        out["n_reps"] = self.n_reps
        out["n_failed"] = self.n_failed
        return out


def coefficients(spec: DgpSpec):
    """Location and scale coefficient paths, each of shape ``(T, p)``."""
    T, p, s = spec.T, spec.p, spec.s
    alpha = np.zeros((T, p))
    beta = np.zeros((T, p))
    alpha[:, :s] = -1.0
    beta[:, :s] = 1.0
    if spec.setup is Setup.TIME_VARYING_SPARSE:
        beta[T // 2:, :s] = 0.5
    elif spec.setup is Setup.DENSE:
        alpha[:, s:] = 1.0 / p
        beta[:, s:] = 1.0 / p
    return alpha, beta


def true_quantile(spec: DgpSpec, X, tau: float) -> np.ndarray:
    alpha, beta = coefficients(spec)
    return np.sum(np.asarray(X) * (alpha + beta * norm.ppf(tau)), axis=1)


def generate(spec: DgpSpec, rng=None, eps=None):
    """Draw ``(Y, X, true_support)``; ``eps`` overrides the innovations."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    X = np.abs(rng.standard_normal((spec.T, spec.p)))
    if eps is None:
        eps = rng.standard_normal(spec.T)
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (spec.T,))
    alpha, beta = coefficients(spec)
    Y = np.sum(X * alpha, axis=1) + np.sum(X * beta, axis=1) * eps
    return Y, X, tuple(range(spec.s))


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    """Stream for replication ``rep``; independent of how many reps are run."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))


def _one_rep(spec: DgpSpec, method: Callable, tau: float, rep: int):
    Y, X, _ = generate(spec, replication_rng(spec.seed, rep))
    try:
        return tuple(sorted(int(j) for j in method(Y, X, tau))), None
    except GarError as exc:
        return None, f"{type(exc).__name__}: {exc}"


def run_study(spec: DgpSpec, method: Callable, tau: float = 0.05, n_reps: int = 100,
              n_jobs: int = 1, label: str = "") -> SimulationReport:
    """Selection frequencies of the relevant predictors over ``n_reps`` draws.

    ``method(Y, X, tau)`` returns the selected column indices. Failed
    replications are counted and excluded from the denominators.
    """
    if n_reps < 1:
        raise DataError("n_reps must be >= 1")
    jobs = (delayed(_one_rep)(spec, method, tau, r) for r in range(n_reps))
    if n_jobs == 1:
        results = [_one_rep(spec, method, tau, r) for r in range(n_reps)]
    else:
        results = Parallel(n_jobs=n_jobs)(jobs)
    sels = [r for r, err in results if r is not None]
    failed = [err for r, err in results if r is None]
    for err in failed:
        log.warning("replication failed: %s", err)
    freq = np.zeros(spec.s)
    false = 0.0
    relevant = set(range(spec.s))
    for sel in sels:
        for j in sel:
            if j in relevant:
                freq[j] += 1
        false += sum(1 for j in sel if j not in relevant)
    n_ok = len(sels)
    if n_ok:
        freq /= n_ok
        false /= n_ok
    else:
        freq[:] = np.nan
        false = float("nan")
    name = label or getattr(method, "label", getattr(method, "__name__", "method"))
    return SimulationReport(freq, float(false), n_ok, name, len(failed), spec, sels)


def location_scale_panel(T: int, p: int, s: int = 5, seed: int = 0,
                         setup: Setup = Setup.FIXED_SPARSE) -> PanelData:
    """Predictor/target pairs from the location-scale design as a panel."""
    spec = DgpSpec(setup, T, p, s, seed)
    Y, X, _ = generate(spec)
    return PanelData.from_arrays(Y, X)


def synthetic_raw_panel(T: int, p: int, s: int = 5, seed: int = 0,
                        n_groups: int = 4, start: str = "1971-01-01") -> RawPanel:
    """Monthly level panel whose column ``"Y"`` follows the location-scale design.

    ``Y`` in month ``t + 1`` depends on the other columns in month ``t``. All
    columns carry transformation code 1, and predictors cycle through
    ``n_groups`` group labels.
    """
    rng = np.random.default_rng(seed)
    spec = DgpSpec(Setup.FIXED_SPARSE, T, p, s, seed)
    X = np.abs(rng.standard_normal((T + 1, p)))
    alpha, beta = coefficients(spec)
    eps = rng.standard_normal(T)
    y = np.empty(T + 1)
    y[0] = rng.standard_normal()
    y[1:] = np.sum(X[:-1] * alpha, axis=1) + np.sum(X[:-1] * beta, axis=1) * eps
    names = ("Y",) + tuple(f"x{j + 1}" for j in range(p))
    labels = ("output",) + tuple(f"group{j % n_groups + 1}" for j in range(p))
    dates = pd.date_range(start, periods=T + 1, freq="MS")
    return RawPanel(dates, np.column_stack([y, X]), names, (1,) * (p + 1), labels)


def selector(method: str, **params) -> Callable:
    """Selection rule ``(Y, X, tau) -> indices`` for ``qpcr``, ``l1``, ``scad`` or ``mcp``."""
    from .penalized import default_grid, fit_cv
    from .qpcr import QpcrConfig, qpcr

    if method == "qpcr":
        def run(Y, X, tau):
            cfg = QpcrConfig.default(len(Y), tau, params.get("ebic_C", 1.0),
                                     confounding=params.get("confounding", "previous"),
                                     ebic_form=params.get("ebic_form", "size"))
            model, _ = qpcr(Y, X, cfg)
            return model.active_set
    elif method in ("l1", "scad", "mcp"):
        def run(Y, X, tau):
            grid = default_grid(Y, X, tau, method, n_lambda=int(params.get("n_lambda", 50)))
            _, _, beta = fit_cv(Y, X, tau, method, grid, params.get("folds", "blocked"))
            return tuple(int(j) for j in np.flatnonzero(beta))
    else:
        raise ValueError(f"unknown selection method {method!r}")
    run.label = method
    return run
