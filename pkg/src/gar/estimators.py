"""Uniform handles around every forecaster, used by the backtest and the CLI."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .dataset import PanelData
from .garch import fit_garch, forecast_quantile
from .model import QuantileModel, active_from_beta, null_model
from .penalized import PenaltySpec, default_grid, fit_cv, penalized_qr
from .qpcr import QpcrConfig, qpcr
from .qr_core import fit_qr
from .qrf import ForestConfig, Variant, fit_arrays, predict_quantile

KINDS = ("qpcr", "l1", "scad", "mcp", "qrfm", "qrfatw", "garch", "intercept")

# display names in report order
LABELS = {
    "qpcr": "QPCR", "l1": "l1-QR", "scad": "SCAD", "mcp": "MCP",
    "qrfatw": "QRFATW", "qrfm": "QRFM", "garch": "GARCH", "intercept": "Intercept",
}


@dataclass(frozen=True)
class Prediction:
    value: float
    model: Optional[QuantileModel] = None


@dataclass(frozen=True)
class Estimator:
    """A named forecaster: ``kind`` picks the method, ``params`` its settings."""

    kind: str
    name: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown method {self.kind!r}; choose from {', '.join(KINDS)}")
        if not self.name:
            object.__setattr__(self, "name", self.kind)

    @property
    def label(self) -> str:
        return LABELS.get(self.name, self.name)

    def fit_predict(self, train: PanelData, x_next, tau: float,
                    rng: Optional[np.random.Generator] = None) -> Prediction:
        rng = np.random.default_rng(rng)
        return _DISPATCH[self.kind](train, np.asarray(x_next, dtype=float), tau, rng,
                                    dict(self.params))


def _qpcr(train, x, tau, rng, params):
    base = QpcrConfig.default(train.T, tau, params.pop("ebic_C", 1.0))
    cfg = QpcrConfig(tau, params.pop("d_star", base.d_star),
                     params.pop("m_schedule", base.m_schedule),
                     params.pop("D_max", base.D_max), base.ebic_C,
                     params.pop("confounding", base.confounding),
                     params.pop("ebic_form", base.ebic_form))
    model, _ = qpcr(train.Y, train.X, cfg, train.column_names)
    return Prediction(float(model.predict(x)), model)


def _penalized(kind):
    def run(train, x, tau, rng, params):
        lam = params.get("lambda")
        if lam is None:
            grid = default_grid(train.Y, train.X, tau, kind,
                                n_lambda=int(params.get("n_lambda", 50)),
                                n_folds=int(params.get("n_folds", 5)),
                                a_values=params.get("a_values"))
            spec, b0, beta = fit_cv(train.Y, train.X, tau, kind, grid,
                                    params.get("folds", "blocked"), int(rng.integers(2**31)))
        else:
            spec = PenaltySpec(kind, float(lam), float(params.get("a", float("nan"))))
            b0, beta = penalized_qr(train.Y, train.X, tau, spec)
        model = QuantileModel(tau, active_from_beta(beta), beta, b0,
                              column_names=train.column_names, method=kind,
                              extra={"lambda": spec.lam, "a": spec.a})
        return Prediction(float(model.predict(x)), model)
    return run


def _forest(variant):
    def run(train, x, tau, rng, params):
        cfg = ForestConfig(int(params.get("n_trees", 2000)), int(params.get("min_leaf", 5)),
                           int(params.get("mtry_extra", 20)), tau, int(rng.integers(2**31)))
        forest = fit_arrays(train.Y, train.X, cfg, variant, int(params.get("n_jobs", 1)))
        return Prediction(predict_quantile(forest, x, tau,
                                           normalize=bool(params.get("normalize", False))))
    return run


def _garch(train, x, tau, rng, params):
    fit = fit_garch(train.Y)
    return Prediction(forecast_quantile(fit, tau, int(params.get("n_boot", 100_000)), rng))


def _intercept(train, x, tau, rng, params):
    f = fit_qr(train.Y, np.zeros((train.T, 0)), tau)
    model = null_model(tau, train.p, f.intercept, "intercept", train.column_names)
    return Prediction(float(f.intercept), model)


_DISPATCH: dict[str, Any] = {
    "qpcr": _qpcr,
    "l1": _penalized("l1"),
    "scad": _penalized("scad"),
    "mcp": _penalized("mcp"),
    "qrfm": _forest(Variant.QRFM),
    "qrfatw": _forest(Variant.QRFATW),
    "garch": _garch,
    "intercept": _intercept,
}


def make(spec) -> Estimator:
    """Build an estimator from a kind string or a ``{"kind": ..., ...}`` mapping."""
    if isinstance(spec, Estimator):
        return spec
    if isinstance(spec, str):
        return Estimator(spec)
    spec = dict(spec)
    kind = spec.pop("kind", None) or spec.get("name")
    name = spec.pop("name", kind)
    return Estimator(kind, name, spec)
