"""Sparse linear conditional-quantile model shared by the linear estimators."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class QuantileModel:
    tau: float
    active_set: tuple
    beta: np.ndarray
    intercept: float
    ebic_value: float = float("nan")
    column_names: tuple = ()
    method: str = ""
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "active_set", tuple(int(j) for j in self.active_set))

    @property
    def p(self) -> int:
        return self.beta.shape[0]

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return np.asarray(self.intercept + X @ self.beta)
        return self.intercept + X @ self.beta

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "tau": self.tau,
            "intercept": self.intercept,
            "active_set": list(self.active_set),
            "beta": self.beta.tolist(),
            "ebic_value": None if not np.isfinite(self.ebic_value) else self.ebic_value,
            "column_names": list(self.column_names),
            **({"extra": self.extra} if self.extra else {}),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuantileModel":
        ebic = d.get("ebic_value")
        return cls(
            tau=float(d["tau"]),
            active_set=tuple(d["active_set"]),
            beta=np.asarray(d["beta"], dtype=float),
            intercept=float(d["intercept"]),
            ebic_value=float("nan") if ebic is None else float(ebic),
            column_names=tuple(d.get("column_names", ())),
            method=d.get("method", ""),
            extra=d.get("extra", {}),
        )

    @classmethod
    def from_support(cls, tau, p, support, coefs, intercept, **kw) -> "QuantileModel":
        beta = np.zeros(p)
        support = [int(j) for j in support]
        if support:
            beta[support] = coefs
        return cls(tau=tau, active_set=tuple(sorted(support)), beta=beta,
                   intercept=float(intercept), **kw)


def active_from_beta(beta, tol: float = 0.0) -> tuple:
    beta = np.asarray(beta)
    return tuple(int(j) for j in np.flatnonzero(np.abs(beta) > tol))


def null_model(tau: float, p: int, intercept: float, method: str = "",
               names: Optional[tuple] = None) -> QuantileModel:
    return QuantileModel(tau, (), np.zeros(p), intercept, column_names=names or (),
                         method=method)
