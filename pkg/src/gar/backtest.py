"""Rolling-window out-of-sample evaluation: MPE and Diebold-Mariano tests."""
from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .dataset import PanelData, RollingWindowPlan, windows
from .errors import EmptyRecords, GarError, MisalignedRecords, TooShort
from .estimators import Estimator, make
from .model import QuantileModel
from .qr_core import check_tau, rho

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ForecastRecord:
    window_index: int
    date: Optional[pd.Timestamp]
    method: str
    tau: float
    predicted: float
    realized: float
    error: str = ""
    model: Optional[QuantileModel] = field(default=None, compare=False, repr=False)
    x_next: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    @property
    def ok(self) -> bool:
        return not self.error and math.isfinite(self.predicted)

    def row(self) -> dict:
        return {
            "window": self.window_index,
            "date": "" if self.date is None else pd.Timestamp(self.date).strftime("%Y-%m-%d"),
            "method": self.method,
            "tau": self.tau,
            "predicted": self.predicted,
            "realized": self.realized,
            "error": self.error,
        }


@dataclass(frozen=True)
class DmResult:
    statistic: float
    loss_diff_mean: float
    hac_variance: float
    n: int
    lag: int = 0
    degenerate: bool = False


@dataclass
class BacktestResult:
    records: list
    methods: list
    failures: dict

    def for_method(self, name: str) -> list:
        return [r for r in self.records if r.method == name]

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.row() for r in self.records])


def _stream(seed: int, name: str, window: int) -> np.random.Generator:
    # keyed by method name, so adding methods does not move other streams
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()), window)))


def _one(est: Estimator, w, tau: float, seed: int) -> ForecastRecord:
    try:
        pred = est.fit_predict(w.train, w.x_next, tau, _stream(seed, est.name, w.index))
        value, model, err = float(pred.value), pred.model, ""
        if not math.isfinite(value):
            err = "non-finite prediction"
    except GarError as exc:
        value, model, err = float("nan"), None, f"{type(exc).__name__}: {exc}"
    return ForecastRecord(w.index, w.date, est.name, tau, value, w.y_next, err, model,
                          w.x_next)


def run_backtest(panel: PanelData, plan: RollingWindowPlan, methods: Sequence, tau: float,
                 seed: int = 0, n_jobs: int = 1) -> BacktestResult:
    """One record per (window, method); failed fits become records with ``error`` set."""
    tau = check_tau(tau)
    ests = [make(m) for m in methods]
    names = [e.name for e in ests]
    if len(set(names)) != len(names):
        raise ValueError("method names must be unique")
    wins = list(windows(panel, plan))
    grid = [(e, w) for w in wins for e in ests]
    if n_jobs == 1:
        recs = [_one(e, w, tau, seed) for e, w in grid]
    else:
        recs = Parallel(n_jobs=n_jobs)(delayed(_one)(e, w, tau, seed) for e, w in grid)
    failures = {n: 0 for n in names}
    for r in recs:
        if not r.ok:
            failures[r.method] += 1
            log.warning("window %d, %s: %s", r.window_index, r.method, r.error)
    return BacktestResult(recs, names, failures)


def _losses(records) -> tuple:
    recs = [r for r in records if r.ok and math.isfinite(r.realized)]
    if not recs:
        raise EmptyRecords("no usable forecast records")
    tau = recs[0].tau
    u = np.array([r.realized - r.predicted for r in recs])
    return recs, rho(tau, u)


def mpe(records) -> float:
    """Mean check loss of realized minus predicted over usable records."""
    _, loss = _losses(records)
    return float(np.mean(loss))


def newey_west(d, lag: int) -> float:
    """Bartlett-kernel long-run variance of ``d`` (demeaned, divisor ``n``)."""
    d = np.asarray(d, dtype=float)
    n = d.size
    e = d - d.mean()
    v = float(e @ e) / n
    for k in range(1, min(lag, n - 1) + 1):
        v += 2.0 * (1.0 - k / (lag + 1)) * float(e[k:] @ e[:-k]) / n
    return max(v, 0.0)


def default_lag(n: int) -> int:
    return int(math.floor(n ** (1.0 / 3.0) + 1e-12))


def dm_from_diff(d, lag: Optional[int] = None) -> DmResult:
    d = np.asarray(d, dtype=float)
    n = d.size
    if n < 2:
        raise TooShort("need at least two loss differentials")
    lag = default_lag(n) if lag is None else int(lag)
    mean = float(np.mean(d))
    if np.all(d == d[0]):
        stat = 0.0 if d[0] == 0 else math.copysign(math.inf, d[0])
        return DmResult(stat, mean, 0.0, n, lag, True)
    var = newey_west(d, lag)
    if var <= 0:
        stat = 0.0 if mean == 0 else math.copysign(math.inf, mean)
        return DmResult(stat, mean, var, n, lag, True)
    return DmResult(mean / math.sqrt(var / n), mean, var, n, lag, False)


def diebold_mariano(a, b, lag: Optional[int] = None, min_n: int = 8) -> DmResult:
    """DM test on check losses; a negative statistic favours ``a``.

    Records are matched by window index; only windows usable for both
    methods enter.
    """
    ra, la = _losses(a)
    rb, lb = _losses(b)
    ka = {r.window_index: (r, x) for r, x in zip(ra, la)}
    kb = {r.window_index: (r, x) for r, x in zip(rb, lb)}
    common = sorted(ka.keys() & kb.keys())
    for w in common:
        if ka[w][0].realized != kb[w][0].realized:
            raise MisalignedRecords(f"window {w} has different realized values")
    if len(common) < min_n:
        raise MisalignedRecords(f"only {len(common)} aligned records, need {min_n}")
    d = np.array([ka[w][1] - kb[w][1] for w in common])
    return dm_from_diff(d, lag)


def report(result: BacktestResult, reference: Optional[str] = None,
           order: Optional[Sequence[str]] = None, lag: Optional[int] = None) -> pd.DataFrame:
    """MPE (x 1e-3) per method and DM statistics of ``reference`` against each other method.

    The reference row carries no DM statistic.
    """
    names = list(order) if order is not None else list(result.methods)
    reference = reference or names[0]
    ref = result.for_method(reference)
    rows = []
    for name in names:
        recs = result.for_method(name)
        dm = None if name == reference else diebold_mariano(ref, recs, lag).statistic
        rows.append({"method": name, "mpe_x1e3": mpe(recs) * 1e3, "dm": dm,
                     "n_failed": result.failures.get(name, 0)})
    return pd.DataFrame(rows, columns=["method", "mpe_x1e3", "dm", "n_failed"])


def dm_matrix(result: BacktestResult, lag: Optional[int] = None) -> pd.DataFrame:
    """Pairwise DM statistics, row method versus column method."""
    names = list(result.methods)
    out = pd.DataFrame(np.zeros((len(names), len(names))), index=names, columns=names)
    for a in names:
        for b in names:
            if a != b:
                out.loc[a, b] = diebold_mariano(result.for_method(a), result.for_method(b),
                                                lag).statistic
    return out
