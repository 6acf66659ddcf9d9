"""FRED-MD style panel ingestion, transform codes, alignment and rolling windows.

CSV layout: the first row holds column names (first cell is a date label),
the second row holds one transformation code per series, then one dated row
per period. Transformation codes:

    1 level, 2 first difference, 3 second difference, 4 log,
    5 log first difference, 6 log second difference,
    7 first difference of the period-on-period growth rate.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DuplicateColumn,
    EmptyAfterAlignment,
    MalformedCsv,
    NonMonotoneDates,
    NonPositiveForLog,
    PlanOutOfRange,
    TargetMissing,
)

log = logging.getLogger(__name__)

VALID_CODES = frozenset(range(1, 8))
LAG_GROUP = "lag"


@dataclass(frozen=True)
class RawPanel:
    dates: pd.DatetimeIndex
    values: np.ndarray
    column_names: tuple
    transform_codes: tuple
    group_labels: tuple = ()
    transformed: bool = False

    @property
    def p(self) -> int:
        return len(self.column_names)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=self.dates, columns=list(self.column_names))


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def invert(self, Z):
        return np.asarray(Z, dtype=float) * self.std + self.mean

    @classmethod
    def fit(cls, X) -> "Standardization":
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        # constant columns are centred but not rescaled
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)


@dataclass(frozen=True)
class PanelData:
    """Aligned pairs ``(Y[t], X[t])`` where ``Y[t]`` is the target one step after ``X[t]``.

    ``x_future`` is the most recent predictor row whose target is not yet
    observed (the row used for a live forecast), when available.
    """

    Y: np.ndarray
    X: np.ndarray
    column_names: tuple
    group_labels: tuple = ()
    dates: Optional[pd.DatetimeIndex] = None
    target_dates: Optional[pd.DatetimeIndex] = None
    standardization: Optional[Standardization] = None
    x_future: Optional[np.ndarray] = None
    future_date: Optional[pd.Timestamp] = None
    target_name: Optional[str] = None

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float).ravel()
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != Y.shape[0]:
            raise ValueError("X and Y have different numbers of rows")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "column_names", tuple(self.column_names))
        object.__setattr__(self, "group_labels", tuple(self.group_labels))

    @classmethod
    def from_arrays(cls, Y, X, column_names: Optional[Sequence[str]] = None,
                    group_labels: Sequence[str] = (), **kw) -> "PanelData":
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if column_names is None:
            column_names = [f"x{j + 1}" for j in range(X.shape[1])]
        return cls(Y=Y, X=X, column_names=tuple(column_names),
                   group_labels=tuple(group_labels), **kw)

    @property
    def T(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def raw_X(self) -> np.ndarray:
        if self.standardization is None:
            return self.X
        return self.standardization.invert(self.X)

    def raw_x_future(self):
        if self.x_future is None or self.standardization is None:
            return self.x_future
        return self.standardization.invert(self.x_future)

    def rows(self, idx) -> "PanelData":
        """Sub-panel on the given rows (standardization metadata is kept)."""
        idx = np.asarray(idx)
        return replace(
            self,
            Y=self.Y[idx],
            X=self.X[idx],
            dates=None if self.dates is None else self.dates[idx],
            target_dates=None if self.target_dates is None else self.target_dates[idx],
            x_future=None,
            future_date=None,
        )


@dataclass(frozen=True)
class RollingWindowPlan:
    window_length: int
    n_forecasts: int
    first_forecast_index: Optional[int] = None

    @property
    def first(self) -> int:
        return self.window_length if self.first_forecast_index is None else self.first_forecast_index


@dataclass(frozen=True)
class Window:
    index: int
    forecast_row: int
    train: PanelData
    x_next: np.ndarray
    y_next: float
    date: Optional[pd.Timestamp] = None
    train_range: tuple = field(default=(0, 0))


# --- ingestion -------------------------------------------------------------

def _parse_date(text: str) -> datetime:
    text = text.strip()
    for fmt in ("%Y-%m-%d", "%m/%d/%Y"):
        try:
            return datetime.strptime(text, fmt)
        except ValueError:
            pass
    raise MalformedCsv(f"unparseable date {text!r}")


def _parse_float(text: str) -> float:
    text = text.strip()
    if not text:
        return np.nan
    try:
        return float(text)
    except ValueError:
        return np.nan


def _check_dates(dates: pd.DatetimeIndex) -> None:
    if len(dates) < 2:
        return
    if not dates.is_monotonic_increasing or dates.has_duplicates:
        raise NonMonotoneDates("dates are not strictly increasing")
    months = dates.year * 12 + dates.month
    steps = np.diff(np.asarray(months))
    if np.any(steps != steps[0]) or steps[0] <= 0:
        raise NonMonotoneDates("dates are not uniformly spaced")


def load_fredmd_csv(path, groups=None) -> RawPanel:
    """Read a FRED-MD formatted CSV file.

    ``groups`` optionally maps column names to group labels (a dict, or the
    path of a two-column ``name,group`` CSV).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8-sig") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if len(rows) < 2:
        raise MalformedCsv("expected a header row and a transform-code row")
    header, code_row, body = rows[0], rows[1], rows[2:]
    names = [h.strip() for h in header[1:]]
    if not names or any(not n for n in names):
        raise MalformedCsv("empty column name in header")
    seen = set()
    for n in names:
        if n in seen:
            raise DuplicateColumn(f"duplicate column {n!r}")
        seen.add(n)
    codes_txt = [c.strip() for c in code_row[1:]]
    if len(codes_txt) != len(names):
        raise MalformedCsv("transform-code row length does not match header")
    try:
        codes = [int(float(c)) if float(c).is_integer() else -1 for c in codes_txt]
    except ValueError:
        raise MalformedCsv("transform-code row contains non-numeric entries") from None
    if any(c not in VALID_CODES for c in codes):
        raise MalformedCsv("transform codes must be integers in 1..7")

    dates, values = [], []
    for r in body:
        if not r[0].strip():
            continue
        dates.append(_parse_date(r[0]))
        cells = (r[1:] + [""] * len(names))[: len(names)]
        values.append([_parse_float(c) for c in cells])
    idx = pd.DatetimeIndex(dates)
    _check_dates(idx)
    vals = np.array(values, dtype=float).reshape(len(dates), len(names))

    labels: tuple = ()
    if groups is not None:
        mapping = _read_groups(groups)
        labels = tuple(mapping.get(n, "") for n in names)
    return RawPanel(idx, vals, tuple(names), tuple(codes), labels)


def _read_groups(groups) -> dict:
    if isinstance(groups, dict):
        return {str(k): str(v) for k, v in groups.items()}
    out = {}
    with Path(groups).open(newline="", encoding="utf-8-sig") as fh:
        for row in csv.reader(fh):
            if len(row) >= 2 and row[0].strip():
                out[row[0].strip()] = row[1].strip()
    # tolerate a header line
    out.pop("name", None)
    return out


# --- transforms ------------------------------------------------------------

def transform_series(x, code: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if code in (4, 5, 6):
        obs = x[np.isfinite(x)]
        if np.any(obs <= 0):
            raise NonPositiveForLog(f"code {code} requires strictly positive values")
        x = np.log(x)
    out = np.full_like(x, np.nan)
    if code in (1, 4):
        out = x.copy()
    elif code in (2, 5):
        out[1:] = np.diff(x)
    elif code in (3, 6):
        out[2:] = np.diff(x, n=2)
    elif code == 7:
        growth = np.full_like(x, np.nan)
        growth[1:] = x[1:] / x[:-1] - 1.0
        out[1:] = np.diff(growth)
    else:
        raise MalformedCsv(f"unknown transform code {code}")
    return out


def apply_transforms(raw: RawPanel) -> RawPanel:
    if len(raw.transform_codes) != raw.p:
        raise MalformedCsv("one transform code per column is required")
    cols = []
    for name, code, col in zip(raw.column_names, raw.transform_codes, raw.values.T):
        try:
            cols.append(transform_series(col, int(code)))
        except NonPositiveForLog as exc:
            raise NonPositiveForLog(f"{name}: {exc}") from None
    vals = np.column_stack(cols) if cols else raw.values.copy()
    return replace(raw, values=vals, transformed=True)


# --- alignment -------------------------------------------------------------

def build_panel(raw: RawPanel, target_column: str, standardize: bool = True,
                drop_missing_policy: str = "listwise") -> PanelData:
    """Pair the next-period target with every predictor dated ``t``.

    The target's own current value stays in ``X`` (group label ``"lag"``).
    ``drop_missing_policy`` is ``"listwise"`` (drop incomplete rows) or
    ``"error"``.
    """
    if target_column not in raw.column_names:
        raise TargetMissing(f"target column {target_column!r} not found")
    if drop_missing_policy not in ("listwise", "error"):
        raise ValueError(f"unknown missing-data policy {drop_missing_policy!r}")
    j = raw.column_names.index(target_column)
    V = raw.values
    if V.shape[0] < 2:
        raise EmptyAfterAlignment("need at least two dated rows")
    X = V[:-1]
    Y = V[1:, j]
    ok = np.isfinite(Y) & np.all(np.isfinite(X), axis=1)
    if drop_missing_policy == "error" and not ok.all():
        raise EmptyAfterAlignment(f"{int((~ok).sum())} incomplete rows")
    if not ok.any():
        raise EmptyAfterAlignment("no complete rows after alignment")
    dropped = int((~ok).sum())
    if dropped:
        log.info("listwise deletion removed %d of %d rows", dropped, ok.size)

    labels = list(raw.group_labels) if raw.group_labels else [""] * raw.p
    labels[j] = LAG_GROUP

    X, Y = X[ok], Y[ok]
    last = V[-1]
    x_future = last.copy() if np.all(np.isfinite(last)) else None
    std = None
    if standardize:
        std = Standardization.fit(X)
        X = std.apply(X)
        if x_future is not None:
            x_future = std.apply(x_future)
    return PanelData(
        Y=Y,
        X=X,
        column_names=raw.column_names,
        group_labels=tuple(labels),
        dates=raw.dates[:-1][ok],
        target_dates=raw.dates[1:][ok],
        standardization=std,
        x_future=x_future,
        future_date=raw.dates[-1] if x_future is not None else None,
        target_name=target_column,
    )


def windows(panel: PanelData, plan: RollingWindowPlan,
            standardize: Optional[bool] = None) -> Iterator[Window]:
    """Yield rolling training windows with the next predictor row and target.

    Forecast ``i`` uses training rows ``[f + i - L, f + i)`` and predicts row
    ``f + i``; ``f + i == T`` is allowed when the panel carries ``x_future``
    (the realized value is then ``nan``). Standardization, when requested
    (default: whenever the panel itself was standardized), is re-estimated on
    the training rows only.
    """
    L, n, f = plan.window_length, plan.n_forecasts, plan.first
    T = panel.T
    last_row = T if panel.x_future is not None else T - 1
    if L < 1 or n < 1 or f < L or f + n - 1 > last_row:
        raise PlanOutOfRange(
            f"plan (L={L}, first={f}, n={n}) does not fit a panel with T={T}"
        )
    if standardize is None:
        standardize = panel.standardization is not None
    Xraw = panel.raw_X()
    xf = panel.raw_x_future()
    for i in range(n):
        row = f + i
        lo, hi = row - L, row
        Xtr = Xraw[lo:hi]
        if row < T:
            x_next, y_next = Xraw[row].copy(), float(panel.Y[row])
            date = None if panel.target_dates is None else panel.target_dates[row]
        else:
            x_next, y_next = np.asarray(xf, dtype=float).copy(), float("nan")
            date = None
            if panel.future_date is not None:
                date = panel.future_date + pd.DateOffset(months=_month_step(panel))
        std = None
        if standardize:
            std = Standardization.fit(Xtr)
            Xtr = std.apply(Xtr)
            x_next = std.apply(x_next)
        train = replace(
            panel,
            Y=panel.Y[lo:hi].copy(),
            X=Xtr,
            dates=None if panel.dates is None else panel.dates[lo:hi],
            target_dates=None if panel.target_dates is None else panel.target_dates[lo:hi],
            standardization=std,
            x_future=None,
            future_date=None,
        )
        yield Window(i, row, train, x_next, y_next, date, (lo, hi))


def _month_step(panel: PanelData) -> int:
    d = panel.dates
    if d is None or len(d) < 2:
        return 1
    return int((d[1].year - d[0].year) * 12 + d[1].month - d[0].month) or 1


def write_fredmd_csv(raw: RawPanel, path) -> None:
    """Write ``raw`` in the layout read by :func:`load_fredmd_csv`."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sasdate", *raw.column_names])
        w.writerow(["Transform:", *[int(c) for c in raw.transform_codes]])
        for d, row in zip(raw.dates, raw.values):
            w.writerow([d.strftime("%Y-%m-%d"), *["" if not np.isfinite(v) else repr(float(v))
                                                  for v in row]])


def write_groups(raw: RawPanel, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "group"])
        for n, g in zip(raw.column_names, raw.group_labels):
            w.writerow([n, g])
