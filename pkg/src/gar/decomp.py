"""Group contributions to predicted quantiles, sector indices and their correlations."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .errors import (
    DegenerateSeries,
    IndexOutOfRange,
    InsufficientOverlap,
    PartitionIncomplete,
    PartitionOverlap,
    TooShort,
)
from .model import QuantileModel

CONSTANT = "constant"
LAG = "lag"


@dataclass(frozen=True)
class GroupPartition:
    """Named disjoint column groups covering ``0..p-1``; the intercept is ``"constant"``."""

    groups: tuple        # ((name, (indices...)), ...)
    p: int

    def __post_init__(self):
        groups = tuple((str(n), tuple(int(j) for j in idx)) for n, idx in dict(self.groups).items())
        object.__setattr__(self, "groups", groups)
        if any(n == CONSTANT for n, _ in groups):
            raise PartitionOverlap(f"{CONSTANT!r} is reserved for the intercept")
        seen = {}
        for name, idx in groups:
            for j in idx:
                if not 0 <= j < self.p:
                    raise IndexOutOfRange(f"column {j} outside 0..{self.p - 1}")
                if j in seen:
                    raise PartitionOverlap(f"column {j} is in both {seen[j]!r} and {name!r}")
                seen[j] = name
        missing = sorted(set(range(self.p)) - seen.keys())
        if missing:
            raise PartitionIncomplete(f"columns {missing[:10]} belong to no group")

    @classmethod
    def from_labels(cls, labels: Sequence[str]) -> "GroupPartition":
        out: dict = {}
        for j, g in enumerate(labels):
            out.setdefault(str(g), []).append(j)
        return cls(tuple(out.items()), len(labels))

    @property
    def names(self) -> list:
        return [n for n, _ in self.groups] + [CONSTANT]

    def indices(self, name: str) -> tuple:
        return dict(self.groups)[name]


def contribution(model: QuantileModel, x, group: Iterable) -> float:
    """``sum_{j in group} beta_j x_j``; the member ``"constant"`` adds the intercept."""
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != model.p:
        raise IndexOutOfRange(f"x has {x.shape[0]} entries, model has {model.p}")
    total = 0.0
    cols = []
    for g in group:
        if g == CONSTANT:
            total += model.intercept
            continue
        j = int(g)
        if not 0 <= j < model.p:
            raise IndexOutOfRange(f"column {j} outside 0..{model.p - 1}")
        cols.append(j)
    if cols:
        total += float(model.beta[cols] @ x[cols])
    return total


def decompose_series(models: Sequence[QuantileModel], x_rows, dates: Sequence,
                     partition: GroupPartition) -> pd.DataFrame:
    """Per-date group contributions plus the ``predicted`` quantile.

    Row sums over the group columns reproduce ``predicted``.
    """
    x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
    if len(models) != x_rows.shape[0] or len(dates) != len(models):
        raise ValueError("models, x_rows and dates must have equal length")
    rows = []
    for m, x in zip(models, x_rows):
        if m.p != partition.p:
            raise IndexOutOfRange("model dimension differs from the partition")
        rows.append([contribution(m, x, idx) for _, idx in partition.groups]
                    + [m.intercept, float(m.predict(x))])
    return pd.DataFrame(rows, index=pd.Index(dates, name="date"),
                        columns=partition.names + ["predicted"])


def additivity_error(frame: pd.DataFrame) -> float:
    """Largest relative gap between summed contributions and the prediction."""
    parts = frame.drop(columns="predicted").to_numpy()
    pred = frame["predicted"].to_numpy()
    scale = np.maximum(np.abs(pred), np.abs(parts).sum(axis=1))
    gap = np.abs(parts.sum(axis=1) - pred)
    return float(np.max(np.where(scale > 0, gap / np.where(scale > 0, scale, 1), gap), initial=0.0))


@dataclass(frozen=True)
class SectorIndex:
    dates: pd.Index
    raw: pd.Series
    smoothed: pd.Series
    values: pd.Series             # final index (standardized when requested)
    standardized: bool
    mean: float = 0.0
    std: float = 1.0
    smooth_window: int = 3

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"raw": self.raw, "smoothed": self.smoothed, "index": self.values})


def build_index(series: pd.Series, smooth_window: int = 3, standardize: bool = True) -> SectorIndex:
    """Trailing moving average of width ``smooth_window``, then optional z-scoring.

    The first ``smooth_window - 1`` dates have no average and are dropped.
    """
    series = pd.Series(series, dtype=float)
    if smooth_window < 1:
        raise ValueError("smooth_window must be >= 1")
    if len(series) < smooth_window:
        raise TooShort(f"series has {len(series)} points, window is {smooth_window}")
    smoothed = series.rolling(smooth_window).mean().iloc[smooth_window - 1:]
    mean, std = 0.0, 1.0
    values = smoothed
    if standardize:
        mean = float(smoothed.mean())
        std = float(smoothed.std(ddof=0))
        if not std > 1e-12 * max(1.0, abs(mean)):
            raise DegenerateSeries("index has zero variance")
        values = (smoothed - mean) / std
    return SectorIndex(smoothed.index, series, smoothed, values, standardize, mean, std,
                       smooth_window)


@dataclass(frozen=True)
class CorrelationTable:
    r: pd.DataFrame
    z: pd.DataFrame
    p: pd.DataFrame
    n: pd.DataFrame

    def stars(self) -> pd.DataFrame:
        def mark(p):
            return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.1 else ""
        out = self.r.map(lambda v: f"{v:.3f}")
        for a in self.r.index:
            for b in self.r.columns:
                if a != b:
                    out.loc[a, b] += mark(self.p.loc[a, b])
        return out


def corr_z(r: float, n: int) -> float:
    """``r * sqrt((n - 2) / (1 - r^2))``."""
    if abs(r) >= 1:
        return math.copysign(math.inf, r)
    return r * math.sqrt((n - 2) / (1 - r * r))


def correlation_matrix(indices: Mapping[str, pd.Series], reference: str = "normal") -> CorrelationTable:
    """Pairwise correlations on common dates with two-sided significance.

    ``reference`` is ``"normal"`` or ``"t"`` (Student t with ``n - 2`` df).
    """
    names = list(indices)
    k = len(names)
    R, Z, P, N = (np.eye(k), np.zeros((k, k)), np.zeros((k, k)), np.zeros((k, k), dtype=int))
    for i in range(k):
        N[i, i] = int(pd.Series(indices[names[i]]).notna().sum())
        for j in range(i + 1, k):
            both = pd.concat([pd.Series(indices[names[i]]), pd.Series(indices[names[j]])],
                             axis=1, join="inner").dropna()
            n = len(both)
            if n < 2:
                raise InsufficientOverlap(f"{names[i]} and {names[j]} share {n} dates")
            a, b = both.iloc[:, 0].to_numpy(), both.iloc[:, 1].to_numpy()
            sa, sb = a.std(), b.std()
            if sa == 0 or sb == 0:
                raise DegenerateSeries(f"constant series in pair {names[i]}, {names[j]}")
            r = float(np.clip(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb), -1, 1))
            z = corr_z(r, n)
            if reference == "t":
                p = 2 * stats.t.sf(abs(z), max(n - 2, 1)) if n > 2 else 1.0
            else:
                p = 2 * stats.norm.sf(abs(z))
            R[i, j] = R[j, i] = r
            Z[i, j] = Z[j, i] = z
            P[i, j] = P[j, i] = p
            N[i, j] = N[j, i] = n
    mk = lambda M: pd.DataFrame(M, index=names, columns=names)  # noqa: E731
    return CorrelationTable(mk(R), mk(Z), mk(P), mk(N))


def persistent_selection(active_sets: Sequence[Iterable[int]], p: int, k: int) -> np.ndarray:
    """Columns selected in at least ``k`` consecutive windows."""
    M = np.zeros((len(active_sets), p), dtype=bool)
    for t, s in enumerate(active_sets):
        M[t, list(s)] = True
    keep = np.zeros(p, dtype=bool)
    run = np.zeros(p, dtype=int)
    for row in M:
        run = np.where(row, run + 1, 0)
        keep |= run >= k
    return keep
