"""Honest quantile random forests with mean-split and quantile-split trees.

Each tree draws ``floor(T/2)`` rows without replacement and splits them into a
structure half, used to grow the tree, and a weights half, whose members are
counted in the leaves at prediction time. Splits maximise the summed absolute
difference between each child's statistic (mean or tau-quantile) and the
parent's.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from joblib import Parallel, delayed

from .dataset import PanelData
from .errors import AllLeavesEmpty, DataError, TooShort
from .qr_core import check_tau, weighted_quantile


class Variant(str, Enum):
    QRFM = "m"
    QRFATW = "atw"

    @classmethod
    def parse(cls, v) -> "Variant":
        if isinstance(v, cls):
            return v
        key = str(v).lower()
        aliases = {"qrfm": cls.QRFM, "mean": cls.QRFM, "qrfatw": cls.QRFATW, "quantile": cls.QRFATW}
        return aliases[key] if key in aliases else cls(key)


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 2000
    min_leaf: int = 5
    mtry_extra: int = 20
    tau: float = 0.05
    seed: int = 0

    def __post_init__(self):
        check_tau(self.tau)
        if self.n_trees < 1 or self.min_leaf < 1 or self.mtry_extra < 0:
            raise DataError("need n_trees >= 1, min_leaf >= 1, mtry_extra >= 0")

    def mtry(self, p: int) -> int:
        return min(p, math.isqrt(p) + self.mtry_extra)


@dataclass
class Tree:
    """Flat binary tree; ``left[i] == -1`` marks node ``i`` as a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_id: np.ndarray          # leaf number per node (-1 for internal nodes)
    n_leaves: int
    subset_sizes: list = field(default_factory=list)

    def apply(self, X) -> np.ndarray:
        """Leaf number of each row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(X.shape[0], dtype=np.intp)
        rows = np.arange(X.shape[0])
        active = self.left[node] >= 0
        while active.any():
            idx = rows[active]
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.left[node] >= 0
        return self.leaf_id[node]

    def leaf_path(self, k: int) -> list:
        """Ordered split conditions ``(feature, threshold, '<=' | '>')`` defining leaf ``k``."""
        parent = {}
        for i in np.flatnonzero(self.left >= 0):
            parent[int(self.left[i])] = (int(i), "<=")
            parent[int(self.right[i])] = (int(i), ">")
        node = int(np.flatnonzero(self.leaf_id == k)[0])
        path = []
        while node in parent:
            i, side = parent[node]
            path.append((int(self.feature[i]), float(self.threshold[i]), side))
            node = i
        return path[::-1]


@dataclass
class Forest:
    trees: list
    subsamples: list            # (structure rows, weight rows) per tree
    weight_leaves: list         # leaf number of each weight row, per tree
    Y: np.ndarray
    X: np.ndarray
    config: ForestConfig
    variant: Variant
    column_names: tuple = ()

    @property
    def T(self) -> int:
        return self.Y.shape[0]


def _prefix_quantiles(ys: np.ndarray, tau: float) -> np.ndarray:
    """Lower tau-quantile of ``ys[:k]`` for every ``k = 1..n`` along axis 0.

    ``ys`` has shape ``(n, F)``; the result has the same shape.
    """
    n, F = ys.shape
    order = np.argsort(ys, axis=0, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(n)[:, None], axis=0)
    dt = np.int16 if n < 2**15 else np.int32
    # counts[k, v, f] = #{i <= k : rank_i <= v}
    le = (ranks[:, None, :] <= np.arange(n)[None, :, None]).astype(dt)
    counts = np.cumsum(le, axis=0, dtype=dt)
    need = np.ceil(tau * np.arange(1, n + 1) - 1e-12).astype(dt)
    need = np.maximum(need, 1)
    v = np.argmax(counts >= need[:, None, None], axis=1)
    sorted_y = np.take_along_axis(ys, order, axis=0)
    return np.take_along_axis(sorted_y, v, axis=0)


def _node_quantile(y: np.ndarray, tau: float) -> float:
    s = np.sort(y)
    return float(s[max(int(math.ceil(tau * s.size - 1e-12)), 1) - 1])


def _best_split(Xn: np.ndarray, yn: np.ndarray, feats: np.ndarray, variant: Variant, tau: float):
    """Best ``(criterion, feature, threshold)`` over midpoints, or ``None``."""
    n = yn.shape[0]
    Z = Xn[:, feats]
    order = np.argsort(Z, axis=0, kind="stable")
    zs = np.take_along_axis(Z, order, axis=0)
    ys = yn[order]
    distinct = zs[1:] > zs[:-1]          # split after position k keeps children nonempty
    if not distinct.any():
        return None
    if variant is Variant.QRFM:
        parent = yn.mean()
        csum = np.cumsum(ys, axis=0)
        k = np.arange(1, n)[:, None]
        left = csum[:-1] / k
        right = (csum[-1] - csum[:-1]) / (n - k)
    else:
        parent = _node_quantile(yn, tau)
        left = _prefix_quantiles(ys, tau)[:-1]
        right = _prefix_quantiles(ys[::-1], tau)[::-1][1:]
    crit = np.abs(left - parent) + np.abs(right - parent)
    crit = np.where(distinct, crit, -np.inf)
    # first maximum in (feature draw order, split value) order
    flat = int(np.argmax(crit.T))
    f, k = divmod(flat, n - 1)
    best = crit[k, f]
    if not best > 0:
        return None
    return float(best), int(feats[f]), 0.5 * (zs[k, f] + zs[k + 1, f])


def grow_tree(X, Y, config: ForestConfig, variant, rng: np.random.Generator) -> Tree:
    """Grow one tree on the structure half ``(X, Y)``.

    Nodes are processed last-in first-out; a node becomes a leaf when it has
    at most ``min_leaf`` rows or no split has a positive criterion.
    """
    variant = Variant.parse(variant)
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).ravel()
    if Y.size == 0:
        raise DataError("grow_tree needs data")
    p = X.shape[1]
    mtry = config.mtry(p)
    feature, threshold, left, right, leaf_id = [], [], [], [], []
    sizes = []

    def new_node():
        for lst, v in ((feature, -1), (threshold, np.nan), (left, -1), (right, -1), (leaf_id, -1)):
            lst.append(v)
        return len(feature) - 1

    queue = [(np.arange(Y.size), new_node())]
    k = 0
    while queue:
        rows, node = queue.pop()
        split = None
        if rows.size > config.min_leaf:
            feats = rng.choice(p, size=mtry, replace=False)
            sizes.append(int(feats.size))
            split = _best_split(X[rows], Y[rows], feats, variant, config.tau)
        if split is None:
            leaf_id[node] = k
            k += 1
            continue
        _, j, s = split
        mask = X[rows, j] <= s
        feature[node], threshold[node] = j, s
        lnode, rnode = new_node(), new_node()
        left[node], right[node] = lnode, rnode
        queue.append((rows[mask], lnode))
        queue.append((rows[~mask], rnode))
    return Tree(
        feature=np.asarray(feature, dtype=np.intp),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.intp),
        right=np.asarray(right, dtype=np.intp),
        leaf_id=np.asarray(leaf_id, dtype=np.intp),
        n_leaves=k,
        subset_sizes=sizes,
    )


def tree_rng(seed: int, b: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))


def _fit_one(X, Y, config, variant, b):
    rng = tree_rng(config.seed, b)
    T = Y.shape[0]
    draw = rng.choice(T, size=T // 2, replace=False)
    half = draw.size // 2
    struct, wts = draw[:half], draw[half:2 * half]
    tree = grow_tree(X[struct], Y[struct], config, variant, rng)
    return tree, (struct, wts), tree.apply(X[wts])


def fit_arrays(Y, X, config: ForestConfig, variant, n_jobs: int = 1,
               column_names: tuple = ()) -> Forest:
    variant = Variant.parse(variant)
    Y = np.asarray(Y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if Y.shape[0] < 4:
        raise TooShort("a forest needs at least 4 rows")
    if n_jobs == 1:
        out = [_fit_one(X, Y, config, variant, b) for b in range(config.n_trees)]
    else:
        out = Parallel(n_jobs=n_jobs)(
            delayed(_fit_one)(X, Y, config, variant, b) for b in range(config.n_trees))
    trees, subs, leaves = zip(*out)
    return Forest(list(trees), list(subs), list(leaves), Y, X, config, variant,
                  tuple(column_names))


def fit_forest(panel: PanelData, config: ForestConfig, variant, n_jobs: int = 1) -> Forest:
    return fit_arrays(panel.Y, panel.X, config, variant, n_jobs, panel.column_names)


def forest_weights(forest: Forest, x, normalize: bool = False) -> np.ndarray:
    """Weights ``w_t(x)`` over training rows.

    By default each tree adds the raw count of its weight-half members sharing
    ``x``'s leaf, divided by the number of trees. With ``normalize`` each
    tree's counts are divided by that leaf's membership first.
    """
    x = np.asarray(x, dtype=float).reshape(1, -1)
    w = np.zeros(forest.T)
    for tree, (_, wrows), leaves in zip(forest.trees, forest.subsamples, forest.weight_leaves):
        members = wrows[leaves == tree.apply(x)[0]]
        if members.size:
            np.add.at(w, members, 1.0 / members.size if normalize else 1.0)
    return w / len(forest.trees)


def predict_quantile(forest: Forest, x, tau: Optional[float] = None, normalize: bool = False,
                     rule: str = "objective") -> float:
    tau = forest.config.tau if tau is None else check_tau(tau)
    w = forest_weights(forest, x, normalize)
    if not np.any(w > 0):
        raise AllLeavesEmpty("query falls in empty weight-half leaves in every tree")
    return weighted_quantile(forest.Y, w, tau, rule=rule)
