"""Isolation Forest on random axis-parallel splits.

Trees are stored as flat node arrays so a whole batch can be routed through
a tree in ``height`` vectorized steps. Each tree draws from its own
``numpy.random.default_rng([seed, tree_index])`` (PCG64) stream, so forests
are reproducible bit-for-bit and trees can be built in any order.
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_array, check_is_fitted

EULER_GAMMA = 0.5772156649


def average_path_length(m) -> np.ndarray | float:
    """``c(m) = 2 H(m-1) - 2 (m-1)/m`` with ``H(i) = ln(i) + 0.5772156649``; ``c(1) = 0``."""
    m_arr = np.asarray(m, dtype=float)
    out = np.zeros_like(m_arr)
    big = m_arr > 1
    mb = m_arr[big]
    out[big] = 2.0 * (np.log(mb - 1.0) + EULER_GAMMA) - 2.0 * (mb - 1.0) / mb
    return float(out) if out.ndim == 0 else out


class IsolationTree:
    """One fitted tree. Leaves have ``feature == -1`` and record their ``size``."""

    def __init__(self, feature, threshold, left, right, size, depth):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.size = np.asarray(size, dtype=np.int64)
        self.depth = np.asarray(depth, dtype=np.int64)

    @classmethod
    def build(cls, X: np.ndarray, height_limit: int, rng: np.random.Generator) -> "IsolationTree":
        feature, threshold, left, right, size, depth = [], [], [], [], [], []

        def new_node(n, d):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            size.append(n)
            depth.append(d)
            return len(feature) - 1

        stack = [(new_node(len(X), 0), np.arange(len(X)))]
        while stack:
            node, rows = stack.pop()
            d = depth[node]
            if d >= height_limit or len(rows) <= 1:
                continue
            sub = X[rows]
            lo, hi = sub.min(axis=0), sub.max(axis=0)
            candidates = np.nonzero(hi > lo)[0]
            if not len(candidates):
                continue
            j = int(candidates[rng.integers(len(candidates))])
            split = rng.uniform(lo[j], hi[j])
            while split <= lo[j]:
                split = rng.uniform(lo[j], hi[j])
            goes_left = sub[:, j] < split
            feature[node] = j
            threshold[node] = float(split)
            left[node] = new_node(int(goes_left.sum()), d + 1)
            right[node] = new_node(int((~goes_left).sum()), d + 1)
            stack.append((right[node], rows[~goes_left]))
            stack.append((left[node], rows[goes_left]))
        return cls(feature, threshold, left, right, size, depth)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def height(self) -> int:
        return int(self.depth.max())

    def leaves(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            r = rows[inner]
            n = node[inner]
            go_left = X[r, f[inner]] < self.threshold[n]
            node[inner] = np.where(go_left, self.left[n], self.right[n])

    def path_length(self, X: np.ndarray) -> np.ndarray:
        leaf = self.leaves(X)
        return self.depth[leaf] + average_path_length(self.size[leaf])

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist()
                for k in ("feature", "threshold", "left", "right", "size", "depth")}

    @classmethod
    def from_dict(cls, data: dict) -> "IsolationTree":
        return cls(**data)

    def __eq__(self, other):
        if not isinstance(other, IsolationTree):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("feature", "threshold", "left", "right", "size", "depth"))


class IsolationForest(OutlierMixin, BaseEstimator):
    """Isolation Forest scoring by normalized mean path length.

    ``score_samples`` returns the mean path length over all trees divided by
    ``c(max_samples)``: shorter paths, i.e. smaller scores, are more
    anomalous.

    Parameters
    ----------
    n_estimators : int
    max_samples : int or "auto"
        Subsample size per tree; "auto" means ``min(256, n)``.
    random_state : int
    """

    def __init__(self, n_estimators=100, max_samples="auto", random_state=0):
        self.n_estimators = n_estimators
        self.max_samples = max_samples
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        n = len(X)
        if n < 2:
            raise ValueError("isolation forest needs at least 2 samples")
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be at least 1")
        psi = min(256, n) if self.max_samples == "auto" else int(self.max_samples)
        if not 2 <= psi <= n:
            raise ValueError(f"max_samples must lie in [2, {n}], got {self.max_samples!r}")
        seed = int(self.random_state)
        limit = int(math.ceil(math.log2(psi)))
        trees = []
        for t in range(self.n_estimators):
            rng = np.random.default_rng([seed, t])
            rows = rng.choice(n, size=psi, replace=False) if psi < n else np.arange(n)
            trees.append(IsolationTree.build(X[rows], limit, rng))
        self.estimators_ = trees
        self.max_samples_ = psi
        self.height_limit_ = limit
        self.n_features_in_ = X.shape[1]
        return self

    def _check_X(self, X) -> np.ndarray:
        check_is_fitted(self, "estimators_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if self.n_features_in_ == 1 else X.reshape(1, -1)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"model has {self.n_features_in_} features, input has {X.shape[1]}")
        return X

    def path_lengths(self, X) -> np.ndarray:
        """Per-tree path lengths, shape ``(n_estimators, n_samples)``."""
        X = self._check_X(X)
        return np.stack([tree.path_length(X) for tree in self.estimators_])

    def score_samples(self, X) -> np.ndarray:
        return self.path_lengths(X).mean(axis=0) / average_path_length(self.max_samples_)

    def to_dict(self) -> dict:
        check_is_fitted(self, "estimators_")
        return {
            "kind": "isolation_forest",
            "version": 1,
            "n_estimators": self.n_estimators,
            "max_samples": self.max_samples_,
            "random_state": int(self.random_state),
            "n_features": self.n_features_in_,
            "trees": [t.to_dict() for t in self.estimators_],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "IsolationForest":
        if data.get("kind") != "isolation_forest" or data.get("version") != 1:
            raise ValueError("not a version-1 isolation_forest model")
        model = cls(n_estimators=data["n_estimators"], max_samples=data["max_samples"],
                    random_state=data["random_state"])
        model.estimators_ = [IsolationTree.from_dict(t) for t in data["trees"]]
        model.max_samples_ = data["max_samples"]
        model.height_limit_ = int(math.ceil(math.log2(model.max_samples_)))
        model.n_features_in_ = data["n_features"]
        return model


def fit_iforest(samples, n_trees: int = 100, subsample_size: int | str = "auto",
                seed: int = 0) -> IsolationForest:
    return IsolationForest(n_estimators=n_trees, max_samples=subsample_size,
                           random_state=seed).fit(samples)


def path_length(tree: IsolationTree, x) -> float | np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return float(tree.path_length(x[None, :])[0])
    return tree.path_length(x)


def iforest_score(forest: IsolationForest, x) -> float | np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1 and forest.n_features_in_ > 1 or x.ndim == 0:
        return float(forest.score_samples(x)[0])
    return forest.score_samples(x)
