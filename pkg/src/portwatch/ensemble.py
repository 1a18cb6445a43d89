"""Per-feature model ensembles and their feature weights.

One single-feature base model is trained per traffic feature. A window's
ensemble score is the weighted sum of the base models' scores, with the
weights either uniform (mean ensemble) or taken from a Random Forest's
impurity-based feature importance (weighted ensemble).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.ensemble import RandomForestClassifier
from sklearn.utils.validation import check_array, check_is_fitted

from .features import FEATURE_NAMES, N_FEATURES, FeatureSet, feature_index
from .iforest import IsolationForest
from .kde import GaussianKDE

PROVENANCES = ("uniform", "rf_importance", "manual")


@dataclass(frozen=True)
class WeightVector:
    """Non-negative per-feature weights normalized to sum to 1."""

    weights: tuple[float, ...]
    provenance: str = "manual"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (N_FEATURES,):
            raise ValueError(f"expected {N_FEATURES} weights, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and non-negative")
        total = w.sum()
        if not total > 0:
            raise ValueError("weights must not all be zero")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "weights", tuple((w / total).tolist()))

    @classmethod
    def uniform(cls) -> "WeightVector":
        return cls((1.0,) * N_FEATURES, "uniform")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, float], provenance: str = "manual") -> "WeightVector":
        """Build from ``{feature_name: weight}``; unnamed features get weight 0."""
        w = np.zeros(N_FEATURES)
        for name, value in mapping.items():
            w[feature_index(name)] = float(value)
        return cls(tuple(w), provenance)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(FEATURE_NAMES, self.weights))

    def ranked(self) -> list[tuple[str, float]]:
        return sorted(self.as_dict().items(), key=lambda kv: -kv[1])

    def to_json(self) -> str:
        return json.dumps({"version": 1, "provenance": self.provenance,
                           "weights": self.as_dict()}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "WeightVector":
        data = json.loads(text)
        if "weights" in data and isinstance(data["weights"], dict):
            return cls.from_mapping(data["weights"], data.get("provenance", "manual"))
        return cls.from_mapping(data)


def _resolve_weights(weights, d: int) -> tuple[np.ndarray, str]:
    if weights is None or (isinstance(weights, str) and weights == "uniform"):
        return np.full(d, 1.0 / d), "uniform"
    if isinstance(weights, WeightVector):
        return weights.as_array(), weights.provenance
    if isinstance(weights, Mapping):
        wv = WeightVector.from_mapping(weights)
        return wv.as_array(), wv.provenance
    w = np.asarray(weights, dtype=float).reshape(-1)
    if not np.all(np.isfinite(w)) or np.any(w < 0) or not w.sum() > 0:
        raise ValueError("weights must be finite, non-negative and not all zero")
    return w / w.sum(), "manual"


def _weighted_rows(cols: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # Not a BLAS matvec: its blocking rounds equal rows differently, which breaks tie order.
    return (cols * weights).sum(axis=1)


class FeatureEnsemble(OutlierMixin, BaseEstimator):
    """Weighted ensemble of one-feature anomaly models.

    Parameters
    ----------
    base : {"kde", "iforest"}
    weights : "uniform", WeightVector, mapping of feature name to weight, or array
    bandwidth : bandwidth passed to each KDE base
    n_estimators, max_samples, random_state : Isolation Forest base parameters;
        base ``j`` is seeded with ``random_state + j``.

    ``score_samples`` is ``sum_j w_j * S_j(x_j)`` where ``S_j`` is the
    base's log-density (KDE) or normalized path length (Isolation Forest);
    smaller is more anomalous. ``ccdf`` is the weighted sum of the KDE bases'
    upper-tail probabilities, a [0, 1] score comparable across ports.
    """

    def __init__(self, base="kde", weights="uniform", bandwidth="auto", n_estimators=100,
                 max_samples="auto", random_state=0):
        self.base = base
        self.weights = weights
        self.bandwidth = bandwidth
        self.n_estimators = n_estimators
        self.max_samples = max_samples
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X.values if isinstance(X, FeatureSet) else X, dtype=np.float64)
        if self.base not in ("kde", "iforest"):
            raise ValueError(f"unknown base model {self.base!r}")
        weights, provenance = _resolve_weights(self.weights, X.shape[1])
        if X.shape[1] != len(weights):
            raise ValueError(f"expected {len(weights)} feature columns, got {X.shape[1]}")
        bases = []
        for j in range(X.shape[1]):
            if self.base == "kde":
                model = GaussianKDE(bandwidth=self.bandwidth)
            else:
                model = IsolationForest(n_estimators=self.n_estimators,
                                        max_samples=self.max_samples,
                                        random_state=int(self.random_state) + j)
            bases.append(model.fit(X[:, j:j + 1]))
        self.bases_ = bases
        self.weights_ = weights
        self.weight_provenance_ = provenance
        self.n_features_in_ = X.shape[1]
        return self

    def _check_X(self, X) -> np.ndarray:
        check_is_fitted(self, "bases_")
        X = np.asarray(X.values if isinstance(X, FeatureSet) else X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"ensemble has {self.n_features_in_} features, input has {X.shape[1]}")
        return X

    def base_scores(self, X) -> np.ndarray:
        """Matrix of per-feature base scores, shape ``(n_samples, n_features)``."""
        X = self._check_X(X)
        return np.column_stack([m.score_samples(X[:, j:j + 1]) for j, m in enumerate(self.bases_)])

    def score_samples(self, X) -> np.ndarray:
        return _weighted_rows(self.base_scores(X), self.weights_)

    def base_ccdfs(self, X) -> np.ndarray:
        if self.base != "kde":
            raise ValueError("CCDF normalization applies to KDE bases only; "
                             "rank Isolation Forest ensembles by score_samples")
        X = self._check_X(X)
        return np.column_stack([m.ccdf(X[:, j]) for j, m in enumerate(self.bases_)])

    def ccdf(self, X) -> np.ndarray:
        return np.clip(_weighted_rows(self.base_ccdfs(X), self.weights_), 0.0, 1.0)

    def to_dict(self) -> dict:
        check_is_fitted(self, "bases_")
        return {
            "kind": "feature_ensemble",
            "version": 1,
            "base": self.base,
            "params": {"bandwidth": self.bandwidth, "n_estimators": self.n_estimators,
                       "max_samples": self.max_samples, "random_state": int(self.random_state)},
            "weights": dict(zip(FEATURE_NAMES, self.weights_.tolist()))
            if self.n_features_in_ == N_FEATURES else self.weights_.tolist(),
            "provenance": self.weight_provenance_,
            "bases": [m.to_dict() for m in self.bases_],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureEnsemble":
        if data.get("kind") != "feature_ensemble" or data.get("version") != 1:
            raise ValueError("not a version-1 feature_ensemble model")
        model = cls(base=data["base"], **data["params"])
        w = data["weights"]
        model.weights_ = (np.array([w[n] for n in FEATURE_NAMES]) if isinstance(w, dict)
                          else np.asarray(w, dtype=float))
        model.weights = model.weights_
        model.weight_provenance_ = data["provenance"]
        loader = GaussianKDE if data["base"] == "kde" else IsolationForest
        model.bases_ = [loader.from_dict(b) for b in data["bases"]]
        model.n_features_in_ = len(model.bases_)
        return model


def fit_ensemble(train, base_kind: str = "kde", weights=None, **params) -> FeatureEnsemble:
    """Train one base model per (standardized) feature column."""
    X = np.asarray(train.values if isinstance(train, FeatureSet) else train, dtype=float)
    if not np.all(np.isfinite(X)):
        bad = np.nonzero(~np.all(np.isfinite(X), axis=0))[0]
        raise ValueError(f"non-finite values in feature columns {bad.tolist()}")
    return FeatureEnsemble(base=base_kind, weights=weights, **params).fit(X)


def ensemble_score(model: FeatureEnsemble, x):
    scores = model.score_samples(x)
    return float(scores[0]) if np.ndim(x) == 1 else scores


def ensemble_ccdf(model: FeatureEnsemble, x):
    values = model.ccdf(x)
    return float(values[0]) if np.ndim(x) == 1 else values


# --------------------------------------------------------------------------
# Supervised weight derivation


def fit_rf_classifier(X, y, n_trees: int = 100, seed: int = 0) -> RandomForestClassifier:
    """Bootstrap Random Forest with Gini splits over sqrt(d) candidate features."""
    if isinstance(X, FeatureSet):
        X, y = X.values, X.malicious if y is None else y
    y = np.asarray(y).astype(int)
    if len(np.unique(y)) < 2:
        raise ValueError("weight training needs both benign and malicious samples")
    rf = RandomForestClassifier(n_estimators=n_trees, criterion="gini", max_features="sqrt",
                                bootstrap=True, min_samples_leaf=1, oob_score=True,
                                random_state=seed)
    return rf.fit(X, y)


def rf_feature_importance(rf: RandomForestClassifier) -> WeightVector:
    """Mean decrease in Gini impurity per feature, normalized to sum to 1."""
    check_is_fitted(rf, "estimators_")
    return WeightVector(tuple(rf.feature_importances_.tolist()), "rf_importance")
