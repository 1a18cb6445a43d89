"""Per-port profile models: standardizer + detector, with JSON persistence."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .ensemble import FeatureEnsemble, WeightVector
from .features import FeatureSet, Standardizer
from .iforest import IsolationForest
from .kde import GaussianKDE

MODEL_SCHEMA_VERSION = 1
MODEL_KINDS = ("kde-multi", "iforest", "ensemble-kde", "ensemble-iforest")

# Which score each kind is ranked by; only "ccdf" and "path" scores are
# comparable across ports.
SCORE_FAMILY = {
    "kde-multi": "log_density",
    "iforest": "path",
    "ensemble-kde": "ccdf",
    "ensemble-iforest": "path",
}


@dataclass
class ProfileModel:
    kind: str
    port: int
    standardizer: Standardizer
    estimator: GaussianKDE | IsolationForest | FeatureEnsemble

    @property
    def score_family(self) -> str:
        return SCORE_FAMILY[self.kind]

    def transform(self, features) -> np.ndarray:
        X = features.values if isinstance(features, FeatureSet) else np.asarray(features, float)
        return self.standardizer.transform(X)

    def suspicion(self, features) -> np.ndarray:
        """Raw model score (log-density, path length, or weighted log-density)."""
        return self.estimator.score_samples(self.transform(features))

    def ranking_score(self, features) -> np.ndarray:
        """The score windows are ranked by; smaller is more suspicious."""
        Z = self.transform(features)
        if self.kind == "ensemble-kde":
            return self.estimator.ccdf(Z)
        return self.estimator.score_samples(Z)

    def to_dict(self) -> dict:
        return {
            "schema": MODEL_SCHEMA_VERSION,
            "kind": self.kind,
            "port": self.port,
            "standardizer": self.standardizer.to_dict(),
            "estimator": self.estimator.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProfileModel":
        if data.get("schema") != MODEL_SCHEMA_VERSION:
            raise ValueError(f"unsupported model schema {data.get('schema')!r}")
        kind = data["kind"]
        loader = {"kde-multi": GaussianKDE, "iforest": IsolationForest,
                  "ensemble-kde": FeatureEnsemble, "ensemble-iforest": FeatureEnsemble}[kind]
        return cls(kind, int(data["port"]), Standardizer.from_dict(data["standardizer"]),
                   loader.from_dict(data["estimator"]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "ProfileModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def fit_profile(kind: str, train: FeatureSet, port: int | None = None, weights=None,
                bandwidth="auto", n_estimators: int = 100, max_samples="auto", seed: int = 0,
                target_fpr: float | None = None) -> ProfileModel:
    """Standardize ``train`` and fit the detector named by ``kind``."""
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")
    if port is None:
        ports = train.ports
        if len(ports) != 1:
            raise ValueError(f"training features span ports {ports}; pass one port")
        port = ports[0]
    standardizer = Standardizer().fit(train.values)
    Z = standardizer.transform(train.values)
    if kind == "kde-multi":
        est = GaussianKDE(bandwidth=bandwidth).fit(Z)
        if target_fpr is not None:
            est.calibrate(Z, target_fpr)
    elif kind == "iforest":
        est = IsolationForest(n_estimators=n_estimators, max_samples=max_samples,
                              random_state=seed).fit(Z)
    else:
        if weights is None:
            weights = WeightVector.uniform()
        est = FeatureEnsemble(base="kde" if kind == "ensemble-kde" else "iforest",
                              weights=weights, bandwidth=bandwidth, n_estimators=n_estimators,
                              max_samples=max_samples, random_state=seed).fit(Z)
    return ProfileModel(kind, int(port), standardizer, est)
