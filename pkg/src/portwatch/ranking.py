"""Per-port and cross-port alert ranking."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from .features import FEATURE_NAMES, FeatureSet
from .model import ProfileModel

TOP_FEATURES = 5


@dataclass(frozen=True)
class Alert:
    port: int
    window_index: int
    window_start: float
    normalized_score: float
    rank: int
    top_features: tuple[tuple[str, float], ...] = field(default=())
    label: str | None = None

    def to_json(self) -> str:
        d = asdict(self)
        d["top_features"] = [list(t) for t in self.top_features]
        return json.dumps(d)

    @classmethod
    def from_json(cls, line: str) -> "Alert":
        d = json.loads(line)
        d["top_features"] = tuple((name, value) for name, value in d.get("top_features", ()))
        return cls(**d)


def _explain(Z: np.ndarray, k: int) -> list[tuple[tuple[str, float], ...]]:
    order = np.argsort(-np.abs(Z), axis=1, kind="stable")[:, :k]
    return [tuple((FEATURE_NAMES[j], float(Z[i, j])) for j in row) for i, row in enumerate(order)]


def _sorted_alerts(port, widx, wstart, scores, Z, malicious, k) -> list[Alert]:
    order = np.lexsort((port, widx, wstart, scores))
    explain = _explain(Z[order], k) if len(order) else []
    return [
        Alert(int(port[i]), int(widx[i]), float(wstart[i]), float(scores[i]), r + 1, explain[r],
              None if malicious is None else ("malicious" if malicious[i] else "benign"))
        for r, i in enumerate(order)
    ]


def _score_port(model: ProfileModel, features: FeatureSet):
    if len(features) and np.any(features.port != model.port):
        raise ValueError(f"features for ports {features.ports} do not match model port {model.port}")
    Z = model.transform(features)
    scores = model.ranking_score(features)
    return scores, Z


def rank_port(model: ProfileModel, features: FeatureSet, top_features: int = TOP_FEATURES,
              with_labels: bool = True) -> list[Alert]:
    """All windows of one port, most suspicious first.

    Ties in score go to the earlier window. Ensembles of KDEs are ranked by
    their weighted CCDF, everything else by the model's own score.
    """
    if not len(features):
        return []
    scores, Z = _score_port(model, features)
    return _sorted_alerts(features.port, features.window_index, features.window_start, scores,
                          Z, features.malicious if with_labels else None, top_features)


def rank_global(per_port: Mapping[int, tuple[ProfileModel, FeatureSet]], top_k: int,
                top_features: int = TOP_FEATURES, with_labels: bool = True) -> list[Alert]:
    """Merge every port's windows into one list and return the ``top_k`` most suspicious.

    Only normalized scores are comparable across ports: KDE ensembles (CCDF)
    and Isolation Forest models (normalized path length). The two families
    cannot be mixed, and multi-feature KDE log-densities are refused.
    """
    if top_k <= 0:
        raise ValueError(f"top_k must be positive, got {top_k}")
    families = {model.score_family for model, _ in per_port.values()}
    if "log_density" in families:
        raise ValueError("multi-feature KDE densities are not comparable across ports; "
                         "use a KDE ensemble")
    if len(families) > 1:
        raise ValueError(f"cannot mix model families {sorted(families)} in one ranking")
    parts = []
    for port in sorted(per_port):
        model, feats = per_port[port]
        if not len(feats):
            continue
        scores, Z = _score_port(model, feats)
        parts.append((feats, scores, Z))
    if not parts:
        return []
    port = np.concatenate([p[0].port for p in parts])
    widx = np.concatenate([p[0].window_index for p in parts])
    wstart = np.concatenate([p[0].window_start for p in parts])
    mal = np.concatenate([p[0].malicious for p in parts]) if with_labels else None
    scores = np.concatenate([p[1] for p in parts])
    Z = np.concatenate([p[2] for p in parts])
    order = np.lexsort((port, widx, wstart, scores))[:top_k]
    alerts = _sorted_alerts(port[order], widx[order], wstart[order], scores[order], Z[order],
                            None if mal is None else mal[order], top_features)
    return alerts


def write_alerts(path, alerts) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a in alerts:
            fh.write(a.to_json() + "\n")


def read_alerts(path) -> list[Alert]:
    with open(path, encoding="utf-8") as fh:
        return [Alert.from_json(line) for line in fh if line.strip()]


def write_alerts_csv(path, alerts) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "port", "window_start", "score"])
        for a in alerts:
            w.writerow([a.rank, a.port, repr(a.window_start), repr(a.normalized_score)])
