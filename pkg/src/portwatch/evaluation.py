"""Detection metrics and the connection-count threshold baseline."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .features import FeatureSet
from .ranking import Alert


@dataclass(frozen=True)
class LabeledScores:
    """Window scores (smaller = more suspicious) with their truth labels."""

    port: np.ndarray
    window_index: np.ndarray
    score: np.ndarray
    malicious: np.ndarray

    def __post_init__(self):
        score = np.asarray(self.score, dtype=float)
        if not np.all(np.isfinite(score)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "score", score)
        object.__setattr__(self, "malicious", np.asarray(self.malicious, dtype=bool))
        object.__setattr__(self, "port", np.asarray(self.port, dtype=np.int64))
        object.__setattr__(self, "window_index", np.asarray(self.window_index, dtype=np.int64))

    @classmethod
    def from_features(cls, features: FeatureSet, score) -> "LabeledScores":
        return cls(features.port, features.window_index, score, features.malicious)

    def __len__(self) -> int:
        return len(self.score)


@dataclass(frozen=True)
class PrCurve:
    recall: np.ndarray
    precision: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))


def pr_curve(scores, malicious=None) -> PrCurve:
    """Precision/recall over every distinct threshold, flagging ``score <= threshold``.

    Tied scores form one operating point. The area is the step-wise average
    precision ``sum_n (R_n - R_{n-1}) * P_n``.
    """
    if isinstance(scores, LabeledScores):
        s, y = scores.score, scores.malicious
    else:
        s = np.asarray(scores, dtype=float)
        y = np.asarray(malicious, dtype=bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise ValueError("PR curve needs both malicious and benign windows")
    order = np.argsort(s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # last index of each run of equal scores
    ends = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp, fp = tp[ends], fp[ends]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    auc = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    return PrCurve(recall, precision, s[ends], min(max(auc, 0.0), 1.0))


def pr_auc(scores, malicious=None) -> float:
    return pr_curve(scores, malicious).auc


@dataclass(frozen=True)
class TopK:
    precision: float
    fpr: float
    fp_count: int


def topk_metrics(alerts: Sequence[Alert], truth: Mapping[tuple[int, int], bool], k: int) -> TopK:
    """Precision and false-positive rate among the first ``k`` alerts.

    ``truth`` maps ``(port, window_index)`` to the malicious flag for every
    window of the evaluated pool; its benign count is the FPR denominator.
    """
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if k > len(alerts):
        raise ValueError(f"k={k} exceeds the {len(alerts)} available alerts")
    n_benign = sum(1 for v in truth.values() if not v)
    tp = sum(bool(truth[(a.port, a.window_index)]) for a in alerts[:k])
    fp = k - tp
    return TopK(tp / k, fp / n_benign if n_benign else 0.0, fp)


def threshold_baseline(features: FeatureSet) -> LabeledScores:
    """Flag windows by connection volume: score is the negated connection count."""
    return LabeledScores.from_features(features, -features.column("conn_count"))
