"""Gaussian kernel density estimation with a shared scalar bandwidth."""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.special import ndtr
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_array, check_is_fitted

FALLBACK_BANDWIDTH = 1e-3
LOG_2PI = math.log(2.0 * math.pi)

# Kernel tails beyond this many bandwidths contribute less than 1e-300.
_TAIL = 38.0


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    # Finite inputs only; shifting by the row max keeps exp() in range.
    top = a.max(axis=1)
    return np.log(np.exp(a - top[:, None]).sum(axis=1)) + top


def silverman_bandwidth(samples) -> float:
    """Silverman's rule of thumb ``0.9 * min(sd, IQR/1.34) * n**(-1/5)``.

    The spread is computed over all coordinates pooled together. When the
    interquartile range is zero but the standard deviation is not, the
    standard deviation alone is used. Returns 0 for all-identical samples.
    """
    X = np.asarray(samples, dtype=float)
    X = X.reshape(len(X), -1)
    n = len(X)
    pooled = X.ravel()
    if pooled.size < 2:
        return 0.0
    sd = pooled.std(ddof=1)
    q75, q25 = np.percentile(pooled, [75, 25])
    iqr = q75 - q25
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return float(0.9 * spread * n ** (-0.2))


class GaussianKDE(OutlierMixin, BaseEstimator):
    """Product-Gaussian kernel density estimate.

    ``score_samples`` returns the log-density, so lower means more anomalous.
    After :meth:`calibrate`, :meth:`predict` flags points whose log-density
    falls below the calibrated threshold (-1 outlier, 1 inlier).

    Parameters
    ----------
    bandwidth : float or "auto"
        Kernel standard deviation. "auto" applies :func:`silverman_bandwidth`.
    """

    def __init__(self, bandwidth="auto"):
        self.bandwidth = bandwidth

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_2d=False)
        if X.ndim == 1:
            X = X[:, None]
        if len(X) < 1:
            raise ValueError("KDE needs at least one sample")
        if self.bandwidth == "auto":
            h = silverman_bandwidth(X)
            if not h > 0:
                warnings.warn("automatic bandwidth is zero (identical samples); "
                              f"using {FALLBACK_BANDWIDTH}", RuntimeWarning, stacklevel=2)
                h = FALLBACK_BANDWIDTH
        else:
            h = float(self.bandwidth)
            if not h > 0 or not math.isfinite(h):
                raise ValueError(f"bandwidth must be a positive number, got {self.bandwidth!r}")
        self.points_ = X
        self.bandwidth_ = h
        self.n_features_in_ = X.shape[1]
        self.threshold_ = None
        if X.shape[1] == 1:
            # Duplicate-heavy count features collapse to weighted support points.
            self._support, self._counts = np.unique(X[:, 0], return_counts=True)
        return self

    def _check_X(self, X) -> np.ndarray:
        check_is_fitted(self, "points_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim <= 1 and self.n_features_in_ == 1:
            X = X.reshape(-1, 1)
        elif X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"model has {self.n_features_in_} dimensions, input has {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("input contains non-finite values")
        return X

    def score_samples(self, X) -> np.ndarray:
        """Log-density at each row of ``X``."""
        X = self._check_X(X)
        h = self.bandwidth_
        n, d = self.points_.shape
        norm = math.log(n) + d * math.log(h) + 0.5 * d * LOG_2PI
        if d == 1:
            return self._score_1d(X[:, 0]) - norm
        out = np.empty(len(X))
        chunk = max(1, int(4e6 // max(1, n * d)))
        for lo in range(0, len(X), chunk):
            diff = X[lo:lo + chunk, None, :] - self.points_[None, :, :]
            sq = np.einsum("ijk,ijk->ij", diff, diff)
            out[lo:lo + chunk] = _logsumexp_rows(-0.5 * sq / (h * h))
        return out - norm

    def _score_1d(self, x: np.ndarray) -> np.ndarray:
        h = self.bandwidth_
        logw = np.log(self._counts)
        out = np.empty(len(x))
        chunk = max(1, int(2e6 // len(self._support)))
        for lo in range(0, len(x), chunk):
            z = (x[lo:lo + chunk, None] - self._support[None, :]) / h
            out[lo:lo + chunk] = _logsumexp_rows(-0.5 * z * z + logw)
        return out

    def density(self, X) -> np.ndarray:
        return np.exp(self.score_samples(X))

    def ccdf(self, x) -> np.ndarray:
        """Upper-tail probability ``P(X > x)`` of a one-dimensional model."""
        check_is_fitted(self, "points_")
        if self.n_features_in_ != 1:
            raise ValueError("the CCDF is only defined for one-dimensional models")
        x = np.asarray(x, dtype=np.float64)
        scalar = x.ndim == 0
        x = x.reshape(-1)
        support, counts = self._support, self._counts
        n = counts.sum()
        h = self.bandwidth_
        cum = np.concatenate([[0], np.cumsum(counts)])
        # Points far below x contribute 0, far above contribute exactly their count.
        lo = np.searchsorted(support, x - _TAIL * h, side="left")
        hi = np.searchsorted(support, x + _TAIL * h, side="right")
        out = (n - cum[hi]).astype(float)
        span = hi - lo
        width = int(span.max()) if len(span) else 0
        if width:
            offsets = np.arange(width)
            chunk = max(1, int(2e6 // width))
            for a in range(0, len(x), chunk):
                b = min(a + chunk, len(x))
                idx = lo[a:b, None] + offsets[None, :]
                live = offsets[None, :] < span[a:b, None]
                idx = np.where(live, idx, 0)
                z = (x[a:b, None] - support[idx]) / h
                out[a:b] += np.where(live, ndtr(-z) * counts[idx], 0.0).sum(axis=1)
        out /= n
        return out[0] if scalar else out

    def calibrate(self, X, target_fpr: float = 0.01):
        """Set ``threshold_`` (log-density) so a ``target_fpr`` share of ``X`` falls below it."""
        self.threshold_ = calibrate_threshold(self, X, target_fpr)
        return self

    def decision_function(self, X) -> np.ndarray:
        if self.threshold_ is None:
            raise ValueError("model has no threshold; call calibrate() first")
        return self.score_samples(X) - self.threshold_

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_function(X) < 0, -1, 1)

    def to_dict(self) -> dict:
        check_is_fitted(self, "points_")
        return {
            "kind": "gaussian_kde",
            "version": 1,
            "dim": int(self.n_features_in_),
            "bandwidth": self.bandwidth_,
            "threshold": self.threshold_,
            "points": self.points_.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GaussianKDE":
        if data.get("kind") != "gaussian_kde" or data.get("version") != 1:
            raise ValueError("not a version-1 gaussian_kde model")
        model = cls(bandwidth=data["bandwidth"]).fit(
            np.asarray(data["points"], dtype=float).reshape(-1, data["dim"]))
        model.threshold_ = data["threshold"]
        return model


def fit_kde(samples, bandwidth="auto") -> GaussianKDE:
    samples = np.asarray(samples, dtype=float)
    if not np.all(np.isfinite(samples)):
        raise ValueError("KDE samples must be finite")
    return GaussianKDE(bandwidth=bandwidth).fit(samples)


def density(model: GaussianKDE, x) -> float | np.ndarray:
    """Density at a single point (scalar) or at each row of a matrix."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 0 or (x.ndim == 1 and model.n_features_in_ > 1)
    values = model.density(x)
    return float(values[0]) if single else values


def ccdf_1d(model: GaussianKDE, x):
    return model.ccdf(x)


def calibrate_threshold(model: GaussianKDE, train, target_fpr: float) -> float:
    """Log-density threshold at the empirical ``target_fpr`` quantile of ``train``.

    Exactly ``floor(target_fpr * n)`` training points (absent ties) score
    strictly below the returned value.
    """
    if not 0 < target_fpr < 1:
        raise ValueError(f"target_fpr must lie in (0, 1), got {target_fpr}")
    train = np.asarray(train, dtype=float)
    if train.size == 0:
        raise ValueError("cannot calibrate on an empty training set")
    scores = np.sort(model.score_samples(train))
    k = min(int(math.floor(target_fpr * len(scores))), len(scores) - 1)
    return float(scores[k])
