"""Per-port, fixed-window traffic features.

Every window of connections on one port becomes a 35-value vector: traffic
counts, duration/bytes/packets statistics and per-state connection counts.
The ``new_external_ips`` feature needs a running history of external
addresses already seen on the port, kept in :class:`IpHistory`.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .zeek import (FAILED_CODES, STATES, ConnRecord, ConnTable, NetworkBoundary, as_table,
                   int_to_ip, internal_external, ip_to_int, ips_to_array)

FEATURE_SCHEMA_VERSION = 1

FEATURE_NAMES: tuple[str, ...] = (
    "distinct_external_ips", "distinct_internal_ips", "conn_count", "new_external_ips",
    "duration_var", "duration_max", "duration_mean", "duration_min",
    "orig_bytes_var", "orig_bytes_max", "orig_bytes_mean",
    "resp_bytes_var", "resp_bytes_max", "resp_bytes_mean", "zero_resp_bytes_count",
    "orig_pkts_var", "orig_pkts_max", "orig_pkts_mean",
    "resp_pkts_var", "resp_pkts_max", "resp_pkts_mean",
    *(f"{s.value}_count" for s in STATES),
    "failed_conn_count",
)
N_FEATURES = len(FEATURE_NAMES)
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}

# Shorter names used in published importance tables.
FEATURE_ALIASES = {
    "external_ips": "distinct_external_ips",
    "internal_ips": "distinct_internal_ips",
    "mean_duration": "duration_mean",
    "min_duration": "duration_min",
    "max_duration": "duration_max",
    "var_duration": "duration_var",
}


def feature_index(name: str) -> int:
    name = FEATURE_ALIASES.get(name, name)
    try:
        return FEATURE_INDEX[name]
    except KeyError:
        raise KeyError(f"unknown feature {name!r}") from None


@dataclass(frozen=True)
class FeatureVector:
    port: int
    window_index: int
    window_start: float
    values: tuple[float, ...]
    label: str = "benign"

    def __post_init__(self):
        if len(self.values) != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} feature values, got {len(self.values)}")

    def __getitem__(self, name: str) -> float:
        return self.values[feature_index(name)]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(FEATURE_NAMES, self.values))


class FeatureSet:
    """Columnar collection of feature vectors, possibly spanning several ports."""

    def __init__(self, port, window_index, window_start, values, malicious=None):
        values = np.asarray(values, dtype=np.float64).reshape(-1, N_FEATURES)
        n = len(values)
        self.port = np.broadcast_to(np.asarray(port, dtype=np.int32), (n,)).copy()
        self.window_index = np.asarray(window_index, dtype=np.int64).reshape(n)
        self.window_start = np.asarray(window_start, dtype=np.float64).reshape(n)
        self.values = values
        self.malicious = (np.zeros(n, dtype=bool) if malicious is None
                          else np.asarray(malicious, dtype=bool).reshape(n))

    @classmethod
    def from_vectors(cls, vectors: Iterable[FeatureVector]) -> "FeatureSet":
        vectors = list(vectors)
        return cls(
            port=[v.port for v in vectors], window_index=[v.window_index for v in vectors],
            window_start=[v.window_start for v in vectors],
            values=np.array([v.values for v in vectors]).reshape(-1, N_FEATURES),
            malicious=[v.label == "malicious" for v in vectors],
        )

    @classmethod
    def concat(cls, sets: Sequence["FeatureSet"]) -> "FeatureSet":
        sets = list(sets)
        if not sets:
            return cls([], [], [], np.empty((0, N_FEATURES)))
        return cls(np.concatenate([s.port for s in sets]),
                   np.concatenate([s.window_index for s in sets]),
                   np.concatenate([s.window_start for s in sets]),
                   np.concatenate([s.values for s in sets]),
                   np.concatenate([s.malicious for s in sets]))

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i: int) -> FeatureVector:
        return FeatureVector(int(self.port[i]), int(self.window_index[i]),
                             float(self.window_start[i]), tuple(self.values[i].tolist()),
                             "malicious" if self.malicious[i] else "benign")

    def __iter__(self) -> Iterator[FeatureVector]:
        for i in range(len(self)):
            yield self[i]

    def take(self, index) -> "FeatureSet":
        return FeatureSet(self.port[index], self.window_index[index], self.window_start[index],
                          self.values[index], self.malicious[index])

    def for_port(self, port: int) -> "FeatureSet":
        return self.take(self.port == port)

    @property
    def ports(self) -> list[int]:
        return sorted(set(self.port.tolist()))

    def column(self, name: str) -> np.ndarray:
        return self.values[:, feature_index(name)]

    def __repr__(self):
        return f"FeatureSet(n={len(self)}, ports={self.ports}, malicious={int(self.malicious.sum())})"


# --------------------------------------------------------------------------
# History of visited external addresses


class IpHistory:
    """Growing set of external addresses already contacted on one port."""

    def __init__(self, port: int | None = None, seen: Iterable[str | int] = ()):
        self.port = port
        self._seen = np.unique(ips_to_array(list(seen) if not isinstance(seen, np.ndarray) else seen))

    def __len__(self) -> int:
        return len(self._seen)

    def __contains__(self, ip: str | int) -> bool:
        value = ip_to_int(ip) if isinstance(ip, str) else int(ip)
        i = np.searchsorted(self._seen, value)
        return bool(i < len(self._seen) and self._seen[i] == value)

    def contains(self, ips: np.ndarray) -> np.ndarray:
        ips = np.asarray(ips, dtype=np.uint32)
        if not len(self._seen):
            return np.zeros(ips.shape, dtype=bool)
        i = np.minimum(np.searchsorted(self._seen, ips), len(self._seen) - 1)
        return self._seen[i] == ips

    def add(self, ips) -> None:
        ips = ips_to_array([ips] if isinstance(ips, (str, int)) else ips)
        if len(ips):
            self._seen = np.union1d(self._seen, ips).astype(np.uint32)

    def query_and_add(self, ip: str | int) -> bool:
        """Return True when ``ip`` is new, recording it either way."""
        new = ip not in self
        if new:
            self.add(ip)
        return new

    def addresses(self) -> np.ndarray:
        return self._seen.copy()

    def copy(self) -> "IpHistory":
        h = IpHistory(self.port)
        h._seen = self._seen.copy()
        return h

    @property
    def snapshot_id(self) -> str:
        return hashlib.sha256(self._seen.astype(">u4").tobytes()).hexdigest()[:16]

    def save(self, path) -> None:
        v = self._seen.astype(np.int64)
        with open(path, "w", encoding="utf-8") as fh:
            for a, b, c, d in zip((v >> 24 & 255).tolist(), (v >> 16 & 255).tolist(),
                                  (v >> 8 & 255).tolist(), (v & 255).tolist()):
                fh.write(f"{a}.{b}.{c}.{d}\n")

    @classmethod
    def load(cls, path, port: int | None = None) -> "IpHistory":
        with open(path, encoding="utf-8") as fh:
            ips = [ip_to_int(line.strip()) for line in fh if line.strip()]
        return cls(port, np.array(ips, dtype=np.uint32))


# --------------------------------------------------------------------------
# Window aggregation


def _segment_stats(values: np.ndarray, starts: np.ndarray, counts: np.ndarray, n_windows: int,
                   occupied: np.ndarray, widx: np.ndarray, with_min: bool = False):
    """Population variance, max, mean (and min) per window; zero for empty windows."""
    var = np.zeros(n_windows)
    vmax = np.zeros(n_windows)
    mean = np.zeros(n_windows)
    vmin = np.zeros(n_windows)
    if len(values):
        sums = np.add.reduceat(values, starts)
        m = sums / counts
        dev = values - np.repeat(m, counts)
        mean[occupied] = m
        var[occupied] = np.add.reduceat(dev * dev, starts) / counts
        vmax[occupied] = np.maximum.reduceat(values, starts)
        if with_min:
            vmin[occupied] = np.minimum.reduceat(values, starts)
    return (var, vmax, mean, vmin) if with_min else (var, vmax, mean)


def extract_features(records: ConnTable | Iterable[ConnRecord], window_len: float = 60.0,
                     history: IpHistory | None = None, port: int | None = None,
                     start: float | None = None, n_windows: int | None = None,
                     boundary: NetworkBoundary | None = None) -> FeatureSet:
    """Aggregate one port's time-ordered records into per-window feature vectors.

    Windows are ``[start + k*window_len, start + (k+1)*window_len)``. By default
    ``start`` is the first timestamp floored to a multiple of ``window_len`` and
    the windows run up to the last record; pass ``start``/``n_windows`` to get
    a fixed grid (empty windows come out as all zeros). ``history`` is updated
    in place. Unset durations, byte and packet counts count as zero.
    """
    if not window_len > 0:
        raise ValueError(f"window_len must be positive, got {window_len}")
    table = as_table(records)
    ts = table.ts
    if len(ts) > 1 and np.any(np.diff(ts) < 0):
        raise ValueError("records must be sorted by timestamp")
    if history is None:
        history = IpHistory(port)
    if port is None:
        ports = np.unique(table.dest_p)
        if len(ports) > 1:
            raise ValueError(f"records span several ports {ports.tolist()}; filter first")
        port = int(ports[0]) if len(ports) else (history.port if history.port is not None else -1)
    if start is None:
        if not len(ts):
            return FeatureSet([], [], [], np.empty((0, N_FEATURES)))
        start = np.floor(ts[0] / window_len) * window_len
    widx = np.floor((ts - start) / window_len).astype(np.int64)
    if len(widx) and widx[0] < 0:
        raise ValueError("records precede the requested window start")
    if n_windows is None:
        n_windows = int(widx[-1]) + 1 if len(widx) else 0
    elif len(widx) and widx[-1] >= n_windows:
        raise ValueError("records fall beyond the requested number of windows")

    X = np.zeros((n_windows, N_FEATURES))
    counts_all = np.bincount(widx, minlength=n_windows)
    occupied = counts_all > 0
    counts = counts_all[occupied]
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    col = FEATURE_INDEX

    internal, external = internal_external(table, boundary)
    X[:, col["conn_count"]] = counts_all
    for name, ips in (("distinct_external_ips", external), ("distinct_internal_ips", internal)):
        keys = np.unique((widx << 32) | ips.astype(np.int64))
        X[:, col[name]] = np.bincount(keys >> 32, minlength=n_windows)

    uniq, first = np.unique(external, return_index=True)
    fresh = ~history.contains(uniq)
    X[:, col["new_external_ips"]] = np.bincount(widx[first[fresh]], minlength=n_windows)
    history.add(uniq[fresh])

    def filled(a):
        return np.nan_to_num(a, nan=0.0)

    (X[:, col["duration_var"]], X[:, col["duration_max"]], X[:, col["duration_mean"]],
     X[:, col["duration_min"]]) = _segment_stats(filled(table.duration), starts, counts,
                                                 n_windows, occupied, widx, with_min=True)
    for field_name in ("orig_bytes", "resp_bytes", "orig_pkts", "resp_pkts"):
        stats = _segment_stats(filled(getattr(table, field_name)), starts, counts, n_windows,
                               occupied, widx)
        for suffix, values in zip(("var", "max", "mean"), stats):
            X[:, col[f"{field_name}_{suffix}"]] = values

    zero_resp = ~(table.resp_bytes > 0)
    X[:, col["zero_resp_bytes_count"]] = np.bincount(widx[zero_resp], minlength=n_windows)
    state_counts = np.bincount(widx * len(STATES) + table.conn_state,
                               minlength=n_windows * len(STATES)).reshape(n_windows, len(STATES))
    first_state = col[f"{STATES[0].value}_count"]
    X[:, first_state:first_state + len(STATES)] = state_counts
    X[:, col["failed_conn_count"]] = state_counts[:, FAILED_CODES].sum(axis=1)

    malicious = np.bincount(widx[table.malicious], minlength=n_windows) > 0
    window_index = np.arange(n_windows)
    return FeatureSet(port, window_index, start + window_index * window_len, X, malicious)


class WindowStream:
    """Incremental :func:`extract_features` over time-ordered record batches.

    :meth:`feed` returns the windows a batch proves complete; :meth:`close`
    returns the rest. Only the current window's records are held between
    batches, and the concatenated output equals one batch extraction.
    """

    def __init__(self, window_len: float = 60.0, history: IpHistory | None = None,
                 port: int | None = None, start: float | None = None,
                 n_windows: int | None = None, boundary: NetworkBoundary | None = None):
        if not window_len > 0:
            raise ValueError(f"window_len must be positive, got {window_len}")
        self.window_len = window_len
        self.history = history if history is not None else IpHistory(port)
        self.port = port
        self.start = start
        self.n_windows = n_windows
        self.boundary = boundary
        self._pending = ConnTable.empty()
        self._done = 0

    def _emit(self, table: ConnTable, upto: int) -> FeatureSet:
        fs = extract_features(table, self.window_len, self.history, self.port,
                              self.start + self._done * self.window_len, upto - self._done,
                              self.boundary)
        fs.window_index += self._done
        self._done = upto
        return fs

    def _empty(self) -> FeatureSet:
        return FeatureSet([], [], [], np.empty((0, N_FEATURES)))

    def feed(self, chunk: ConnTable) -> FeatureSet:
        if not len(chunk):
            return self._empty()
        pending = self._pending
        if len(pending) and chunk.ts[0] < pending.ts[-1]:
            raise ValueError("records must be sorted by timestamp")
        if self.start is None:
            self.start = float(np.floor(chunk.ts[0] / self.window_len) * self.window_len)
        if self.port is None:
            ports = np.unique(chunk.dest_p)
            if len(ports) > 1:
                raise ValueError(f"records span several ports {ports.tolist()}; filter first")
            self.port = int(ports[0])
        pending = ConnTable.concat([pending, chunk]) if len(pending) else chunk
        last = int(np.floor((pending.ts[-1] - self.start) / self.window_len))
        if self.n_windows is not None and last >= self.n_windows:
            raise ValueError("records fall beyond the requested number of windows")
        out = self._empty()
        if last > self._done:
            cut = int(np.searchsorted(pending.ts, self.start + last * self.window_len, "left"))
            out = self._emit(pending.take(slice(0, cut)), last)
            pending = pending.take(slice(cut, None))
        self._pending = pending
        return out

    def close(self) -> FeatureSet:
        if self.start is None:
            if self.n_windows:
                raise ValueError("a start time is needed to emit windows for an empty stream")
            return self._empty()
        if self.n_windows is not None:
            end = self.n_windows
        elif len(self._pending):
            end = int(np.floor((self._pending.ts[-1] - self.start) / self.window_len)) + 1
        else:
            end = self._done
        out = self._emit(self._pending, end) if end > self._done else self._empty()
        self._pending = ConnTable.empty()
        return out


def extract_features_stream(chunks: Iterable[ConnTable], window_len: float = 60.0,
                            history: IpHistory | None = None, port: int | None = None,
                            start: float | None = None, n_windows: int | None = None,
                            boundary: NetworkBoundary | None = None) -> Iterator[FeatureSet]:
    """Generator form of :class:`WindowStream`."""
    stream = WindowStream(window_len, history, port, start, n_windows, boundary)
    for chunk in chunks:
        fs = stream.feed(chunk)
        if len(fs):
            yield fs
    fs = stream.close()
    if len(fs):
        yield fs


# --------------------------------------------------------------------------
# Standardization


class Standardizer(TransformerMixin, BaseEstimator):
    """Per-feature centering and scaling by the population standard deviation.

    Features that are constant in the training data keep a scale of 1, so
    they map to 0 for the training value.
    """

    def fit(self, X, y=None):
        X = _as_matrix(X)
        if len(X) < 2:
            raise ValueError("a standardizer needs at least 2 training vectors")
        self.mean_ = X.mean(axis=0)
        self.stddev_ = X.std(axis=0)
        self.scale_ = np.where(self.stddev_ > 0, self.stddev_, 1.0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "scale_")
        X = _as_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return (X - self.mean_) / self.scale_

    def inverse_transform(self, Z):
        check_is_fitted(self, "scale_")
        return np.asarray(Z) * self.scale_ + self.mean_

    def to_dict(self) -> dict:
        return {"mean": self.mean_.tolist(), "stddev": self.stddev_.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Standardizer":
        s = cls()
        s.mean_ = np.asarray(data["mean"], dtype=float)
        s.stddev_ = np.asarray(data["stddev"], dtype=float)
        s.scale_ = np.where(s.stddev_ > 0, s.stddev_, 1.0)
        s.n_features_in_ = len(s.mean_)
        return s


def _as_matrix(X) -> np.ndarray:
    if isinstance(X, FeatureSet):
        return X.values
    if isinstance(X, FeatureVector):
        return np.asarray([X.values], dtype=float)
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], FeatureVector):
        return np.asarray([v.values for v in X], dtype=float)
    return check_array(X, dtype=np.float64, ensure_min_samples=0)


def fit_standardizer(train) -> Standardizer:
    return Standardizer().fit(train)


def standardize(vec, s: Standardizer) -> np.ndarray:
    """Standardize one vector (1-D result) or a batch (2-D result)."""
    Z = s.transform(vec)
    if isinstance(vec, FeatureVector) or np.ndim(vec) == 1:
        return Z[0]
    return Z


# --------------------------------------------------------------------------
# Destination randomness


def octet_entropy(ips) -> float:
    """Shannon entropy in bits of the pooled octets of a multiset of IPv4 addresses."""
    arr = ips_to_array(ips)
    if not len(arr):
        raise ValueError("octet entropy of an empty address set is undefined")
    octets = arr.view(np.uint8) if arr.dtype == np.uint32 and arr.flags.c_contiguous \
        else arr.astype(np.uint32).view(np.uint8)
    p = np.bincount(octets, minlength=256) / octets.size
    p = p[p > 0]
    return float(max(0.0, -(p * np.log2(p)).sum()))


# --------------------------------------------------------------------------
# JSON-lines feature files


def feature_lines(features: FeatureSet) -> Iterator[str]:
    """One JSON line (with trailing newline) per window."""
    for i in range(len(features)):
        row = {
            "schema": FEATURE_SCHEMA_VERSION,
            "port": int(features.port[i]),
            "window_index": int(features.window_index[i]),
            "window_start": float(features.window_start[i]),
            "label": "malicious" if features.malicious[i] else "benign",
            "features": dict(zip(FEATURE_NAMES, features.values[i].tolist())),
        }
        yield json.dumps(row) + "\n"


def write_features(path, features: FeatureSet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(feature_lines(features))


def _feature_chunk(rows) -> FeatureSet:
    ports, widx, wstart, vals, mal = zip(*rows)
    return FeatureSet(ports, widx, wstart, np.array(vals).reshape(-1, N_FEATURES), mal)


def iter_features(path, chunk_size: int = 10_000) -> Iterator[FeatureSet]:
    """Read a feature file in batches of at most ``chunk_size`` windows."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: not JSON ({exc.msg})") from None
            if row.get("schema") != FEATURE_SCHEMA_VERSION:
                raise ValueError(f"{path}:{line_no}: unsupported feature schema {row.get('schema')!r}")
            feats = row["features"]
            missing = set(FEATURE_NAMES) - feats.keys()
            if missing:
                raise ValueError(f"{path}:{line_no}: missing features {sorted(missing)}")
            rows.append((row["port"], row["window_index"], row["window_start"],
                         [feats[n] for n in FEATURE_NAMES], row.get("label") == "malicious"))
            if len(rows) == chunk_size:
                yield _feature_chunk(rows)
                rows = []
    if rows:
        yield _feature_chunk(rows)


def read_features(path) -> FeatureSet:
    return FeatureSet.concat(list(iter_features(path)))


__all__ = [
    "FEATURE_NAMES", "N_FEATURES", "FeatureVector", "FeatureSet", "IpHistory", "Standardizer",
    "extract_features", "extract_features_stream", "WindowStream", "fit_standardizer", "standardize", "octet_entropy", "feature_index",
    "write_features", "read_features", "iter_features", "int_to_ip",
]
