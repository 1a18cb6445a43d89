"""Reading, writing and filtering Zeek ``conn.log`` records.

Records travel through the pipeline in a columnar :class:`ConnTable` (one
numpy array per field) so that a day of traffic never needs one Python
object per connection. :class:`ConnRecord` is the per-row value type used
at API edges and in tests.
"""
from __future__ import annotations

import enum
import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)

UNSET = "-"


class ConnState(str, enum.Enum):
    S0 = "S0"
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"
    SF = "SF"
    REJ = "REJ"
    RSTO = "RSTO"
    RSTR = "RSTR"
    RSTOS0 = "RSTOS0"
    RSTRH = "RSTRH"
    SH = "SH"
    SHR = "SHR"
    OTH = "OTH"


STATES: tuple[ConnState, ...] = tuple(ConnState)
STATE_CODE = {s.value: i for i, s in enumerate(STATES)}

# States with no completed handshake or an abnormal teardown.
FAILED_STATES = frozenset(STATES) - {ConnState.SF, ConnState.S1, ConnState.S2, ConnState.S3}
FAILED_CODES = np.array(sorted(STATE_CODE[s.value] for s in FAILED_STATES))

PROTOCOLS = ("tcp", "udp", "icmp")
PROTO_CODE = {p: i for i, p in enumerate(PROTOCOLS)}
LABELS = ("benign", "malicious")

OUTBOUND = 1
INBOUND = -1


class ConnLogFormatError(ValueError):
    """Fatal problem with a conn.log header."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class RecordError(ValueError):
    """A single data line could not be turned into a record."""


def ip_to_int(text: str) -> int:
    if ":" in text:
        raise RecordError(f"IPv6 address {text!r} is not supported")
    parts = text.split(".")
    if len(parts) != 4:
        raise RecordError(f"malformed IPv4 address {text!r}")
    value = 0
    for part in parts:
        if not part.isdigit() or len(part) > 3:
            raise RecordError(f"malformed IPv4 address {text!r}")
        octet = int(part)
        if octet > 255:
            raise RecordError(f"malformed IPv4 address {text!r}")
        value = (value << 8) | octet
    return value


def int_to_ip(value: int) -> str:
    value = int(value)
    return f"{value >> 24 & 255}.{value >> 16 & 255}.{value >> 8 & 255}.{value & 255}"


def ips_to_array(ips: Iterable[str | int]) -> np.ndarray:
    """Convert dotted quads (or already-numeric addresses) to a uint32 array."""
    if isinstance(ips, np.ndarray) and ips.dtype.kind in "ui":
        return ips.astype(np.uint32)
    return np.array([ip if isinstance(ip, (int, np.integer)) else ip_to_int(ip) for ip in ips],
                    dtype=np.uint32)


@dataclass(frozen=True)
class ConnRecord:
    """One connection-log entry. ``None`` marks an unset (``-``) field."""

    ts: float
    orig_h: str
    orig_p: int
    dest_h: str
    dest_p: int
    proto: str = "tcp"
    duration: float | None = None
    orig_bytes: int | None = None
    resp_bytes: int | None = None
    orig_pkts: int | None = None
    resp_pkts: int | None = None
    conn_state: ConnState = ConnState.OTH
    label: str = "benign"

    def __post_init__(self):
        if not self.ts > 0:
            raise RecordError(f"timestamp must be positive, got {self.ts}")
        for name in ("orig_p", "dest_p"):
            port = getattr(self, name)
            if not 0 <= port <= 65535:
                raise RecordError(f"{name} {port} outside 0-65535")
        for name in ("orig_bytes", "resp_bytes", "orig_pkts", "resp_pkts", "duration"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise RecordError(f"{name} must be non-negative, got {value}")
        if self.proto not in PROTO_CODE:
            raise RecordError(f"unknown protocol {self.proto!r}")
        if self.label not in LABELS:
            raise RecordError(f"unknown label {self.label!r}")
        if not isinstance(self.conn_state, ConnState):
            object.__setattr__(self, "conn_state", _parse_state(self.conn_state))
        ip_to_int(self.orig_h)
        ip_to_int(self.dest_h)

    @property
    def malicious(self) -> bool:
        return self.label == "malicious"


def _parse_state(token: str) -> ConnState:
    try:
        return ConnState(token)
    except ValueError:
        raise RecordError(f"unknown conn_state {token!r}") from None


def _nan_to_none(value: float, cast=int):
    return None if np.isnan(value) else cast(value)


class ConnTable:
    """Columnar batch of connection records.

    Optional numeric fields are float64 with NaN for unset. ``direction`` is
    filled by :func:`filter_port_outbound` (``OUTBOUND``/``INBOUND``) and is
    zero otherwise.
    """

    COLUMNS = ("ts", "orig_h", "orig_p", "dest_h", "dest_p", "proto", "duration",
               "orig_bytes", "resp_bytes", "orig_pkts", "resp_pkts", "conn_state",
               "malicious", "direction")
    DTYPES = dict(ts=np.float64, orig_h=np.uint32, orig_p=np.int32, dest_h=np.uint32,
                  dest_p=np.int32, proto=np.int8, duration=np.float64, orig_bytes=np.float64,
                  resp_bytes=np.float64, orig_pkts=np.float64, resp_pkts=np.float64,
                  conn_state=np.int8, malicious=np.bool_, direction=np.int8)

    def __init__(self, **columns):
        n = len(columns["ts"])
        for name in self.COLUMNS:
            if name in columns and columns[name] is not None:
                arr = np.asarray(columns[name], dtype=self.DTYPES[name])
            elif name == "proto":
                arr = np.zeros(n, dtype=np.int8)
            elif name in ("duration", "orig_bytes", "resp_bytes", "orig_pkts", "resp_pkts"):
                arr = np.full(n, np.nan)
            elif name == "conn_state":
                arr = np.full(n, STATE_CODE["OTH"], dtype=np.int8)
            else:
                arr = np.zeros(n, dtype=self.DTYPES[name])
            if arr.shape != (n,):
                raise ValueError(f"column {name} has shape {arr.shape}, expected ({n},)")
            setattr(self, name, arr)

    @classmethod
    def empty(cls) -> "ConnTable":
        return cls(ts=np.empty(0))

    @classmethod
    def from_records(cls, records: Iterable[ConnRecord]) -> "ConnTable":
        records = list(records)
        nan = float("nan")

        def opt(values):
            return [nan if v is None else v for v in values]

        return cls(
            ts=[r.ts for r in records],
            orig_h=[ip_to_int(r.orig_h) for r in records],
            orig_p=[r.orig_p for r in records],
            dest_h=[ip_to_int(r.dest_h) for r in records],
            dest_p=[r.dest_p for r in records],
            proto=[PROTO_CODE[r.proto] for r in records],
            duration=opt(r.duration for r in records),
            orig_bytes=opt(r.orig_bytes for r in records),
            resp_bytes=opt(r.resp_bytes for r in records),
            orig_pkts=opt(r.orig_pkts for r in records),
            resp_pkts=opt(r.resp_pkts for r in records),
            conn_state=[STATE_CODE[r.conn_state.value] for r in records],
            malicious=[r.malicious for r in records],
        )

    @classmethod
    def concat(cls, tables: Sequence["ConnTable"]) -> "ConnTable":
        tables = list(tables)
        if not tables:
            return cls.empty()
        return cls(**{name: np.concatenate([getattr(t, name) for t in tables])
                      for name in cls.COLUMNS})

    def __len__(self) -> int:
        return len(self.ts)

    def take(self, index) -> "ConnTable":
        return ConnTable(**{name: getattr(self, name)[index] for name in self.COLUMNS})

    def copy(self) -> "ConnTable":
        return ConnTable(**{name: getattr(self, name).copy() for name in self.COLUMNS})

    def sorted_by_time(self) -> "ConnTable":
        if len(self) < 2 or np.all(np.diff(self.ts) >= 0):
            return self
        return self.take(np.argsort(self.ts, kind="stable"))

    def record(self, i: int) -> ConnRecord:
        return ConnRecord(
            ts=float(self.ts[i]),
            orig_h=int_to_ip(self.orig_h[i]),
            orig_p=int(self.orig_p[i]),
            dest_h=int_to_ip(self.dest_h[i]),
            dest_p=int(self.dest_p[i]),
            proto=PROTOCOLS[self.proto[i]],
            duration=_nan_to_none(self.duration[i], float),
            orig_bytes=_nan_to_none(self.orig_bytes[i]),
            resp_bytes=_nan_to_none(self.resp_bytes[i]),
            orig_pkts=_nan_to_none(self.orig_pkts[i]),
            resp_pkts=_nan_to_none(self.resp_pkts[i]),
            conn_state=STATES[self.conn_state[i]],
            label=LABELS[int(self.malicious[i])],
        )

    def __iter__(self) -> Iterator[ConnRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def __repr__(self):
        return f"ConnTable(n={len(self)}, malicious={int(self.malicious.sum())})"


def as_table(records: ConnTable | Iterable[ConnRecord]) -> ConnTable:
    if isinstance(records, ConnTable):
        return records
    return ConnTable.from_records(records)


# --------------------------------------------------------------------------
# TSV parsing

FIELD_ALIASES = {
    "id.orig_h": "orig_h", "id.orig_p": "orig_p",
    "id.resp_h": "dest_h", "id.resp_p": "dest_p",
    "id.dest_h": "dest_h", "id.dest_p": "dest_p",
}
REQUIRED_FIELDS = ("ts", "orig_h", "orig_p", "dest_h", "dest_p", "proto", "duration",
                   "orig_bytes", "resp_bytes", "orig_pkts", "resp_pkts", "conn_state")


@dataclass
class ParseStats:
    """Counters filled in while a log is being parsed."""

    parsed: int = 0
    skipped: int = 0
    errors: list[tuple[int, str]] = field(default_factory=list)
    max_errors_kept: int = 100

    def record_error(self, line_no: int, message: str):
        self.skipped += 1
        if len(self.errors) < self.max_errors_kept:
            self.errors.append((line_no, message))

    def summary(self) -> str:
        return f"parsed {self.parsed} records, skipped {self.skipped} malformed lines"


def _decode_separator(token: str) -> str:
    if token.startswith("\\x"):
        return bytes.fromhex(token[2:]).decode()
    return token


def _count(token: str, name: str) -> float:
    if token == UNSET:
        return float("nan")
    if not token.isdigit():
        raise RecordError(f"{name} must be a non-negative integer, got {token!r}")
    return float(int(token))


def _port(token: str, name: str) -> int:
    if not token.isdigit() or int(token) > 65535:
        raise RecordError(f"{name} {token!r} is not a port number")
    return int(token)


def _parse_row(cols: list[str], index: dict[str, int]) -> tuple:
    g = lambda name: cols[index[name]]  # noqa: E731
    try:
        ts = float(g("ts"))
    except ValueError:
        raise RecordError(f"bad timestamp {g('ts')!r}") from None
    if not ts > 0 or ts != ts or ts == float("inf"):
        raise RecordError(f"timestamp must be positive and finite, got {g('ts')!r}")
    proto = g("proto")
    if proto not in PROTO_CODE:
        raise RecordError(f"unknown protocol {proto!r}")
    duration_tok = g("duration")
    if duration_tok == UNSET:
        duration = float("nan")
    else:
        try:
            duration = float(duration_tok)
        except ValueError:
            raise RecordError(f"bad duration {duration_tok!r}") from None
        if not duration >= 0:
            raise RecordError(f"duration must be non-negative, got {duration_tok!r}")
    state = g("conn_state")
    if state not in STATE_CODE:
        raise RecordError(f"unknown conn_state {state!r}")
    malicious = False
    if "label" in index:
        label = g("label")
        if label == UNSET or label == "benign":
            malicious = False
        elif label == "malicious":
            malicious = True
        else:
            raise RecordError(f"unknown label {label!r}")
    return (
        ts,
        ip_to_int(g("orig_h")),
        _port(g("orig_p"), "orig_p"),
        ip_to_int(g("dest_h")),
        _port(g("dest_p"), "dest_p"),
        PROTO_CODE[proto],
        duration,
        _count(g("orig_bytes"), "orig_bytes"),
        _count(g("resp_bytes"), "resp_bytes"),
        _count(g("orig_pkts"), "orig_pkts"),
        _count(g("resp_pkts"), "resp_pkts"),
        STATE_CODE[state],
        malicious,
    )


def _iter_rows(lines: Iterable[str], stats: ParseStats) -> Iterator[tuple]:
    sep = "\t"
    index: dict[str, int] | None = None
    n_fields = 0
    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith("#separator"):
                parts = line.split(None, 1)
                if len(parts) != 2:
                    raise ConnLogFormatError(line_no, "#separator line without a value")
                try:
                    sep = _decode_separator(parts[1].strip())
                except ValueError:
                    raise ConnLogFormatError(line_no, f"bad separator {parts[1]!r}") from None
            elif line.startswith("#fields"):
                names = line.split(sep)[1:]
                canonical = [FIELD_ALIASES.get(n, n) for n in names]
                if len(set(canonical)) != len(canonical):
                    raise ConnLogFormatError(line_no, "duplicate names in #fields")
                missing = [f for f in REQUIRED_FIELDS if f not in canonical]
                if missing:
                    raise ConnLogFormatError(line_no, f"#fields lacks {', '.join(missing)}")
                index = {name: i for i, name in enumerate(canonical)}
                n_fields = len(canonical)
            elif line.startswith("#types"):
                if index is None:
                    raise ConnLogFormatError(line_no, "#types before #fields")
                if len(line.split(sep)) - 1 != n_fields:
                    raise ConnLogFormatError(line_no, "#types and #fields differ in length")
            continue
        if index is None:
            raise ConnLogFormatError(line_no, "data line before #fields header")
        cols = line.split(sep)
        if len(cols) != n_fields:
            stats.record_error(line_no, f"expected {n_fields} columns, found {len(cols)}")
            continue
        try:
            row = _parse_row(cols, index)
        except RecordError as exc:
            stats.record_error(line_no, str(exc))
            continue
        stats.parsed += 1
        yield row


def _row_to_record(row: tuple) -> ConnRecord:
    (ts, oh, op, dh, dp, proto, dur, ob, rb, opk, rpk, state, mal) = row
    return ConnRecord(
        ts=ts, orig_h=int_to_ip(oh), orig_p=op, dest_h=int_to_ip(dh), dest_p=dp,
        proto=PROTOCOLS[proto], duration=None if dur != dur else dur,
        orig_bytes=_nan_to_none(ob), resp_bytes=_nan_to_none(rb),
        orig_pkts=_nan_to_none(opk), resp_pkts=_nan_to_none(rpk),
        conn_state=STATES[state], label=LABELS[int(mal)],
    )


def parse_conn_log(lines: Iterable[str], stats: ParseStats | None = None) -> Iterator[ConnRecord]:
    """Yield one :class:`ConnRecord` per valid data line, in input order.

    Columns are bound by the names in the ``#fields`` header, so extra
    columns are ignored and order does not matter. Malformed data lines are
    skipped and counted in ``stats``; a malformed header raises
    :class:`ConnLogFormatError`.
    """
    stats = stats if stats is not None else ParseStats()
    for row in _iter_rows(lines, stats):
        yield _row_to_record(row)


def read_conn_table(lines: Iterable[str], stats: ParseStats | None = None) -> ConnTable:
    """Parse a conn.log straight into a :class:`ConnTable`."""
    stats = stats if stats is not None else ParseStats()
    rows = list(_iter_rows(lines, stats))
    if stats.skipped:
        logger.warning(stats.summary())
    return _rows_to_table(rows)


def _rows_to_table(rows: list[tuple]) -> ConnTable:
    if not rows:
        return ConnTable.empty()
    return ConnTable(**dict(zip(ConnTable.COLUMNS[:-1], zip(*rows))))


def iter_conn_tables(lines: Iterable[str], chunk_size: int = 200_000,
                     stats: ParseStats | None = None) -> Iterator[ConnTable]:
    """Parse a conn.log into consecutive tables of at most ``chunk_size`` records."""
    if chunk_size < 1:
        raise ValueError("chunk_size must be positive")
    stats = stats if stats is not None else ParseStats()
    rows: list[tuple] = []
    for row in _iter_rows(lines, stats):
        rows.append(row)
        if len(rows) == chunk_size:
            yield _rows_to_table(rows)
            rows = []
    if rows:
        yield _rows_to_table(rows)
    if stats.skipped:
        logger.warning(stats.summary())


def read_conn_log_file(path, stats: ParseStats | None = None) -> ConnTable:
    with open(path, encoding="utf-8") as fh:
        return read_conn_table(fh, stats)


# --------------------------------------------------------------------------
# TSV writing

OUTPUT_FIELDS = ("ts", "id.orig_h", "id.orig_p", "id.resp_h", "id.resp_p", "proto", "duration",
                 "orig_bytes", "resp_bytes", "conn_state", "orig_pkts", "resp_pkts")
OUTPUT_TYPES = ("time", "addr", "port", "addr", "port", "enum", "interval",
                "count", "count", "string", "count", "count")


def _header(include_label: bool) -> list[str]:
    fields = list(OUTPUT_FIELDS) + (["label"] if include_label else [])
    types = list(OUTPUT_TYPES) + (["string"] if include_label else [])
    return [
        "#separator \\x09",
        "#set_separator\t,",
        "#empty_field\t(empty)",
        "#unset_field\t-",
        "#path\tconn",
        "#fields\t" + "\t".join(fields),
        "#types\t" + "\t".join(types),
    ]


def _fmt_count(values: np.ndarray) -> list[str]:
    return [UNSET if v != v else str(int(v)) for v in values.tolist()]


def _fmt_float(values: np.ndarray) -> list[str]:
    return [UNSET if v != v else repr(v) for v in values.tolist()]


def _fmt_ips(values: np.ndarray) -> list[str]:
    v = values.astype(np.int64)
    octets = [(v >> s & 255).tolist() for s in (24, 16, 8, 0)]
    return [f"{a}.{b}.{c}.{d}" for a, b, c, d in zip(*octets)]


def write_conn_log(records: ConnTable | Iterable[ConnRecord], include_label: bool = False,
                   chunk_size: int = 200_000) -> Iterator[str]:
    """Yield conn.log lines (without newlines) that :func:`parse_conn_log` reads back."""
    table = as_table(records)
    yield from _header(include_label)
    protos = np.array(PROTOCOLS)
    states = np.array([s.value for s in STATES])
    labels = np.array(LABELS)
    for lo in range(0, len(table), chunk_size):
        t = table.take(slice(lo, lo + chunk_size))
        cols = [
            [repr(x) for x in t.ts.tolist()],
            _fmt_ips(t.orig_h), [str(x) for x in t.orig_p.tolist()],
            _fmt_ips(t.dest_h), [str(x) for x in t.dest_p.tolist()],
            protos[t.proto].tolist(), _fmt_float(t.duration),
            _fmt_count(t.orig_bytes), _fmt_count(t.resp_bytes),
            states[t.conn_state].tolist(),
            _fmt_count(t.orig_pkts), _fmt_count(t.resp_pkts),
        ]
        if include_label:
            cols.append(labels[t.malicious.astype(int)].tolist())
        for row in zip(*cols):
            yield "\t".join(row)


def write_conn_log_file(path, records, include_label: bool = False):
    with open(path, "w", encoding="utf-8") as fh:
        buf = io.StringIO()
        for i, line in enumerate(write_conn_log(records, include_label)):
            buf.write(line)
            buf.write("\n")
            if i % 100_000 == 0:
                fh.write(buf.getvalue())
                buf = io.StringIO()
        fh.write(buf.getvalue())


# --------------------------------------------------------------------------
# Border classification


def _parse_cidr(cidr: str) -> tuple[int, int]:
    addr, _, bits = cidr.partition("/")
    bits = int(bits) if bits else 32
    if not 0 <= bits <= 32:
        raise ValueError(f"bad prefix length in {cidr!r}")
    mask = (0xFFFFFFFF << (32 - bits)) & 0xFFFFFFFF
    try:
        net = ip_to_int(addr)
    except RecordError as exc:
        raise ValueError(str(exc)) from None
    return net & mask, mask


RFC1918 = ("10.0.0.0/8", "172.16.0.0/12", "192.168.0.0/16")


@dataclass(frozen=True)
class NetworkBoundary:
    """The monitored network, as a list of internal CIDR blocks."""

    internal_prefixes: tuple[str, ...] = RFC1918

    def __post_init__(self):
        prefixes = tuple(self.internal_prefixes)
        if not prefixes:
            raise ValueError("a network boundary needs at least one internal prefix")
        object.__setattr__(self, "internal_prefixes", prefixes)
        object.__setattr__(self, "_nets", tuple(_parse_cidr(p) for p in prefixes))

    def is_internal(self, ips) -> np.ndarray:
        ips = np.asarray(ips, dtype=np.uint32)
        out = np.zeros(ips.shape, dtype=bool)
        for net, mask in self._nets:
            out |= (ips & np.uint32(mask)) == np.uint32(net)
        return out

    def __contains__(self, ip: str) -> bool:
        return bool(self.is_internal(np.array([ip_to_int(ip)], dtype=np.uint32))[0])


def filter_port_outbound(records: ConnTable | Iterable[ConnRecord], port: int,
                         boundary: NetworkBoundary = NetworkBoundary(),
                         outbound_only: bool = False) -> ConnTable:
    """Keep border-crossing TCP/UDP records whose destination port is ``port``.

    Records whose endpoints are both internal or both external are dropped,
    as are ICMP records. The result carries a ``direction`` column:
    ``OUTBOUND`` for internal originators, ``INBOUND`` otherwise. With
    ``outbound_only`` the inbound records are dropped as well.
    """
    table = as_table(records)
    orig_in = boundary.is_internal(table.orig_h)
    dest_in = boundary.is_internal(table.dest_h)
    keep = (table.dest_p == port) & (orig_in != dest_in) & (table.proto != PROTO_CODE["icmp"])
    if outbound_only:
        keep &= orig_in
    out = table.take(keep)
    out.direction = np.where(orig_in[keep], OUTBOUND, INBOUND).astype(np.int8)
    return out


def internal_external(table: ConnTable, boundary: NetworkBoundary | None = None):
    """Return (internal, external) endpoint arrays for border-crossing records."""
    if len(table) and np.any(table.direction == 0):
        if boundary is None:
            boundary = NetworkBoundary()
        outbound = boundary.is_internal(table.orig_h)
    else:
        outbound = table.direction == OUTBOUND
    internal = np.where(outbound, table.orig_h, table.dest_h)
    external = np.where(outbound, table.dest_h, table.orig_h)
    return internal, external
