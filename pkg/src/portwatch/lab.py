"""Synthetic traffic: benign background, scanning-malware traces, evasions, overlay.

Everything here is a deterministic function of its seeds. Random streams
come from ``numpy.random.default_rng`` seeded with tuples such as
``[seed, port, day]`` so that independent shards do not share state.

The benign generator aims at the distributions the window features see
(diurnal volume, bursty sessions, Zipf destination reuse, heavy-tailed
sizes, a mostly-SF state mix), not at packet-level realism.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .features import IpHistory
from .zeek import (OUTBOUND, PROTO_CODE, STATE_CODE, STATES, ConnTable, NetworkBoundary,
                   int_to_ip)

DAY = 86_400.0
MINUTES_PER_DAY = 1440
# 2020-09-14 00:00 UTC, a Monday.
DEFAULT_START = 1_600_041_600.0

_FAILED = np.zeros(len(STATES), dtype=bool)
_FAILED[[STATE_CODE[s] for s in ("S0", "REJ", "RSTO", "RSTR", "RSTOS0", "RSTRH", "SH", "SHR",
                                 "OTH")]] = True


def diurnal_curve(low: float, high: float, peak_minute: int = 14 * 60) -> np.ndarray:
    """Raised-cosine daily rate curve, 1440 entries, peaking at ``peak_minute``."""
    m = np.arange(MINUTES_PER_DAY)
    phase = 2 * np.pi * (m - peak_minute) / MINUTES_PER_DAY
    return low + (high - low) * 0.5 * (1 + np.cos(phase))


def _state_vector(mix) -> np.ndarray:
    if isinstance(mix, dict):
        p = np.zeros(len(STATES))
        for name, value in mix.items():
            p[STATE_CODE[name]] = value
    else:
        p = np.asarray(mix, dtype=float)
    if p.shape != (len(STATES),) or np.any(p < 0) or not p.sum() > 0:
        raise ValueError("state mix must be 13 non-negative probabilities")
    return p / p.sum()


@dataclass
class BenignProfile:
    """Traffic model for one port. Rates are connections per minute."""

    port: int
    rate_curve: np.ndarray
    weekend_factor: float = 0.6
    dispersion: float = 6.0
    burst_mean: float = 3.0
    zipf_exponent: float = 1.0
    catalog_size: int = 10_000
    fresh_fraction: float = 0.02
    inbound_rate: float = 1.0
    inbound_burst: float = 4.0
    # Connection storms: one client hammering one destination (retries, parallel fetches).
    storm_rate: float = 0.0
    storm_size: float = 20.0
    storm_alpha: float = 1.5
    storm_failed_fraction: float = 0.5
    # Minute-to-minute composition drift: log-scale sd of the duration/bytes location
    # and Dirichlet concentration of the state mix (0 disables either).
    mix_sigma: float = 0.0
    # Rare benign sweeps of never-seen destinations (mirror/CDN rotation), per minute.
    fresh_burst_rate: float = 0.0
    fresh_burst_size: float = 10.0
    state_concentration: float = 0.0
    n_internal_hosts: int = 500
    duration_lognorm: tuple[float, float] = (1.0, 1.5)
    orig_bytes_lognorm: tuple[float, float] = (7.0, 1.5)
    resp_bytes_lognorm: tuple[float, float] = (9.0, 2.0)
    state_mix: np.ndarray = field(default_factory=lambda: _state_vector(
        {"SF": 0.85, "S0": 0.04, "REJ": 0.02, "RSTO": 0.03, "RSTR": 0.03, "S1": 0.01,
         "SH": 0.01, "OTH": 0.01}))
    inbound_state_mix: np.ndarray = field(default_factory=lambda: _state_vector(
        {"S0": 0.6, "REJ": 0.3, "SF": 0.05, "RSTO": 0.05}))
    seed: int = 0

    def __post_init__(self):
        self.rate_curve = np.asarray(self.rate_curve, dtype=float)
        if self.rate_curve.shape != (MINUTES_PER_DAY,):
            raise ValueError("rate_curve needs one entry per minute of the day")
        if np.any(self.rate_curve < 0) or self.inbound_rate < 0:
            raise ValueError("rates must be non-negative")
        self.state_mix = _state_vector(self.state_mix)
        self.inbound_state_mix = _state_vector(self.inbound_state_mix)

    @classmethod
    def from_dict(cls, data: dict) -> "BenignProfile":
        data = dict(data)
        curve = data.pop("rate_curve")
        if isinstance(curve, dict):
            curve = diurnal_curve(**curve)
        for key in ("duration_lognorm", "orig_bytes_lognorm", "resp_bytes_lognorm"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(rate_curve=curve, **data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rate_curve"] = self.rate_curve.tolist()
        d["state_mix"] = {s.value: p for s, p in zip(STATES, self.state_mix.tolist()) if p}
        d["inbound_state_mix"] = {s.value: p for s, p in zip(STATES, self.inbound_state_mix.tolist())
                                  if p}
        return d


def load_profiles(path=None) -> list[BenignProfile]:
    """Read benign profiles from JSON; the packaged defaults when ``path`` is None."""
    if path is None:
        text = resources.files("portwatch.data").joinpath("benign_profiles.json").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    data = json.loads(text)
    return [BenignProfile.from_dict(p) for p in data["profiles"]]


def default_profiles(ports: Iterable[int] | None = None) -> list[BenignProfile]:
    profiles = load_profiles()
    if ports is None:
        return profiles
    by_port = {p.port: p for p in profiles}
    return [by_port[p] for p in ports]


def _random_external(rng, n: int, boundary: NetworkBoundary) -> np.ndarray:
    """Uniform draws from the IPv4 space outside the monitored network."""
    out = rng.integers(0, 2**32, size=n, dtype=np.uint64).astype(np.uint32)
    bad = boundary.is_internal(out)
    while bad.any():
        out[bad] = rng.integers(0, 2**32, size=int(bad.sum()), dtype=np.uint64).astype(np.uint32)
        bad = boundary.is_internal(out)
    return out


def _internal_hosts(rng, n: int, boundary: NetworkBoundary) -> np.ndarray:
    cidr = boundary.internal_prefixes[0]
    addr, _, bits = cidr.partition("/")
    bits = int(bits or 32)
    size = 2 ** (32 - bits)
    if n > size - 2:
        raise ValueError(f"{cidr} cannot hold {n} hosts")
    from .zeek import ip_to_int
    base = ip_to_int(addr)
    offsets = rng.choice(np.arange(1, size - 1, dtype=np.int64), size=n, replace=False) \
        if size <= 2**20 else np.unique(rng.integers(1, size - 1, size=3 * n))[:n]
    rng.shuffle(offsets)
    return (base + offsets).astype(np.uint32)


def _zipf_sampler(n: int, exponent: float):
    w = 1.0 / np.arange(1, n + 1) ** exponent
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    return lambda rng, size: np.minimum(np.searchsorted(cdf, rng.random(size)), n - 1)


def _connection_attributes(rng, states: np.ndarray, profile: BenignProfile, shift=None):
    n = len(states)
    failed = _FAILED[states]
    shift = np.zeros((n, 3)) if shift is None else shift
    mu, sigma = profile.duration_lognorm
    duration = rng.lognormal(mu + shift[:, 0], sigma)
    duration[failed] = rng.uniform(0, 3, int(failed.sum()))
    mu, sigma = profile.orig_bytes_lognorm
    orig_bytes = np.floor(rng.lognormal(mu + shift[:, 1], sigma))
    mu, sigma = profile.resp_bytes_lognorm
    resp_bytes = np.floor(rng.lognormal(mu + shift[:, 2], sigma))
    orig_bytes[failed] = 0
    resp_bytes[failed] = 0
    orig_pkts = 1 + rng.poisson(orig_bytes / 700 + 1)
    resp_pkts = rng.poisson(resp_bytes / 1000 + 1) + (~failed)
    resp_pkts[states == STATE_CODE["S0"]] = 0
    return duration, orig_bytes, resp_bytes, orig_pkts.astype(float), resp_pkts.astype(float)


def _benign_day(profile: BenignProfile, day: int, day_start: float, boundary: NetworkBoundary,
                seed: int, catalog: np.ndarray, hosts: np.ndarray) -> ConnTable:
    rng = np.random.default_rng([seed, profile.seed, profile.port, day])
    weekday = day % 7
    level = profile.weekend_factor if weekday >= 5 else 1.0
    minutes = np.arange(MINUTES_PER_DAY)
    k = profile.dispersion
    tables = []

    # Outbound sessions: a client talks to one destination in a short burst.
    mult = rng.gamma(k, 1.0 / k, MINUTES_PER_DAY) if k > 0 else np.ones(MINUTES_PER_DAY)
    session_rate = profile.rate_curve * level * mult / profile.burst_mean
    n_sessions = rng.poisson(session_rate)
    total = int(n_sessions.sum())
    if total:
        s_minute = np.repeat(minutes, n_sessions)
        s_start = day_start + 60.0 * (s_minute + rng.random(total))
        fresh = rng.random(total) < profile.fresh_fraction
        dest = catalog[_zipf_sampler(len(catalog), profile.zipf_exponent)(rng, total)]
        dest[fresh] = _random_external(rng, int(fresh.sum()), boundary)
        client = hosts[_zipf_sampler(len(hosts), 0.8)(rng, total)]
        n_conn = rng.geometric(1.0 / profile.burst_mean, total)
        idx = np.repeat(np.arange(total), n_conn)
        m = len(idx)
        ts = s_start[idx] + rng.exponential(5.0, m)
        conn_minute = s_minute[idx]
        if profile.state_concentration > 0:
            support = np.flatnonzero(profile.state_mix)
            mix = rng.dirichlet(profile.state_concentration * profile.state_mix[support],
                                MINUTES_PER_DAY)
            cum = np.cumsum(mix, axis=1)
            pick = (rng.random(m)[:, None] > cum[conn_minute]).sum(axis=1)
            states = support[np.minimum(pick, len(support) - 1)]
        else:
            states = rng.choice(len(STATES), size=m, p=profile.state_mix)
        shift = None
        if profile.mix_sigma > 0:
            shift = rng.normal(0.0, profile.mix_sigma, (MINUTES_PER_DAY, 3))[conn_minute]
        dur, ob, rb, op, rp = _connection_attributes(rng, states, profile, shift)
        tables.append(ConnTable(
            ts=ts, orig_h=client[idx], orig_p=rng.integers(1024, 65536, m), dest_h=dest[idx],
            dest_p=np.full(m, profile.port), proto=np.full(m, PROTO_CODE["tcp"]),
            duration=dur, orig_bytes=ob, resp_bytes=rb, orig_pkts=op, resp_pkts=rp,
            conn_state=states))

    # Storms: Pareto-sized bursts to one destination, either all completing or all
    # unanswered (S0 retries).
    if profile.storm_rate > 0:
        n_storms = rng.poisson(profile.storm_rate * profile.rate_curve * level
                               / max(profile.rate_curve.mean(), 1e-12))
        total = int(n_storms.sum())
        if total:
            s_minute = np.repeat(minutes, n_storms)
            s_start = day_start + 60.0 * (s_minute + rng.random(total))
            dest = catalog[_zipf_sampler(len(catalog), profile.zipf_exponent)(rng, total)]
            client = hosts[rng.integers(0, len(hosts), total)]
            size = np.floor(profile.storm_size * (1 + rng.pareto(profile.storm_alpha, total)))
            size = np.minimum(size, 50 * profile.storm_size).astype(np.int64)
            failing = rng.random(total) < profile.storm_failed_fraction
            idx = np.repeat(np.arange(total), size)
            m = len(idx)
            states = rng.choice(len(STATES), size=m, p=profile.state_mix)
            states[failing[idx]] = STATE_CODE["S0"]
            dur, ob, rb, op, rp = _connection_attributes(rng, states, profile)
            tables.append(ConnTable(
                ts=s_start[idx] + rng.uniform(0, 30.0, m), orig_h=client[idx],
                orig_p=rng.integers(1024, 65536, m), dest_h=dest[idx],
                dest_p=np.full(m, profile.port), proto=np.full(m, PROTO_CODE["tcp"]),
                duration=dur, orig_bytes=ob, resp_bytes=rb, orig_pkts=op, resp_pkts=rp,
                conn_state=states))

    if profile.fresh_burst_rate > 0:
        n_bursts = rng.poisson(profile.fresh_burst_rate, MINUTES_PER_DAY)
        total = int(n_bursts.sum())
        if total:
            s_minute = np.repeat(minutes, n_bursts)
            s_start = day_start + 60.0 * (s_minute + rng.random(total))
            size = np.floor(profile.fresh_burst_size * (1 + rng.pareto(1.2, total)))
            size = np.minimum(size, 50 * profile.fresh_burst_size).astype(np.int64)
            idx = np.repeat(np.arange(total), size)
            m = len(idx)
            states = rng.choice(len(STATES), size=m, p=profile.state_mix)
            dur, ob, rb, op, rp = _connection_attributes(rng, states, profile)
            tables.append(ConnTable(
                ts=s_start[idx] + rng.uniform(0, 20.0, m),
                orig_h=hosts[rng.integers(0, len(hosts), total)][idx],
                orig_p=rng.integers(1024, 65536, m), dest_h=_random_external(rng, m, boundary),
                dest_p=np.full(m, profile.port), proto=np.full(m, PROTO_CODE["tcp"]),
                duration=dur, orig_bytes=ob, resp_bytes=rb, orig_pkts=op, resp_pkts=rp,
                conn_state=states))

    # Inbound background: remote scanners sweeping a few internal hosts each.
    if profile.inbound_rate > 0:
        imult = rng.gamma(k, 1.0 / k, MINUTES_PER_DAY) if k > 0 else np.ones(MINUTES_PER_DAY)
        n_scans = rng.poisson(profile.inbound_rate * imult / profile.inbound_burst)
        total = int(n_scans.sum())
        if total:
            s_minute = np.repeat(minutes, n_scans)
            s_start = day_start + 60.0 * (s_minute + rng.random(total))
            scanner = _random_external(rng, total, boundary)
            n_conn = rng.geometric(1.0 / profile.inbound_burst, total)
            idx = np.repeat(np.arange(total), n_conn)
            m = len(idx)
            states = rng.choice(len(STATES), size=m, p=profile.inbound_state_mix)
            dur, ob, rb, op, rp = _connection_attributes(rng, states, profile)
            tables.append(ConnTable(
                ts=s_start[idx] + rng.exponential(2.0, m), orig_h=scanner[idx],
                orig_p=rng.integers(1024, 65536, m), dest_h=hosts[rng.integers(0, len(hosts), m)],
                dest_p=np.full(m, profile.port), proto=np.full(m, PROTO_CODE["tcp"]),
                duration=dur, orig_bytes=ob, resp_bytes=rb, orig_pkts=op, resp_pkts=rp,
                conn_state=states))

    table = ConnTable.concat(tables)
    table.ts = np.minimum(table.ts, day_start + DAY - 1e-3)
    return table.sorted_by_time()


def gen_benign(profiles: BenignProfile | Sequence[BenignProfile], days: int,
               boundary: NetworkBoundary = NetworkBoundary(), seed: int = 0,
               start: float = DEFAULT_START, first_day: int = 0) -> ConnTable:
    """Generate ``days`` days of benign traffic for every profile, time-sorted.

    Day ``d`` covers ``[start + d*86400, start + (d+1)*86400)``; days 5 and 6
    of every week are weekend days. ``first_day`` offsets the day counter so a
    test day can be generated separately from the training week with the same
    destination catalog.
    """
    if days < 1:
        raise ValueError("days must be at least 1")
    if isinstance(profiles, BenignProfile):
        profiles = [profiles]
    tables = []
    for profile in profiles:
        crng = np.random.default_rng([seed, profile.seed, profile.port, 2**20])
        catalog = _random_external(crng, profile.catalog_size, boundary)
        hosts = _internal_hosts(crng, profile.n_internal_hosts, boundary)
        for d in range(first_day, first_day + days):
            tables.append(_benign_day(profile, d, start + d * DAY, boundary, seed, catalog, hosts))
    out = ConnTable.concat(tables)
    return out.take(np.argsort(out.ts, kind="stable"))


# --------------------------------------------------------------------------
# Scanning malware


@dataclass(frozen=True)
class AttackSpec:
    """Parameters of one scanning campaign; ``scan_rate`` is probes per minute over all hosts."""

    family: str = "wannacry_like"
    scan_port: int = 445
    scan_rate: float = 14_000.0
    n_infected: int = 48
    duration: float = 116.0
    threads: int = 128
    inter_probe_gap: float = 100.0
    success_fraction: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.family not in ("wannacry_like", "mirai_like", "custom"):
            raise ValueError(f"unknown attack family {self.family!r}")
        if not self.scan_rate > 0 or not self.duration > 0:
            raise ValueError("scan_rate and duration must be positive")
        if not 0 <= self.success_fraction <= 1:
            raise ValueError("success_fraction must lie in [0, 1]")
        if self.n_infected < 1:
            raise ValueError("n_infected must be at least 1")

    @classmethod
    def wannacry_like(cls, **overrides) -> "AttackSpec":
        return cls(**overrides)

    @classmethod
    def mirai_like(cls, **overrides) -> "AttackSpec":
        params = dict(family="mirai_like", scan_port=23, scan_rate=330_000.0, n_infected=1,
                      duration=62.0, threads=1, inter_probe_gap=60_000 / 330_000,
                      success_fraction=0.01)
        params.update(overrides)
        return cls(**params)

    @classmethod
    def from_threads(cls, threads: int, inter_probe_gap_ms: float, n_infected: int = 1,
                     **overrides) -> "AttackSpec":
        """Custom variant whose per-host rate is ``threads`` probes every ``inter_probe_gap_ms``."""
        rate = n_infected * threads * 60_000.0 / inter_probe_gap_ms
        params = dict(family="custom", scan_rate=rate, n_infected=n_infected, threads=threads,
                      inter_probe_gap=inter_probe_gap_ms)
        params.update(overrides)
        return cls(**params)

    def scaled(self, factor: float) -> "AttackSpec":
        return replace(self, scan_rate=self.scan_rate * factor)

    def to_dict(self) -> dict:
        return asdict(self)


FAMILIES = {"wannacry-like": AttackSpec.wannacry_like, "wannacry_like": AttackSpec.wannacry_like,
            "mirai-like": AttackSpec.mirai_like, "mirai_like": AttackSpec.mirai_like}

# Weight-training variants: 8 threads with growing gaps between probes.
LADDER_GAPS_MS = (500.0, 1_000.0, 5_000.0, 10_000.0, 20_000.0)


def variant_ladder(scan_port: int = 445, seed: int = 0, duration: float = 60.0,
                   rate_scale: float = 1.0) -> list[AttackSpec]:
    return [AttackSpec.from_threads(8, gap, scan_port=scan_port, duration=duration,
                                    seed=seed + i).scaled(rate_scale)
            for i, gap in enumerate(LADDER_GAPS_MS)]


@dataclass
class AttackTrace:
    table: ConnTable
    spec: AttackSpec
    hosts: np.ndarray
    evasion: tuple[str, int] | None = None

    def __len__(self) -> int:
        return len(self.table)

    @property
    def start(self) -> float:
        return float(self.table.ts.min()) if len(self.table) else 0.0


def gen_attack(spec: AttackSpec, boundary: NetworkBoundary = NetworkBoundary(),
               start: float = DEFAULT_START) -> AttackTrace:
    """Uniform random-destination probing from ``spec.n_infected`` hosts.

    Each host's probes are spread over ``[start, start + duration)`` on an
    evenly spaced grid with uniform jitter inside each slot. A
    ``success_fraction`` of probes complete (SF, with payload both ways); the
    rest fail as S0 (80%) or REJ with no response bytes.
    """
    rng = np.random.default_rng([spec.seed, spec.scan_port, 0xA77AC])
    span = spec.duration * 60.0
    per_host = spec.scan_rate * spec.duration / spec.n_infected
    base = int(math.floor(per_host))
    counts = base + (rng.random(spec.n_infected) < per_host - base)
    counts = np.maximum(counts, 1)
    hosts = _internal_hosts(rng, spec.n_infected, boundary)
    owner = np.repeat(np.arange(spec.n_infected), counts)
    slot = np.concatenate([np.arange(c) for c in counts])
    width = span / np.repeat(counts, counts)
    ts = start + (slot + rng.random(len(slot))) * width
    n = len(ts)
    success = rng.random(n) < spec.success_fraction
    states = np.where(success, STATE_CODE["SF"],
                      np.where(rng.random(n) < 0.8, STATE_CODE["S0"], STATE_CODE["REJ"]))
    duration = rng.uniform(0, 3, n)
    duration[success] = rng.lognormal(1.0, 0.5, int(success.sum()))
    orig_bytes = np.zeros(n)
    resp_bytes = np.zeros(n)
    orig_bytes[success] = np.floor(rng.lognormal(8.5, 0.3, int(success.sum())))
    resp_bytes[success] = np.floor(rng.lognormal(7.0, 0.3, int(success.sum())))
    orig_pkts = np.where(success, 6 + rng.poisson(orig_bytes / 1000), 1 + rng.integers(0, 3, n))
    resp_pkts = np.where(success, 4 + rng.poisson(resp_bytes / 1000),
                         (states == STATE_CODE["REJ"]).astype(int))
    table = ConnTable(
        ts=ts, orig_h=hosts[owner], orig_p=rng.integers(1024, 65536, n),
        dest_h=_random_external(rng, n, boundary), dest_p=np.full(n, spec.scan_port),
        proto=np.full(n, PROTO_CODE["tcp"]), duration=duration, orig_bytes=orig_bytes,
        resp_bytes=resp_bytes, orig_pkts=orig_pkts.astype(float), resp_pkts=resp_pkts.astype(float),
        conn_state=states, malicious=np.ones(n, dtype=bool), direction=np.full(n, OUTBOUND))
    return AttackTrace(table.sorted_by_time(), spec, hosts)


def evade_rate(trace: AttackTrace, factor: int) -> AttackTrace:
    """Keep each probe with probability ``1/factor``.

    Every infected host keeps its first and last probe so the host set and
    the campaign's time span survive thinning.
    """
    if factor < 2:
        raise ValueError("rate evasion factor must be at least 2; omit evasion for the original")
    rng = np.random.default_rng([trace.spec.seed, factor, 0xE1])
    t = trace.table
    keep = rng.random(len(t)) < 1.0 / factor
    if len(t):
        _, first = np.unique(t.orig_h, return_index=True)
        _, last_rev = np.unique(t.orig_h[::-1], return_index=True)
        keep[first] = True
        keep[len(t) - 1 - last_rev] = True
    return AttackTrace(t.take(keep), trace.spec, trace.hosts, ("rate", factor))


def evade_history(trace: AttackTrace, new_ip_factor: int, history: IpHistory,
                  seed: int | None = None) -> AttackTrace:
    """Reuse destinations already in ``history`` for all but ``1/new_ip_factor`` of probes.

    Meant to be applied to a 4x rate-thinned trace. Record count, timing and
    every other attribute are unchanged.
    """
    if new_ip_factor < 1:
        raise ValueError("new_ip_factor must be at least 1")
    known = history.addresses()
    if not len(known):
        raise ValueError("history is empty; nothing to reuse")
    seed = trace.spec.seed if seed is None else seed
    rng = np.random.default_rng([seed, new_ip_factor, 0xE2])
    t = trace.table.copy()
    reuse = rng.random(len(t)) >= 1.0 / new_ip_factor
    t.dest_h[reuse] = known[rng.integers(0, len(known), int(reuse.sum()))]
    return AttackTrace(t, trace.spec, trace.hosts, ("history", new_ip_factor))


def overlay(benign: ConnTable, trace: AttackTrace, boundary: NetworkBoundary = NetworkBoundary(),
            seed: int = 0, offset: float | None = None) -> ConnTable:
    """Merge an attack trace into a benign day.

    Each infected host is mapped to a distinct internal address seen in the
    benign data, and the trace is shifted to start ``offset`` seconds after
    the benign day's first whole minute (random whole-minute offset when not
    given). All other record attributes are preserved.
    """
    rng = np.random.default_rng([seed, 0x0E7])
    atk = trace.table
    if not len(atk):
        return benign.sorted_by_time()
    internal = np.unique(np.concatenate([benign.orig_h[boundary.is_internal(benign.orig_h)],
                                         benign.dest_h[boundary.is_internal(benign.dest_h)]]))
    attackers = np.unique(atk.orig_h)
    if len(attackers) > len(internal):
        raise ValueError(f"trace has {len(attackers)} infected hosts but the benign data has "
                         f"only {len(internal)} internal addresses")
    chosen = rng.choice(internal, size=len(attackers), replace=False)
    mapping = dict(zip(attackers.tolist(), chosen.tolist()))

    day_start = math.floor(benign.ts.min() / 60.0) * 60.0
    span = benign.ts.max() - day_start
    trace_start = math.floor(atk.ts.min() / 60.0) * 60.0
    trace_len = atk.ts.max() - trace_start
    if trace_len > span:
        raise ValueError("attack trace is longer than the benign data it is merged into")
    if offset is None:
        offset = 60.0 * int(rng.integers(0, int((span - trace_len) // 60) + 1))
    moved = atk.copy()
    moved.ts = atk.ts - trace_start + day_start + offset
    moved.orig_h = np.array([mapping[h] for h in atk.orig_h.tolist()], dtype=np.uint32)
    merged = ConnTable.concat([benign, moved])
    return merged.take(np.argsort(merged.ts, kind="stable"))


def merge_ladder(benign_day: ConnTable, specs: Sequence[AttackSpec],
                 boundary: NetworkBoundary = NetworkBoundary(), seed: int = 0) -> ConnTable:
    """Overlay each variant into its own slice of the day, in order."""
    day_start = math.floor(benign_day.ts.min() / 60.0) * 60.0
    slot = (benign_day.ts.max() - day_start) / len(specs)
    rng = np.random.default_rng([seed, 0x1ADD])
    merged = benign_day
    for i, spec in enumerate(specs):
        trace = gen_attack(spec, boundary)
        room = max(0, int((slot - spec.duration * 60) // 60))
        offset = i * slot // 60 * 60 + 60 * int(rng.integers(0, room + 1))
        merged = overlay(merged, trace, boundary, seed=seed + i, offset=offset)
    return merged


def format_hosts(trace: AttackTrace) -> list[str]:
    return [int_to_ip(h) for h in trace.hosts]
