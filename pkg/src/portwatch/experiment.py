"""End-to-end experiments: benign week, attack overlay, detection and evasion sweeps."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed

from .ensemble import WeightVector, fit_rf_classifier, rf_feature_importance
from .evaluation import LabeledScores, pr_auc, threshold_baseline
from .features import FeatureSet, IpHistory, extract_features
from .lab import (DAY, DEFAULT_START, AttackSpec, BenignProfile, default_profiles, evade_history,
                  evade_rate, gen_attack, gen_benign, load_profiles, merge_ladder, overlay,
                  variant_ladder)
from .model import ProfileModel, fit_profile
from .zeek import ConnTable, NetworkBoundary, filter_port_outbound

log = logging.getLogger(__name__)

WINDOWS_PER_DAY = 1440
SWEEP_MODELS = ("threshold", "kde_multi", "iforest", "ensemble_mean", "ensemble_weighted")
EVASION_METHODS = ("rate", "history")
FACTORS = (1, 2, 4, 8, 16, 32, 64, 128)
# History evasion starts from the 4x rate-thinned variant.
HISTORY_BASE_FACTOR = 4
DEFAULT_ATTACK_SCALE = 0.02


def day_features(table: ConnTable, port: int, day_start: float, history: IpHistory,
                 window_len: float = 60.0) -> FeatureSet:
    """Features for one port over the full grid of one day; ``history`` is updated."""
    n = int(round(DAY / window_len))
    return extract_features(table, window_len, history=history, port=port, start=day_start,
                            n_windows=n)


def _day_slice(table: ConnTable, day_start: float) -> ConnTable:
    lo, hi = np.searchsorted(table.ts, [day_start, day_start + DAY])
    return table.take(slice(lo, hi))


@dataclass
class PortWorld:
    """Benign training week and test day of one port, ready for overlay."""

    port: int
    train: FeatureSet
    test_records: ConnTable
    test_start: float
    history_before_test: IpHistory
    last_train_records: ConnTable
    last_train_start: float
    history_before_last: IpHistory


def build_port_world(benign: ConnTable, port: int, train_days: int, start: float = DEFAULT_START,
                     boundary: NetworkBoundary = NetworkBoundary(), window_len: float = 60.0,
                     warmup_days: int = 0) -> PortWorld:
    """Split a port's benign days into training features and the held-out test day.

    The first ``warmup_days`` days only populate the IP history, so training
    windows see steady-state new-IP counts rather than a cold start.
    """
    table = filter_port_outbound(benign, port, boundary)
    history = IpHistory(port)
    for d in range(warmup_days):
        day_features(_day_slice(table, start + d * DAY), port, start + d * DAY, history, window_len)
    train, hist_last, last_records = [], None, None
    first = warmup_days
    for d in range(first, first + train_days):
        day_start = start + d * DAY
        records = _day_slice(table, day_start)
        if d == first + train_days - 1:
            hist_last = history.copy()
            last_records = records
        train.append(day_features(records, port, day_start, history, window_len))
    test_start = start + (first + train_days) * DAY
    return PortWorld(port, FeatureSet.concat(train), _day_slice(table, test_start), test_start,
                     history, last_records, test_start - DAY, hist_last)


def attack_features(world: PortWorld, trace, boundary: NetworkBoundary = NetworkBoundary(),
                    seed: int = 0, window_len: float = 60.0) -> FeatureSet:
    """Overlay ``trace`` on the test day and extract that day's features."""
    merged = overlay(world.test_records, trace, boundary, seed=seed) if trace is not None \
        else world.test_records
    return day_features(merged, world.port, world.test_start, world.history_before_test.copy(),
                        window_len)


def rf_weights(world: PortWorld, standardizer, rate_scale: float = 1.0, seed: int = 0,
               boundary: NetworkBoundary = NetworkBoundary(), n_trees: int = 100,
               window_len: float = 60.0) -> tuple[WeightVector, float]:
    """Random Forest importances from the ladder day (variants merged into the last training day).

    Returns the weights and the forest's out-of-bag accuracy.
    """
    specs = variant_ladder(scan_port=world.port, seed=seed, rate_scale=rate_scale)
    merged = merge_ladder(world.last_train_records, specs, boundary, seed=seed)
    feats = day_features(merged, world.port, world.last_train_start,
                         world.history_before_last.copy(), window_len)
    rf = fit_rf_classifier(standardizer.transform(feats.values), feats.malicious, n_trees, seed)
    return rf_feature_importance(rf), float(rf.oob_score_)


@dataclass
class FittedModels:
    """Everything the sweep scores a test day with, for one port and seed."""

    port: int
    profiles: dict[str, ProfileModel]
    weights: WeightVector

    def scores(self, name: str, features: FeatureSet) -> np.ndarray:
        if name == "threshold":
            return threshold_baseline(features).score
        # Per-port detection uses the model's own score; CCDF only matters across ports.
        return self.profiles[name].suspicion(features)


MODEL_KIND = {"kde_multi": "kde-multi", "iforest": "iforest", "ensemble_mean": "ensemble-kde",
              "ensemble_weighted": "ensemble-kde", "ensemble_iforest_mean": "ensemble-iforest",
              "ensemble_iforest_weighted": "ensemble-iforest"}


def fit_models(world: PortWorld, models: Sequence[str], weights: WeightVector | None,
               seed: int = 0, n_estimators: int = 100) -> FittedModels:
    profiles = {}
    for name in models:
        if name == "threshold":
            continue
        w = weights if name.endswith("weighted") else WeightVector.uniform()
        profiles[name] = fit_profile(MODEL_KIND[name], world.train, port=world.port, weights=w,
                                     n_estimators=n_estimators, seed=seed)
    return FittedModels(world.port, profiles, weights or WeightVector.uniform())


def evaded_trace(spec: AttackSpec, method: str, factor: int, history: IpHistory,
                 boundary: NetworkBoundary = NetworkBoundary(), start: float = DEFAULT_START):
    trace = gen_attack(spec, boundary, start)
    if method == "rate":
        return trace if factor == 1 else evade_rate(trace, factor)
    if method == "history":
        base = evade_rate(trace, HISTORY_BASE_FACTOR)
        return base if factor == 1 else evade_history(base, factor, history)
    raise ValueError(f"unknown evasion method {method!r}")


# --------------------------------------------------------------------------
# Sweep


@dataclass
class SweepConfig:
    models: tuple[str, ...] = SWEEP_MODELS
    methods: tuple[str, ...] = EVASION_METHODS
    factors: tuple[int, ...] = FACTORS
    ports: tuple[int, ...] = (443,)
    seeds: tuple[int, ...] = (0,)
    attack: AttackSpec = field(default_factory=AttackSpec)
    # Multiplies the attack's probe rate. The synthetic background carries about
    # 1e5 connections per day on its busiest port, so the attack is scaled down
    # with it; 1 keeps the configured rate.
    attack_scale: float = DEFAULT_ATTACK_SCALE
    # Rate multiplier for the weight-training ladder, independent of the attack under test.
    ladder_scale: float = 1.0
    train_days: int = 7
    # Days that only fill the IP history before training starts.
    warmup_days: int = 7
    window_len: float = 60.0
    profiles_path: str | None = None
    n_estimators: int = 100
    jobs: int = 1

    def __post_init__(self):
        unknown = set(self.models) - set(SWEEP_MODELS) - set(MODEL_KIND)
        if unknown:
            raise ValueError(f"unknown models {sorted(unknown)}")
        bad = set(self.methods) - set(EVASION_METHODS)
        if bad:
            raise ValueError(f"unknown evasion methods {sorted(bad)}")
        if any(f < 1 for f in self.factors):
            raise ValueError("evasion factors must be at least 1")
        if self.train_days < 1:
            raise ValueError("train_days must be at least 1")
        if self.warmup_days < 0:
            raise ValueError("warmup_days must be non-negative")
        if not self.attack_scale > 0 or not self.ladder_scale > 0:
            raise ValueError("attack_scale and ladder_scale must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attack"] = self.attack.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SweepConfig":
        data = dict(data)
        if "attack" in data and isinstance(data["attack"], dict):
            data["attack"] = AttackSpec(**data["attack"])
        for key in ("models", "methods", "factors", "ports", "seeds"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


@dataclass(frozen=True)
class SweepRow:
    model: str
    method: str
    factor: int
    port: int
    seed: int
    pr_auc: float
    status: str = "ok"


def _profiles(config: SweepConfig) -> list[BenignProfile]:
    profiles = load_profiles(config.profiles_path) if config.profiles_path else default_profiles()
    by_port = {p.port: p for p in profiles}
    missing = [p for p in config.ports if p not in by_port]
    if missing:
        raise ValueError(f"no benign profile for ports {missing}")
    return [by_port[p] for p in config.ports]


def run_seed(config: SweepConfig, seed: int) -> list[SweepRow]:
    boundary = NetworkBoundary()
    benign = gen_benign(_profiles(config), config.warmup_days + config.train_days + 1, boundary,
                        seed=seed)
    rows = []
    for port in config.ports:
        world = build_port_world(benign, port, config.train_days, boundary=boundary,
                                 window_len=config.window_len, warmup_days=config.warmup_days)
        weights = None
        if any(m.endswith("weighted") for m in config.models):
            std = fit_profile("kde-multi", world.train, port=port).standardizer
            weights, _ = rf_weights(world, std, config.ladder_scale, seed, boundary,
                                    window_len=config.window_len)
        fitted = fit_models(world, config.models, weights, seed, config.n_estimators)
        spec = replace(config.attack, scan_port=port, seed=seed).scaled(config.attack_scale)
        for method in config.methods:
            for factor in config.factors:
                try:
                    trace = evaded_trace(spec, method, factor, world.history_before_test,
                                         boundary)
                    feats = attack_features(world, trace, boundary, seed, config.window_len)
                    if not feats.malicious.any():
                        raise ValueError("test day contains no malicious window")
                except ValueError as exc:
                    log.warning("cell %s/%s/%s/%s invalid: %s", method, factor, port, seed, exc)
                    rows.extend(SweepRow(m, method, factor, port, seed, math.nan, f"invalid: {exc}")
                                for m in config.models)
                    continue
                for name in config.models:
                    auc = pr_auc(LabeledScores.from_features(feats, fitted.scores(name, feats)))
                    rows.append(SweepRow(name, method, factor, port, seed, auc))
    return rows


def evasion_sweep(config: SweepConfig) -> list[SweepRow]:
    """PR-AUC for every (model, method, factor, port, seed) cell; per-seed values, no averaging."""
    if config.jobs == 1 or len(config.seeds) == 1:
        results = [run_seed(config, s) for s in config.seeds]
    else:
        results = Parallel(n_jobs=config.jobs)(delayed(run_seed)(config, s) for s in config.seeds)
    return [row for rows in results for row in rows]


def mean_auc(rows: Sequence[SweepRow], model: str, method: str, factor: int,
             port: int | None = None) -> float:
    vals = [r.pr_auc for r in rows if r.model == model and r.method == method
            and r.factor == factor and (port is None or r.port == port) and r.status == "ok"]
    return float(np.mean(vals)) if vals else math.nan


SWEEP_COLUMNS = ("model", "method", "factor", "port", "seed", "pr_auc")


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([r.model, r.method, r.factor, r.port, r.seed,
                    "nan" if math.isnan(r.pr_auc) else repr(r.pr_auc)])
    return buf.getvalue()


def sweep_json(rows: Sequence[SweepRow], config: SweepConfig) -> str:
    return json.dumps({"config": config.to_dict(),
                       "rows": [dict(asdict(r), pr_auc=None if math.isnan(r.pr_auc) else r.pr_auc)
                                for r in rows]}, indent=1)
