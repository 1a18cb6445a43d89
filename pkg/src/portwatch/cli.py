"""Command-line front end: one subcommand per pipeline stage.

Every invocation writes a JSON run manifest next to its primary output with
the effective configuration, seeds, input/output digests and library
versions. Failures print a single ``error: <code>: <message>`` line to
stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .ensemble import WeightVector, fit_rf_classifier, rf_feature_importance
from .evaluation import LabeledScores, pr_curve, topk_metrics
from .experiment import (EVASION_METHODS, FACTORS, SWEEP_MODELS, SweepConfig, evasion_sweep,
                         sweep_csv, sweep_json)
from .features import (FeatureSet, IpHistory, WindowStream, feature_lines, iter_features,
                       read_features)
from .lab import (DEFAULT_START, FAMILIES, AttackSpec, AttackTrace, default_profiles,
                  evade_history, evade_rate, gen_attack, gen_benign, load_profiles, merge_ladder,
                  overlay, variant_ladder)
from .model import MODEL_KINDS, ProfileModel, fit_profile
from .ranking import rank_global, rank_port, write_alerts, write_alerts_csv, read_alerts
from .zeek import (ConnLogFormatError, NetworkBoundary, filter_port_outbound, iter_conn_tables,
                   read_conn_log_file, write_conn_log_file)

log = logging.getLogger("portwatch")

DEFAULT_PORTS = (22, 23, 80, 443, 445)
# Environment variable naming a default config file.
CONFIG_ENV = "PORTWATCH_CONFIG"


class CliError(Exception):
    def __init__(self, code: str, message: str, status: int = 1):
        super().__init__(message)
        self.code = code
        self.status = status


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", f"{self.prog}: {message}", status=2)


# --------------------------------------------------------------------------
# Helpers


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _need_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError("missing-file", f"no such file: {path}")
    return p


def _load_json(path) -> dict:
    try:
        with open(_need_file(path), encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise CliError("bad-input", f"{path}: not valid JSON ({exc.msg})") from None


def _boundary(args) -> NetworkBoundary:
    return NetworkBoundary(tuple(args.internal)) if args.internal else NetworkBoundary()


def _json_safe(value):
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _versions() -> dict:
    import scipy
    import sklearn
    return {"portwatch": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "scikit-learn": sklearn.__version__}


class Run:
    """Collects what one invocation read and wrote, then writes the manifest."""

    def __init__(self, command: str, argv: list[str], args: argparse.Namespace):
        self.command = command
        self.argv = argv
        self.args = args
        self.inputs: list[str] = []
        self.outputs: list[str] = []
        self.extra: dict = {}

    def read(self, path) -> Path:
        p = _need_file(path)
        self.inputs.append(str(p))
        return p

    def wrote(self, path) -> None:
        self.outputs.append(str(path))

    def manifest(self) -> dict:
        config = {k: v for k, v in vars(self.args).items() if k not in ("handler", "manifest")}
        return _json_safe({
            "command": self.command,
            "argv": self.argv,
            "config": config,
            "seed": getattr(self.args, "seed", None),
            "inputs": {p: _sha256(p) for p in self.inputs},
            "outputs": {p: _sha256(p) for p in self.outputs if os.path.isfile(p)},
            "versions": _versions(),
            "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            **self.extra,
        })

    def write_manifest(self) -> None:
        target = self.args.manifest
        if target is None:
            if not self.outputs:
                return
            target = f"{self.outputs[0]}.manifest.json"
        if target == "-":
            return
        with open(target, "w", encoding="utf-8") as fh:
            json.dump(self.manifest(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def _ports(values) -> list[int]:
    ports = sorted(set(int(p) for p in values))
    for p in ports:
        if not 0 <= p <= 65535:
            raise CliError("bad-input", f"{p} is not a port number")
    return ports


# --------------------------------------------------------------------------
# Subcommands


def cmd_synth_benign(run: Run) -> None:
    a = run.args
    profiles = load_profiles(run.read(a.profiles)) if a.profiles else default_profiles()
    by_port = {p.port: p for p in profiles}
    ports = _ports(a.ports)
    missing = [p for p in ports if p not in by_port]
    if missing:
        raise CliError("bad-input", f"no benign profile for ports {missing}")
    table = gen_benign([by_port[p] for p in ports], a.days, _boundary(a), seed=a.seed,
                       start=a.start, first_day=a.first_day)
    write_conn_log_file(a.output, table, include_label=True)
    run.wrote(a.output)
    log.info("wrote %d records for ports %s over %d days", len(table), ports, a.days)


def _attack_spec(a, run: Run) -> AttackSpec:
    params = _load_json(run.read(a.spec)) if a.spec else {}
    overrides = {k: v for k, v in dict(scan_port=a.port, scan_rate=a.rate, n_infected=a.hosts,
                                       duration=a.duration,
                                       success_fraction=a.success_fraction).items()
                 if v is not None}
    params.update(overrides)
    params["seed"] = a.seed
    family = params.pop("family", None) or a.family
    try:
        if family in ("custom",):
            spec = AttackSpec(family="custom", **params)
        else:
            spec = FAMILIES[family](**params)
    except (TypeError, KeyError) as exc:
        raise CliError("bad-input", f"invalid attack spec: {exc}") from None
    return spec.scaled(a.scale) if a.scale != 1.0 else spec


def cmd_synth_attack(run: Run) -> None:
    a = run.args
    spec = _attack_spec(a, run)
    trace = gen_attack(spec, _boundary(a), start=a.start)
    write_conn_log_file(a.output, trace.table, include_label=True)
    run.wrote(a.output)
    run.extra["attack_spec"] = spec.to_dict()
    log.info("wrote %d probes from %d hosts", len(trace), spec.n_infected)


def _trace_from_log(path, seed: int) -> AttackTrace:
    table = read_conn_log_file(path)
    table = table.take(table.malicious) if table.malicious.any() else table
    if not len(table):
        raise CliError("bad-input", f"{path} holds no attack records")
    ports = np.unique(table.dest_p)
    if len(ports) != 1:
        raise CliError("bad-input", f"attack trace spans ports {ports.tolist()}")
    span_min = max((table.ts.max() - table.ts.min()) / 60.0, 1.0)
    hosts = np.unique(table.orig_h)
    spec = AttackSpec(family="custom", scan_port=int(ports[0]), scan_rate=len(table) / span_min,
                      n_infected=len(hosts), duration=span_min, seed=seed)
    table.malicious[:] = True
    return AttackTrace(table.sorted_by_time(), spec, hosts)


def cmd_evade(run: Run) -> None:
    a = run.args
    trace = _trace_from_log(run.read(a.input), a.seed)
    if a.method == "rate":
        if a.factor == 1:
            out = trace
        else:
            out = evade_rate(trace, a.factor)
    else:
        if not a.history:
            raise CliError("usage", "history evasion needs --history", status=2)
        history = IpHistory.load(run.read(a.history), trace.spec.scan_port)
        out = evade_history(trace, a.factor, history, seed=a.seed)
    write_conn_log_file(a.output, out.table, include_label=True)
    run.wrote(a.output)
    log.info("%s evasion x%d: %d -> %d records", a.method, a.factor, len(trace), len(out))


def cmd_overlay(run: Run) -> None:
    a = run.args
    benign = read_conn_log_file(run.read(a.benign)).sorted_by_time()
    if a.ladder is not None:
        if a.offset_minutes is not None:
            raise CliError("usage", "--offset-minutes does not apply to --ladder", 2)
        specs = variant_ladder(scan_port=a.ladder, seed=a.seed, rate_scale=a.ladder_scale)
        merged = merge_ladder(benign, specs, _boundary(a), seed=a.seed)
    else:
        trace = _trace_from_log(run.read(a.attack), a.seed)
        offset = None if a.offset_minutes is None else 60.0 * a.offset_minutes
        merged = overlay(benign, trace, _boundary(a), seed=a.seed, offset=offset)
    write_conn_log_file(a.output, merged, include_label=True)
    run.wrote(a.output)


def _history_path(directory, port: int) -> Path:
    return Path(directory) / f"{port}.txt"


def cmd_extract(run: Run) -> None:
    a = run.args
    boundary = _boundary(a)
    ports = _ports(a.ports)
    histories = {}
    for port in ports:
        path = _history_path(a.history_in, port) if a.history_in else None
        histories[port] = (IpHistory.load(run.read(path), port) if path and path.is_file()
                           else IpHistory(port))
    streams: dict[int, WindowStream] = {}
    parts: dict[int, list[FeatureSet]] = {p: [] for p in ports}
    n_records = 0
    with open(run.read(a.input), encoding="utf-8") as fh:
        for chunk in iter_conn_tables(fh, a.chunk_size):
            n_records += len(chunk)
            if not streams:
                start = a.start if a.start is not None else \
                    float(np.floor(chunk.ts.min() / a.window_len) * a.window_len)
                streams = {p: WindowStream(a.window_len, histories[p], p, start, a.n_windows,
                                           boundary) for p in ports}
            for port in ports:
                parts[port].append(streams[port].feed(filter_port_outbound(chunk, port, boundary)))
    if not streams:
        if a.start is None:
            raise CliError("bad-input", f"{a.input} holds no records; pass --start to emit "
                                        "empty windows")
        streams = {p: WindowStream(a.window_len, histories[p], p, a.start, a.n_windows, boundary)
                   for p in ports}
    # Every port shares the grid, up to the last window any port needs.
    ends = {p: s.close() for p, s in streams.items()}
    with open(a.output, "w", encoding="utf-8") as out:
        for port in ports:
            fs = FeatureSet.concat(parts[port] + [ends[port]])
            out.writelines(feature_lines(fs))
    run.wrote(a.output)
    if a.history_out:
        Path(a.history_out).mkdir(parents=True, exist_ok=True)
        for port in ports:
            path = _history_path(a.history_out, port)
            histories[port].save(path)
            run.wrote(path)
    run.extra["records"] = n_records
    log.info("extracted features from %d records for ports %s", n_records, ports)


def _select_port(features: FeatureSet, port: int | None, path) -> tuple[FeatureSet, int]:
    ports = features.ports
    if port is None:
        if len(ports) != 1:
            raise CliError("usage", f"{path} covers ports {ports}; choose one with --port", 2)
        port = ports[0]
    sub = features.for_port(port)
    if not len(sub):
        raise CliError("bad-input", f"{path} has no windows for port {port}")
    return sub, port


def _weights(spec: str, run: Run) -> WeightVector:
    if spec == "uniform":
        return WeightVector.uniform()
    try:
        return WeightVector.from_json(run.read(spec).read_text(encoding="utf-8"))
    except (ValueError, KeyError) as exc:
        raise CliError("schema", f"{spec}: {exc}") from None


def _bandwidth(text: str):
    if text == "auto":
        return text
    try:
        h = float(text)
    except ValueError:
        raise CliError("usage", f"bandwidth must be 'auto' or a number, got {text!r}", 2) from None
    if not h > 0 or not math.isfinite(h):
        raise CliError("usage", f"bandwidth must be positive, got {text!r}", 2)
    return h


def cmd_train(run: Run) -> None:
    a = run.args
    features = read_features(run.read(a.features))
    train, port = _select_port(features, a.port, a.features)
    if a.exclude_malicious:
        train = train.take(~train.malicious)
    weights = _weights(a.weights, run)
    max_samples = a.subsample if a.subsample == "auto" else int(a.subsample)
    model = fit_profile(a.model, train, port=port, weights=weights,
                        bandwidth=_bandwidth(a.bandwidth), n_estimators=a.n_trees,
                        max_samples=max_samples, seed=a.seed, target_fpr=a.target_fpr)
    model.save(a.output)
    run.wrote(a.output)
    log.info("trained %s on %d windows of port %d", a.model, len(train), port)


def cmd_importance(run: Run) -> None:
    a = run.args
    labeled, port = _select_port(read_features(run.read(a.features)), a.port, a.features)
    if not labeled.malicious.any() or labeled.malicious.all():
        raise CliError("bad-input", "importance needs both benign and malicious windows")
    if a.model:
        standardizer = ProfileModel.load(run.read(a.model)).standardizer
    else:
        base = read_features(run.read(a.train)) if a.train else labeled.take(~labeled.malicious)
        base, _ = _select_port(base, port, a.train or a.features)
        standardizer = fit_profile("kde-multi", base,
                                   port=port).standardizer
    rf = fit_rf_classifier(standardizer.transform(labeled.values), labeled.malicious,
                           a.n_trees, a.seed)
    weights = rf_feature_importance(rf)
    Path(a.output).write_text(weights.to_json(), encoding="utf-8")
    run.wrote(a.output)
    run.extra["oob_accuracy"] = float(rf.oob_score_)
    for name, value in weights.ranked()[:a.show]:
        print(f"{name}\t{value:.4f}")


def _load_models(paths, run: Run) -> dict[int, ProfileModel]:
    models = {}
    for path in paths:
        try:
            model = ProfileModel.load(run.read(path))
        except (ValueError, KeyError) as exc:
            raise CliError("schema", f"{path}: {exc}") from None
        if model.port in models:
            raise CliError("bad-input", f"two models given for port {model.port}")
        models[model.port] = model
    return models


def cmd_score(run: Run) -> None:
    a = run.args
    models = _load_models(a.model, run)
    run.read(a.features)
    with open(a.output, "w", encoding="utf-8") as out:
        for chunk in iter_features(a.features, a.chunk_size):
            for port in chunk.ports:
                if port not in models:
                    raise CliError("bad-input", f"no model for port {port}")
                fs = chunk.for_port(port)
                model = models[port]
                raw = model.suspicion(fs)
                ranked = model.ranking_score(fs)
                for i in range(len(fs)):
                    out.write(json.dumps({
                        "port": port, "window_index": int(fs.window_index[i]),
                        "window_start": float(fs.window_start[i]), "score": float(raw[i]),
                        "ranking_score": float(ranked[i]),
                        "label": "malicious" if fs.malicious[i] else "benign"}) + "\n")
    run.wrote(a.output)


def cmd_rank(run: Run) -> None:
    a = run.args
    models = _load_models(a.model, run)
    features = FeatureSet.concat([read_features(run.read(p)) for p in a.features])
    per_port = {}
    for port in features.ports:
        if port not in models:
            raise CliError("bad-input", f"no model for port {port}")
        per_port[port] = (models[port], features.for_port(port))
    if not per_port:
        raise CliError("bad-input", "no feature windows to rank")
    if len(per_port) == 1:
        model, fs = next(iter(per_port.values()))
        alerts = rank_port(model, fs, a.top_features)[:a.top_k]
    else:
        alerts = rank_global(per_port, a.top_k, a.top_features)
    write_alerts(a.output, alerts)
    run.wrote(a.output)
    if a.csv:
        write_alerts_csv(a.csv, alerts)
        run.wrote(a.csv)
    log.info("wrote %d alerts", len(alerts))


def _read_scores(path) -> LabeledScores:
    port, widx, score, mal = [], [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                port.append(row["port"])
                widx.append(row["window_index"])
                score.append(row["score"])
                mal.append(row["label"] == "malicious")
    return LabeledScores(port, widx, score, mal)


def cmd_eval(run: Run) -> None:
    a = run.args
    if not a.scores and not a.alerts:
        raise CliError("usage", "eval needs --scores and/or --alerts", 2)
    result: dict = {}
    if a.scores:
        curve = pr_curve(_read_scores(run.read(a.scores)))
        result["pr_auc"] = curve.auc
        result["pr_points"] = len(curve.recall)
        if a.curve:
            with open(a.curve, "w", encoding="utf-8") as fh:
                fh.write("threshold,recall,precision\n")
                for t, r, p in zip(curve.thresholds, curve.recall, curve.precision):
                    fh.write(f"{t!r},{r!r},{p!r}\n")
            run.wrote(a.curve)
    if a.alerts:
        if not a.features:
            raise CliError("usage", "top-k metrics need --features for the truth labels", 2)
        alerts = read_alerts(run.read(a.alerts))
        features = FeatureSet.concat([read_features(run.read(p)) for p in a.features])
        truth = {(int(p), int(w)): bool(m) for p, w, m in
                 zip(features.port, features.window_index, features.malicious)}
        missing = [(al.port, al.window_index) for al in alerts
                   if (al.port, al.window_index) not in truth]
        if missing:
            raise CliError("bad-input", f"alerts reference windows absent from the features, "
                                        f"e.g. {missing[0]}")
        k = a.k or len(alerts)
        top = topk_metrics(alerts, truth, k)
        result.update(k=k, precision_at_k=top.precision, fpr_at_k=top.fpr, fp_count=top.fp_count)
    text = json.dumps(result, indent=1, sort_keys=True)
    if a.output:
        Path(a.output).write_text(text + "\n", encoding="utf-8")
        run.wrote(a.output)
    print(text)


def cmd_sweep(run: Run) -> None:
    a = run.args
    data = {}
    if a.sweep_config:
        data = _load_json(run.read(a.sweep_config))
    overrides = dict(models=a.models, methods=a.methods, factors=a.factors, ports=a.ports,
                     seeds=a.seeds, attack_scale=a.attack_scale, train_days=a.train_days,
                     warmup_days=a.warmup_days, window_len=a.window_len,
                     profiles_path=a.profiles, n_estimators=a.n_trees, jobs=a.jobs)
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        config = SweepConfig.from_dict(data)
    except TypeError as exc:
        raise CliError("bad-input", f"invalid sweep config: {exc}") from None
    rows = evasion_sweep(config)
    Path(a.output).write_text(sweep_csv(rows), encoding="utf-8")
    run.wrote(a.output)
    if a.json:
        Path(a.json).write_text(sweep_json(rows, config), encoding="utf-8")
        run.wrote(a.json)
    run.extra["sweep_config"] = config.to_dict()
    invalid = sum(r.status != "ok" for r in rows)
    log.info("sweep wrote %d cells (%d invalid)", len(rows), invalid)


# --------------------------------------------------------------------------
# Parser


def _common(jobs: bool = False, seed: bool = True, output: bool = True,
            boundary: bool = False) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON file of option defaults (flags override it)")
    p.add_argument("--manifest", help="run manifest path (default: <output>.manifest.json; "
                                      "'-' disables)")
    p.add_argument("-v", "--verbose", action="store_true")
    if seed:
        p.add_argument("--seed", type=int, default=0)
    if jobs:
        p.add_argument("--jobs", type=int, default=1)
    if output:
        p.add_argument("-o", "--output", required=True)
    if boundary:
        p.add_argument("--internal", action="append", metavar="CIDR",
                       help="internal prefix (repeatable; default RFC 1918)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="portwatch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-benign", parents=[_common(boundary=True)],
                       help="generate benign background traffic as a labeled conn.log")
    p.add_argument("--ports", type=int, nargs="+", default=list(DEFAULT_PORTS))
    p.add_argument("--days", type=int, default=7)
    p.add_argument("--profiles", help="JSON file of benign traffic profiles")
    p.add_argument("--start", type=float, default=DEFAULT_START, help="epoch seconds of day 0")
    p.add_argument("--first-day", type=int, default=0)
    p.set_defaults(handler=cmd_synth_benign)

    p = sub.add_parser("synth-attack", parents=[_common(boundary=True)],
                       help="generate a scanning-malware trace")
    p.add_argument("--family", choices=sorted(set(FAMILIES) | {"custom"}), default="wannacry-like")
    p.add_argument("--spec", help="JSON attack spec; flags below override its fields")
    p.add_argument("--port", type=int)
    p.add_argument("--rate", type=float, help="probes per minute over all hosts")
    p.add_argument("--hosts", type=int, help="number of infected hosts")
    p.add_argument("--duration", type=float, help="minutes")
    p.add_argument("--success-fraction", type=float)
    p.add_argument("--scale", type=float, default=1.0, help="multiply the probe rate")
    p.add_argument("--start", type=float, default=DEFAULT_START)
    p.set_defaults(handler=cmd_synth_attack)

    p = sub.add_parser("evade", parents=[_common()], help="apply an evasion to an attack trace")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--method", choices=EVASION_METHODS, required=True)
    p.add_argument("--factor", type=int, required=True)
    p.add_argument("--history", help="IP history file (history evasion)")
    p.set_defaults(handler=cmd_evade)

    p = sub.add_parser("overlay", parents=[_common(boundary=True)],
                       help="merge an attack trace into benign traffic")
    p.add_argument("--benign", required=True)
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--attack", help="labeled attack trace to merge")
    source.add_argument("--ladder", type=int, metavar="PORT",
                        help="merge the 8-thread variant ladder on PORT (weight-training day)")
    p.add_argument("--ladder-scale", type=float, default=1.0, help="multiply every variant's rate")
    p.add_argument("--offset-minutes", type=int, help="default: random whole-minute offset")
    p.set_defaults(handler=cmd_overlay)

    p = sub.add_parser("extract", parents=[_common(seed=False, boundary=True)],
                       help="conn.log to per-port window features (JSON lines)")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--ports", type=int, nargs="+", default=list(DEFAULT_PORTS))
    p.add_argument("--window-len", type=float, default=60.0)
    p.add_argument("--start", type=float, help="grid origin (default: first record's window)")
    p.add_argument("--n-windows", type=int, help="fixed number of windows per port")
    p.add_argument("--history-in", help="directory of <port>.txt IP histories to start from")
    p.add_argument("--history-out", help="directory to write updated IP histories into")
    p.add_argument("--chunk-size", type=int, default=200_000)
    p.set_defaults(handler=cmd_extract)

    p = sub.add_parser("train", parents=[_common()], help="fit a per-port profile model")
    p.add_argument("--features", required=True)
    p.add_argument("--port", type=int)
    p.add_argument("--model", choices=MODEL_KINDS, default="ensemble-kde")
    p.add_argument("--weights", default="uniform", help="'uniform' or a weight JSON file")
    p.add_argument("--bandwidth", default="auto")
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--subsample", default="auto")
    p.add_argument("--target-fpr", type=float)
    p.add_argument("--exclude-malicious", action="store_true",
                   help="drop windows labeled malicious before fitting")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("importance", parents=[_common()],
                       help="Random Forest feature weights from a labeled day")
    p.add_argument("--features", required=True, help="labeled weight-training features")
    p.add_argument("--port", type=int)
    p.add_argument("--model", help="take the standardizer from this trained model")
    p.add_argument("--train", help="benign features to fit the standardizer on")
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--show", type=int, default=10, help="print this many top weights")
    p.set_defaults(handler=cmd_importance)

    p = sub.add_parser("score", parents=[_common(seed=False)], help="score feature windows")
    p.add_argument("--model", action="append", required=True, help="model file (repeatable)")
    p.add_argument("--features", required=True)
    p.add_argument("--chunk-size", type=int, default=10_000)
    p.set_defaults(handler=cmd_score)

    p = sub.add_parser("rank", parents=[_common(seed=False)], help="rank windows into alerts")
    p.add_argument("--model", action="append", required=True, help="model file (repeatable)")
    p.add_argument("--features", action="append", required=True, help="feature file (repeatable)")
    p.add_argument("--top-k", type=int, default=100)
    p.add_argument("--top-features", type=int, default=5)
    p.add_argument("--csv", help="also write a CSV summary here")
    p.set_defaults(handler=cmd_rank)

    p = sub.add_parser("eval", parents=[_common(seed=False, output=False)],
                       help="PR-AUC of scores and top-k metrics of alerts")
    p.add_argument("--scores")
    p.add_argument("--alerts")
    p.add_argument("--features", action="append", help="labeled features (truth for alerts)")
    p.add_argument("--k", type=int)
    p.add_argument("--curve", help="write the PR curve as CSV")
    p.add_argument("-o", "--output")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("sweep", parents=[_common(jobs=True, seed=False)],
                       help="evasion sweep: PR-AUC per model, method, factor, port and seed")
    p.add_argument("--sweep-config", help="JSON sweep configuration")
    p.add_argument("--models", nargs="+", choices=SWEEP_MODELS)
    p.add_argument("--methods", nargs="+", choices=EVASION_METHODS)
    p.add_argument("--factors", type=int, nargs="+", metavar=f"{{{','.join(map(str, FACTORS))}}}")
    p.add_argument("--ports", type=int, nargs="+")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--attack-scale", type=float)
    p.add_argument("--train-days", type=int)
    p.add_argument("--warmup-days", type=int)
    p.add_argument("--window-len", type=float)
    p.add_argument("--profiles")
    p.add_argument("--n-trees", type=int)
    p.add_argument("--json", help="also write the JSON result table here")
    p.set_defaults(handler=cmd_sweep, jobs=None)
    return parser


def _config_defaults(path, command: str, parser: argparse.ArgumentParser) -> dict:
    """Option defaults from a config file: top-level keys, then a per-command section."""
    data = _load_json(path)
    if not isinstance(data, dict):
        raise CliError("bad-input", f"{path}: config must be a JSON object")
    merged = {k: v for k, v in data.items() if not isinstance(v, dict)}
    section = data.get(command, {})
    if not isinstance(section, dict):
        raise CliError("bad-input", f"{path}: section {command!r} must be an object")
    merged.update(section)
    return {k.replace("-", "_"): v for k, v in merged.items()}


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    config_path = args.config or os.environ.get(CONFIG_ENV)
    if config_path:
        sub = _subparser(parser, args.command)
        defaults = _config_defaults(config_path, args.command, parser)
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(defaults) - known)
        if unknown:
            raise CliError("bad-input", f"{config_path}: unknown options for "
                                        f"{args.command}: {', '.join(unknown)}")
        # Config values replace built-in defaults; flags given on the command line still win.
        for action in sub._actions:
            if action.dest in defaults:
                action.required = False
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
        for action in sub._actions:
            if action.required and getattr(args, action.dest, None) is None:
                raise CliError("usage", f"missing required option {action.option_strings[0]}", 2)
        args.config = config_path
    return args


_shown_warnings: set = set()
_show_warning = warnings.showwarning


def _show_warning_once(message, category, filename, lineno, file=None, line=None):
    # Constant feature columns hit the bandwidth fallback on every fit; say so once.
    # A "once" filter is not enough: library code resets the warning registries.
    key = (category, str(message))
    if key not in _shown_warnings:
        _shown_warnings.add(key)
        _show_warning(message, category, filename, lineno, file, line)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    warnings.showwarning = _show_warning_once
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        run = Run(args.command, argv, args)
        args.handler(run)
        run.write_manifest()
    except CliError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return exc.status
    except ConnLogFormatError as exc:
        print(f"error: bad-log: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: missing-file: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(f"error: bad-input: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
