import json
import re

import numpy as np
import pytest

from portwatch.cli import main
from portwatch.features import read_features
from portwatch.lab import DEFAULT_START, gen_attack, variant_ladder
from portwatch.model import ProfileModel
from portwatch.ranking import read_alerts
from portwatch.zeek import read_conn_log_file

DAY1 = DEFAULT_START + 86_400
ERROR_LINE = re.compile(r"^error: [a-z-]+: .+$")


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    paths = {name: d / name for name in
             ("train.log", "day.log", "attack.log", "mixed.log", "train.jsonl", "test.jsonl",
              "model.json", "alerts.jsonl", "alerts.csv", "scores.jsonl", "hist")}
    assert run("synth-benign", "--ports", 445, "--days", 1, "--seed", 1,
               "-o", paths["train.log"]) == 0
    assert run("synth-benign", "--ports", 445, "--days", 1, "--first-day", 1, "--seed", 1,
               "-o", paths["day.log"]) == 0
    assert run("synth-attack", "--scale", 0.01, "--seed", 3, "--start", DAY1,
               "-o", paths["attack.log"]) == 0
    assert run("overlay", "--benign", paths["day.log"], "--attack", paths["attack.log"],
               "--seed", 4, "-o", paths["mixed.log"]) == 0
    assert run("extract", "-i", paths["train.log"], "--ports", 445, "--start", DEFAULT_START,
               "--n-windows", 1440, "--history-out", paths["hist"],
               "-o", paths["train.jsonl"]) == 0
    assert run("extract", "-i", paths["mixed.log"], "--ports", 445, "--start", DAY1,
               "--n-windows", 1440, "--history-in", paths["hist"],
               "-o", paths["test.jsonl"]) == 0
    assert run("train", "--features", paths["train.jsonl"], "--model", "ensemble-kde",
               "--weights", "uniform", "-o", paths["model.json"]) == 0
    assert run("rank", "--model", paths["model.json"], "--features", paths["test.jsonl"],
               "--top-k", 100, "--csv", paths["alerts.csv"], "-o", paths["alerts.jsonl"]) == 0
    assert run("score", "--model", paths["model.json"], "--features", paths["test.jsonl"],
               "-o", paths["scores.jsonl"]) == 0
    return paths


def test_pipeline_produces_100_line_alert_file(pipeline):
    lines = pipeline["alerts.jsonl"].read_text().splitlines()
    assert len(lines) == 100
    alerts = read_alerts(pipeline["alerts.jsonl"])
    assert [a.rank for a in alerts] == list(range(1, 101))
    assert len(pipeline["alerts.csv"].read_text().splitlines()) == 101


def test_pipeline_artifacts(pipeline):
    mixed = read_conn_log_file(pipeline["mixed.log"])
    attack = read_conn_log_file(pipeline["attack.log"])
    assert mixed.malicious.sum() == len(attack) and attack.malicious.all()
    test = read_features(pipeline["test.jsonl"])
    assert len(test) == 1440 and test.malicious.any()
    assert (pipeline["hist"] / "445.txt").is_file()
    model = ProfileModel.load(pipeline["model.json"])
    assert model.port == 445 and model.kind == "ensemble-kde"
    rows = [json.loads(x) for x in pipeline["scores.jsonl"].read_text().splitlines()]
    assert len(rows) == 1440 and {"score", "ranking_score", "label"} <= set(rows[0])


def test_manifest_records_effective_config(pipeline):
    doc = json.loads((pipeline["alerts.jsonl"].parent / "alerts.jsonl.manifest.json").read_text())
    assert doc["command"] == "rank" and doc["config"]["top_k"] == 100
    assert str(pipeline["model.json"]) in doc["inputs"]
    assert str(pipeline["alerts.jsonl"]) in doc["outputs"]
    assert {"numpy", "scipy", "scikit-learn", "portwatch"} <= set(doc["versions"])
    attack = json.loads((pipeline["attack.log"].parent / "attack.log.manifest.json").read_text())
    assert attack["seed"] == 3


def test_eval_reports_metrics(pipeline, capsys):
    out = pipeline["alerts.jsonl"].parent / "eval.json"
    assert run("eval", "--scores", pipeline["scores.jsonl"], "--alerts", pipeline["alerts.jsonl"],
               "--features", pipeline["test.jsonl"], "--k", 50, "-o", out) == 0
    doc = json.loads(out.read_text())
    assert 0 <= doc["pr_auc"] <= 1 and doc["k"] == 50
    assert doc["fp_count"] == round(50 * (1 - doc["precision_at_k"]))
    assert json.loads(capsys.readouterr().out) == doc


def test_wannacry_defaults(tmp_path):
    out = tmp_path / "wc.log"
    assert run("synth-attack", "--family", "wannacry-like", "-o", out) == 0
    spec = json.loads((tmp_path / "wc.log.manifest.json").read_text())["attack_spec"]
    assert (spec["scan_port"], spec["scan_rate"], spec["n_infected"], spec["duration"]) == \
        (445, 14_000, 48, 116)
    t = read_conn_log_file(out)
    assert np.all(t.dest_p == 445) and len(np.unique(t.orig_h)) == 48
    assert len(t) == pytest.approx(14_000 * 116, rel=0.01)


def test_subcommands_are_idempotent(tmp_path):
    # Two runs with identical inputs and seeds give identical bytes.
    for tag in ("a", "b"):
        d = tmp_path / tag
        d.mkdir()
        assert run("synth-benign", "--ports", 22, "--days", 1, "-o", d / "b.log") == 0
        assert run("synth-attack", "--family", "mirai-like", "--scale", 0.001,
                   "-o", d / "a.log") == 0
        assert run("evade", "-i", d / "a.log", "--method", "rate", "--factor", 4,
                   "-o", d / "e.log") == 0
        assert run("overlay", "--benign", d / "b.log", "--attack", d / "a.log",
                   "-o", d / "m.log") == 0
        assert run("extract", "-i", d / "m.log", "--ports", 22, 23, "-o", d / "f.jsonl") == 0
        assert run("train", "--features", d / "f.jsonl", "--port", 22, "--model", "iforest",
                   "--n-trees", 10, "-o", d / "model.json") == 0
    for name in ("b.log", "a.log", "e.log", "m.log", "f.jsonl", "model.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
        ma = json.loads((tmp_path / "a" / f"{name}.manifest.json").read_text())
        mb = json.loads((tmp_path / "b" / f"{name}.manifest.json").read_text())
        assert sorted(ma["outputs"].values()) == sorted(mb["outputs"].values())
        assert sorted(ma["inputs"].values()) == sorted(mb["inputs"].values())
        assert ma["config"].keys() == mb["config"].keys() and ma["seed"] == mb["seed"]


def test_inputs_are_not_mutated(pipeline, tmp_path):
    inputs = [pipeline[k] for k in ("mixed.log", "test.jsonl", "model.json", "attack.log")]
    before = [p.read_bytes() for p in inputs]
    assert run("extract", "-i", pipeline["mixed.log"], "--ports", 445,
               "-o", tmp_path / "f.jsonl") == 0
    assert run("rank", "--model", pipeline["model.json"], "--features", pipeline["test.jsonl"],
               "-o", tmp_path / "r.jsonl") == 0
    assert run("evade", "-i", pipeline["attack.log"], "--method", "rate", "--factor", 2,
               "-o", tmp_path / "e.log") == 0
    assert [p.read_bytes() for p in inputs] == before


def test_config_precedence(tmp_path, monkeypatch):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"seed": 7, "synth-attack": {"scale": 0.001, "hosts": 3}}))
    # Config file over built-in defaults.
    assert run("synth-attack", "--config", config, "-o", tmp_path / "a.log") == 0
    doc = json.loads((tmp_path / "a.log.manifest.json").read_text())
    assert doc["seed"] == 7 and doc["attack_spec"]["n_infected"] == 3
    assert doc["config"]["scale"] == 0.001
    # Flags over the config file.
    assert run("synth-attack", "--config", config, "--hosts", 5, "--seed", 1,
               "-o", tmp_path / "b.log") == 0
    doc = json.loads((tmp_path / "b.log.manifest.json").read_text())
    assert doc["seed"] == 1 and doc["attack_spec"]["n_infected"] == 5
    # The environment variable names a default config path.
    monkeypatch.setenv("PORTWATCH_CONFIG", str(config))
    assert run("synth-attack", "-o", tmp_path / "c.log") == 0
    doc = json.loads((tmp_path / "c.log.manifest.json").read_text())
    assert doc["seed"] == 7 and doc["config"]["config"] == str(config)
    # Without any config the defaults apply.
    monkeypatch.delenv("PORTWATCH_CONFIG")
    assert run("synth-attack", "--scale", 0.001, "-o", tmp_path / "d.log") == 0
    doc = json.loads((tmp_path / "d.log.manifest.json").read_text())
    assert doc["seed"] == 0 and doc["attack_spec"]["n_infected"] == 48


def test_manifest_can_be_redirected_or_disabled(tmp_path):
    assert run("synth-attack", "--scale", 0.001, "--manifest", tmp_path / "m.json",
               "-o", tmp_path / "a.log") == 0
    assert (tmp_path / "m.json").is_file() and not (tmp_path / "a.log.manifest.json").exists()
    assert run("synth-attack", "--scale", 0.001, "--manifest", "-", "-o", tmp_path / "b.log") == 0
    assert not (tmp_path / "b.log.manifest.json").exists()


@pytest.mark.parametrize("argv, code, status", [
    (["frobnicate"], "usage", 2),
    (["train", "--bogus"], "usage", 2),
    (["train", "--features", "/nonexistent.jsonl", "-o", "x"], "missing-file", 1),
    (["rank", "--model", "/nonexistent.json", "--features", "/x", "-o", "x"], "missing-file", 1),
    (["train", "--features", "{f}", "--bandwidth", "-1", "-o", "{d}/m"], "usage", 2),
    (["synth-benign", "--ports", 99, "-o", "{d}/b.log"], "bad-input", 1),
    (["synth-attack", "--config", "{bad}", "-o", "{d}/a.log"], "bad-input", 1),
    (["extract", "-i", "{garbage}", "-o", "{d}/f.jsonl"], "bad-log", 1),
    (["evade", "-i", "{attack}", "--method", "history", "--factor", 2, "-o", "{d}/e"],
     "usage", 2),
    (["eval", "-o", "{d}/e.json"], "usage", 2),
    (["overlay", "--benign", "{d}/b.log", "-o", "{d}/m.log"], "usage", 2),
    (["overlay", "--benign", "{d}/b.log", "--attack", "{attack}", "--ladder", 22, "-o", "{d}/m"],
     "usage", 2),
    (["train", "--features", "{f}", "--weights", "{bad}", "-o", "{d}/m"], "schema", 1),
])
def test_errors_are_one_machine_parseable_line(tmp_path, capsys, argv, code, status):
    feats = tmp_path / "f.jsonl"
    run("synth-benign", "--ports", 22, "--days", 1, "--manifest", "-", "-o", tmp_path / "b.log")
    run("extract", "-i", tmp_path / "b.log", "--ports", 22, "--manifest", "-", "-o", feats)
    run("synth-attack", "--scale", 0.0001, "--manifest", "-", "-o", tmp_path / "a.log")
    (tmp_path / "bad.json").write_text("{not json")
    (tmp_path / "garbage.log").write_text("#fields\tnonsense\n1\n")
    subst = dict(f=feats, d=tmp_path, bad=tmp_path / "bad.json", attack=tmp_path / "a.log",
                 garbage=tmp_path / "garbage.log")
    capsys.readouterr()
    argv = [str(a).format(**subst) for a in argv]
    assert run(*argv) == status
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and ERROR_LINE.match(err[0]), err
    assert err[0].startswith(f"error: {code}:")


def test_schema_mismatch_is_rejected(pipeline, tmp_path, capsys):
    doc = json.loads(pipeline["model.json"].read_text())
    doc["schema"] = "portwatch-model/999"
    stale = tmp_path / "stale.json"
    stale.write_text(json.dumps(doc))
    assert run("rank", "--model", stale, "--features", pipeline["test.jsonl"],
               "-o", tmp_path / "r.jsonl") == 1
    assert "schema" in capsys.readouterr().err


def test_importance_writes_weight_vector(tmp_path, capsys):
    assert run("synth-benign", "--ports", 445, "--days", 1, "-o", tmp_path / "b.log") == 0
    assert run("overlay", "--benign", tmp_path / "b.log", "--ladder", 445, "--ladder-scale", 0.1,
               "-o", tmp_path / "m.log") == 0
    merged = read_conn_log_file(tmp_path / "m.log")
    ladder = variant_ladder(445, seed=0, rate_scale=0.1)
    assert merged.malicious.sum() == sum(len(gen_attack(spec)) for spec in ladder)
    assert run("extract", "-i", tmp_path / "m.log", "--ports", 445, "-o", tmp_path / "f.jsonl") == 0
    capsys.readouterr()
    assert run("importance", "--features", tmp_path / "f.jsonl", "--n-trees", 20, "--show", 3,
               "-o", tmp_path / "w.json") == 0
    assert len(capsys.readouterr().out.splitlines()) == 3
    w = json.loads((tmp_path / "w.json").read_text())
    assert run("train", "--features", tmp_path / "f.jsonl", "--exclude-malicious",
               "--weights", tmp_path / "w.json", "-o", tmp_path / "model.json") == 0
    assert w


def test_sweep_command_writes_table(tmp_path):
    out = tmp_path / "sweep.csv"
    assert run("sweep", "--models", "threshold", "kde_multi", "--methods", "rate",
               "--factors", 1, 2, "--ports", 445, "--seeds", 0, "--train-days", 1,
               "--warmup-days", 1, "--json", tmp_path / "sweep.json", "-o", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "model,method,factor,port,seed,pr_auc" and len(lines) == 5
    assert len(json.loads((tmp_path / "sweep.json").read_text())["rows"]) == 4
