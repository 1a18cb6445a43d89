import csv
import io
import json
import math

import pytest

from portwatch import experiment
from portwatch.experiment import SweepConfig, evasion_sweep, mean_auc, sweep_csv, sweep_json
from portwatch.lab import AttackTrace
from portwatch.zeek import ConnTable


def small_config(**overrides):
    params = dict(models=("threshold", "kde_multi", "ensemble_mean", "ensemble_weighted"),
                  methods=("rate", "history"), factors=(1, 4), ports=(445,), seeds=(0,),
                  train_days=1, warmup_days=1, n_estimators=10)
    params.update(overrides)
    return SweepConfig(**params)


@pytest.fixture(scope="module")
def rows():
    return evasion_sweep(small_config())


def test_one_row_per_cell(rows):
    assert len(rows) == 4 * 2 * 2
    assert {(r.model, r.method, r.factor) for r in rows} == {
        (m, meth, f) for m in small_config().models for meth in ("rate", "history") for f in (1, 4)}
    assert all(r.status == "ok" and 0 <= r.pr_auc <= 1 for r in rows)


def test_sweep_is_reproducible(rows):
    assert evasion_sweep(small_config()) == rows


def test_original_rate_is_easy_on_quiet_port(rows):
    assert mean_auc(rows, "kde_multi", "rate", 1) >= 0.9


def test_outputs(rows):
    table = list(csv.reader(io.StringIO(sweep_csv(rows))))
    assert table[0] == ["model", "method", "factor", "port", "seed", "pr_auc"]
    assert len(table) == len(rows) + 1
    doc = json.loads(sweep_json(rows, small_config()))
    assert doc["config"]["ports"] == [445] and len(doc["rows"]) == len(rows)
    assert SweepConfig.from_dict(doc["config"]) == small_config()


def test_invalid_cell_is_marked_and_sweep_continues(monkeypatch):
    real = experiment.evaded_trace

    def fake(spec, method, factor, history, boundary, start=experiment.DEFAULT_START):
        trace = real(spec, method, factor, history, boundary, start)
        if factor == 4:
            return AttackTrace(ConnTable.empty(), trace.spec, trace.hosts)
        return trace

    monkeypatch.setattr(experiment, "evaded_trace", fake)
    out = evasion_sweep(small_config(methods=("rate",), models=("threshold", "kde_multi")))
    bad = [r for r in out if r.factor == 4]
    good = [r for r in out if r.factor == 1]
    assert bad and all(r.status.startswith("invalid") and math.isnan(r.pr_auc) for r in bad)
    assert good and all(r.status == "ok" for r in good)
    assert math.isnan(mean_auc(out, "kde_multi", "rate", 4))
    assert "nan" in sweep_csv(out)


@pytest.mark.parametrize("bad", [dict(models=("svm",)), dict(methods=("slow",)),
                                 dict(factors=(0,)), dict(train_days=0), dict(warmup_days=-1),
                                 dict(attack_scale=0.0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        small_config(**bad)
