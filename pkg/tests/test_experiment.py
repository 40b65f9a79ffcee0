import csv
import json

import numpy as np
import pytest

from pufsim.config import parse_config
from pufsim.experiment import (
    COSTS_HEADER,
    ROUNDS_HEADER,
    ExperimentReport,
    build_dataset,
    emit_reports,
    load_report,
    make_arch,
    make_hyper,
    run_experiment,
    run_seed,
)
from pufsim.engine import train
from pufsim.metrics import METRIC_KEYS
from pufsim.unlearn import UnlearnRequest, apply_strategy, sample_scope_filter


def test_natural_strategy_is_a_no_op(tiny_config):
    cfg = parse_config(tiny_config)
    fd = build_dataset(cfg, 0)
    w, _ = train(fd, make_arch(cfg, fd), cfg.rounds, make_hyper(cfg), seed=0)
    req = UnlearnRequest({1}, "natural")
    assert apply_strategy(req, w, sample_scope_filter(req, fd), make_hyper(cfg), 0, cfg.rounds) == w
    tiny_config["unlearn"]["strategy"] = "natural"
    run = run_seed(parse_config(tiny_config), 0)
    for k in ("test_acc", "forget_acc", "mia_song"):
        assert run.curve[0][k] == run.metrics["original"][k]


def test_retrain_strategy_has_zero_deltas(tiny_config):
    tiny_config["unlearn"]["strategy"] = "retrain"
    run = run_seed(parse_config(tiny_config), 0)
    assert run.recovery_rounds == 0
    assert all(run.deltas[k] == 0 for k in METRIC_KEYS)


def test_seeds_are_independent_and_deterministic(tiny_config):
    cfg = parse_config(tiny_config)
    rep = run_experiment(cfg)
    assert [r.seed for r in rep.runs] == [0, 1]
    assert all(r.status == "ok" for r in rep.runs)
    again = run_seed(cfg, 1)
    assert again.metrics == rep.runs[1].metrics
    single = run_experiment(parse_config({**tiny_config, "seeds": [1]}))
    assert single.runs[0].metrics == rep.runs[1].metrics


@pytest.mark.parametrize("strategy", ["puf_regular", "not", "pga"])
def test_every_strategy_runs(tiny_config, strategy):
    tiny_config["unlearn"]["strategy"] = strategy
    tiny_config["seeds"] = [0]
    rep = run_experiment(parse_config(tiny_config))
    assert rep.runs[0].status == "ok", rep.runs[0].error
    assert set(rep.costs["methods"]) == {"retrain", strategy}


def test_sample_scope_runs(tiny_config):
    tiny_config["unlearn"].update(scope="sample", fraction=0.5)
    tiny_config["seeds"] = [0]
    rep = run_experiment(parse_config(tiny_config))
    assert rep.runs[0].status == "ok", rep.runs[0].error


def test_failing_seed_is_recorded(tiny_config, monkeypatch):
    import pufsim.experiment as ex

    real = ex.run_seed

    def flaky(cfg, seed, n_jobs=1):
        if seed == 0:
            raise RuntimeError("boom")
        return real(cfg, seed, n_jobs)

    monkeypatch.setattr(ex, "run_seed", flaky)
    rep = ex.run_experiment(parse_config(tiny_config))
    assert rep.runs[0].status == "error" and "boom" in rep.runs[0].error
    assert rep.runs[1].status == "ok"
    assert rep.summary["seeds_failed"] == 1


def test_emit_reports(tiny_config, tmp_path):
    rep = run_experiment(parse_config(tiny_config))
    emit_reports(rep, tmp_path / "a")
    emit_reports(rep, tmp_path / "b")
    for name in ("summary.json", "rounds.csv", "costs.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    with open(tmp_path / "a" / "rounds.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ROUNDS_HEADER
    assert {len(r) for r in rows} == {len(ROUNDS_HEADER)}
    with open(tmp_path / "a" / "costs.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == COSTS_HEADER
    assert {len(r) for r in rows} == {len(COSTS_HEADER)}

    assert load_report(tmp_path / "a" / "summary.json") == rep


def test_report_is_self_contained(tiny_config):
    rep = run_experiment(parse_config(tiny_config))
    data = json.loads(rep.dumps())
    assert parse_config(data["config"]) == parse_config(tiny_config)
    assert data["seeds"] == [0, 1] and data["version"]
    assert ExperimentReport.from_dict(data) == rep


def test_emit_to_unwritable_path(tiny_config, tmp_path):
    rep = run_experiment(parse_config({**tiny_config, "seeds": [0]}))
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError) as err:
        emit_reports(rep, blocker / "sub")
    assert str(blocker) in str(err.value)


def test_recovery_reaches_retrain_accuracy_or_caps(tiny_config):
    rep = run_experiment(parse_config(tiny_config))
    for run in rep.runs:
        accs = [p["test_acc"] for p in run.curve]
        if run.capped:
            assert run.recovery_rounds == 3 and max(accs) < run.retrain_test_acc
        else:
            assert accs[-1] >= run.retrain_test_acc
            assert all(a < run.retrain_test_acc for a in accs[:-1])
