import csv
import json
from dataclasses import replace

import pytest

from helpers import path
from pumpgrad.cli import main
from pumpgrad.ingest import write_events

DAY = 86400.0


def run(*argv):
    return main([str(a) for a in argv])


def error_of(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"]


def write_log(p, events, fmt="jsonl"):
    with open(p, "w", encoding="utf-8", newline="") as fh:
        write_events(events, fh, fmt)
    return p


@pytest.fixture
def three_tokens(tmp_path):
    events = (path("A", [60], t0=0) + path("B", [55, 45], t0=10)
              + path("C", [80, 115], t0=20, bots=[1, 0]))
    return write_log(tmp_path / "three.jsonl", events)


@pytest.fixture
def synth_log(tmp_path):
    out = tmp_path / "market.jsonl"
    assert run("synth", "--n-tokens", 400, "--seed", 5, "--out", out) == 0
    return out


def read_csv(p):
    with open(p, newline="") as fh:
        return list(csv.reader(fh))


def test_estimate_three_token_fixture(tmp_path, three_tokens):
    out = tmp_path / "curve.csv"
    assert run("estimate", "--input", three_tokens, "--grid", "50:70:10", "--out", out) == 0
    rows = read_csv(out)
    assert rows[0] == ["level", "n_eligible", "n_graduated", "p", "condition"]
    assert rows[1:] == [["50", "3", "1", "0.333333333333", "none"],
                        ["60", "1", "1", "1", "none"],
                        ["70", "1", "1", "1", "none"]]
    manifest = json.loads((tmp_path / "curve.csv.manifest.json").read_text())
    assert manifest["command"] == "estimate"
    assert {o["path"] for o in manifest["outputs"]} == {"curve.csv", "curve.csv.json"}
    assert json.loads((tmp_path / "curve.csv.json").read_text())["manifest"] == \
        "curve.csv.manifest.json"


def test_estimate_null_marker_and_csv_input(tmp_path):
    log = write_log(tmp_path / "one.csv", path("A", [40]), "csv")
    out = tmp_path / "c.csv"
    assert run("estimate", "--input", log, "--grid", "50:50:1", "--out", out) == 0
    assert read_csv(out)[1] == ["50", "0", "0", "null", "none"]


def test_overlapping_windows_rejected(tmp_path, synth_log, capsys):
    code = run("estimate", "--input", synth_log,
               "--condition", "topwallets=10,window=2025-09-01T00:00:00Z/2025-09-20T00:00:00Z",
               "--window", "2025-09-15T00:00:00Z/2025-09-29T00:00:00Z",
               "--out", tmp_path / "x.csv")
    assert code == 4
    err = error_of(capsys)
    assert err["type"] == "causality"
    assert not (tmp_path / "x.csv").exists()


def test_predictive_condition_needs_evaluation_window(tmp_path, synth_log, capsys):
    code = run("estimate", "--input", synth_log, "--condition",
               "topcreators=5,window=2025-09-01T00:00:00Z/2025-09-15T00:00:00Z",
               "--out", tmp_path / "x.csv")
    assert code == 4 and error_of(capsys)["type"] == "causality"


def test_two_week_preset(tmp_path, synth_log):
    out = tmp_path / "tw.csv"
    assert run("estimate", "--input", synth_log, "--condition", "topwallets=50,window=two-week",
               "--out", out) == 0
    meta = json.loads((tmp_path / "tw.csv.json").read_text())
    assert meta["w1"] == "2025-09-01T00:00:00Z/2025-09-15T00:00:00Z"
    assert meta["evaluation_window"] == "2025-09-15T00:00:00Z/2025-09-29T00:00:00Z"
    assert read_csv(out)[1][4] == "topwallets=50"


@pytest.mark.parametrize("spec", ["bogus", "nonbot=abc", "maxtrades=5,foo=1", "topwallets=3",
                                  "nonbot=1.5"])
def test_bad_condition_specs(tmp_path, three_tokens, capsys, spec):
    code = run("estimate", "--input", three_tokens, "--condition", spec, "--out", tmp_path / "x")
    assert code != 0
    assert "message" in error_of(capsys)


def test_condition_grammar_accepted(tmp_path, three_tokens):
    for spec in ["none", "mintime=120", "nonbot=0.3", "maxtrades=20", "maxtrades=20,min=2",
                 "maxtrades=inf,min=1"]:
        assert run("estimate", "--input", three_tokens, "--condition", spec,
                   "--out", tmp_path / "ok.csv") == 0


def test_missing_input_and_parse_error(tmp_path, capsys):
    assert run("validate", "--input", tmp_path / "nope.jsonl", "--out", tmp_path / "v.json") == 3
    assert error_of(capsys)["type"] == "input"
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"tx_type": "mint"}\n')
    assert run("validate", "--input", bad, "--out", tmp_path / "v.json") == 3
    assert error_of(capsys)["type"] == "parse"


def test_usage_errors_are_json(capsys):
    assert run("estimate") == 2
    assert error_of(capsys)["type"] == "usage"


def test_validate_reports(tmp_path, synth_log):
    out = tmp_path / "v.json"
    assert run("validate", "--input", synth_log, "--out", out) == 0
    rep = json.loads(out.read_text())
    assert rep["ok"] and rep["n_violations"] == 0 and rep["n_tokens"] == 400


def test_validate_flags_perturbed_log(tmp_path, capsys):
    from pumpgrad.synth import SynthConfig, generate_market
    events = generate_market(SynthConfig(n_tokens=3, seed=2))
    events[5] = replace(events[5], v_tok=events[5].v_tok + 10**12)
    log = write_log(tmp_path / "p.jsonl", events)
    lines = log.read_text().splitlines()
    log.write_text("\n".join(lines[:2] + ["{oops"] + lines[2:]) + "\n")
    out = tmp_path / "v.json"
    assert run("validate", "--input", log, "--lenient", "--out", out) == 0
    rep = json.loads(out.read_text())
    assert rep["n_parse_errors"] == 1 and rep["parse_errors"][0]["line"] == 3
    assert rep["violations_by_kind"]["invariant"] == 1 and not rep["ok"]


def test_breakeven_and_backtest(tmp_path, three_tokens):
    be = tmp_path / "be.csv"
    assert run("breakeven", "--grid", "57.5:115:57.5", "--out", be) == 0
    assert read_csv(be) == [["level", "p_breakeven"], ["57.5", "0.25"], ["115", "1"]]
    bt = tmp_path / "bt.csv"
    assert run("backtest", "--input", three_tokens, "--entry-level", 57.5, "--out", bt) == 0
    rows = read_csv(bt)
    assert [r[0] for r in rows[1:]] == ["A", "C"]
    summary = json.loads((tmp_path / "bt.csv.json").read_text())
    assert summary["mean_return"] == pytest.approx(1.0)
    assert summary["expected_return_at_p_hat"] == pytest.approx(summary["mean_return"])


def test_backtest_rejects_threshold_entry(tmp_path, three_tokens, capsys):
    assert run("backtest", "--input", three_tokens, "--entry-level", 115,
               "--out", tmp_path / "bt.csv") != 0
    assert error_of(capsys)["type"] == "argument"


def test_dump_scan_with_config(tmp_path, synth_log, capsys):
    cfg = tmp_path / "det.ini"
    cfg.write_text("[dump]\nsigma_multiplier = 5\nbaseline_max = 150\nmerge_runs = false\n")
    out = tmp_path / "ep.csv"
    assert run("dump-scan", "--input", synth_log, "--config", cfg, "--out", out) == 0
    summary = json.loads((tmp_path / "ep.csv.summary.json").read_text())
    assert summary["detector"]["sigma_multiplier"] == 5.0
    assert summary["detector"]["merge_runs"] is False
    rows = read_csv(out)
    assert rows[0] == ["mint", "trigger_index", "trigger_return", "drop_pct",
                       "v_sol_at_trigger", "class", "n_sellers"]
    assert len(rows) - 1 == sum(summary["classes"][c]["n_episodes"]
                                for c in ("one_wallet", "multi_wallet"))
    cfg.write_text("[dump]\nsigma = 5\n")
    assert run("dump-scan", "--input", synth_log, "--config", cfg, "--out", out) == 2
    assert error_of(capsys)["type"] == "config"


def test_synth_config_file_and_data_dir(tmp_path, monkeypatch):
    data = tmp_path / "data"
    data.mkdir()
    (data / "synth.ini").write_text("[synth]\nn_tokens = 12\ntarget_grad_rate = 0.5\n")
    monkeypatch.setenv("PUMPGRAD_DATA_DIR", str(data))
    monkeypatch.chdir(tmp_path)
    assert run("synth", "--config", "synth.ini", "--seed", 1, "--out", "gen.jsonl") == 0
    manifest = json.loads((tmp_path / "gen.jsonl.manifest.json").read_text())
    assert manifest["seed"] == 1 and manifest["generator"]["config"]["n_tokens"] == 12
    assert manifest["generator"]["prng"] == "numpy.random.PCG64"
    (data / "gen2.jsonl").write_bytes((tmp_path / "gen.jsonl").read_bytes())
    assert run("validate", "--input", "gen2.jsonl", "--out", "v.json") == 0


def test_report_merges_curves(tmp_path, synth_log):
    names = []
    for i, spec in enumerate(["none", "nonbot=0.3", "nonbot=0.7"]):
        out = tmp_path / f"c{i}.csv"
        assert run("estimate", "--input", synth_log, "--condition", spec, "--out", out) == 0
        names.append(out)
    rep = tmp_path / "report.csv"
    assert run("report", *names, "--out", rep) == 0
    rows = read_csv(rep)
    assert rows[0] == ["level", "none", "nonbot=0.3", "nonbot=0.7", "breakeven"]
    assert len(rows) == 1 + 85
    curves = [{r[0]: r[3] for r in read_csv(n)[1:]} for n in names]
    for r in rows[1:]:
        assert r[1:4] == [c[r[0]] for c in curves]
        assert float(r[4]) == pytest.approx(float(r[0]) ** 2 / 115 ** 2, rel=1e-11)
    assert rows[-1][0] == "115" and rows[-1][4] == "1"


def _snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


def test_every_command_is_deterministic(tmp_path, monkeypatch):
    snaps = []
    for attempt in range(2):
        d = tmp_path / f"run{attempt}"
        d.mkdir()
        monkeypatch.chdir(d)
        assert run("synth", "--n-tokens", 150, "--seed", 8, "--out", "m.jsonl") == 0
        assert run("validate", "--input", "m.jsonl", "--out", "v.json") == 0
        assert run("estimate", "--input", "m.jsonl", "--condition", "nonbot=0.5",
                   "--out", "c.csv") == 0
        assert run("breakeven", "--out", "b.csv") == 0
        assert run("backtest", "--input", "m.jsonl", "--entry-level", 50, "--out", "bt.csv") == 0
        assert run("dump-scan", "--input", "m.jsonl", "--out", "d.csv") == 0
        assert run("report", "c.csv", "--out", "r.csv") == 0
        snaps.append(_snapshot(d))
    assert snaps[0].keys() == snaps[1].keys() and len(snaps[0]) >= 15
    assert snaps[0] == snaps[1]
