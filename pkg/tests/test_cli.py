"""Command line harness: subcommands, CSV contracts, exit codes."""

import os

import pytest

from microcast import acceptance, scenarios
from microcast.cli import main


def run_cli(*argv) -> int:
    return main(list(argv))


def scenario_file(tmp_path, text=None):
    path = tmp_path / "tiny.yaml"
    path.write_text(text or """
protocol: microcast
file_mb: 0.01
devices:
  - cellular_kbps: 2000
  - {}
local: {capacity_mbps: 10}
segment_params: {m: 5, n: 200}
""", encoding="utf-8")
    return str(path)


# ------------------------------------------------------------------ num-sim


def test_num_sim_rows_and_aggregate(tmp_path):
    out = str(tmp_path)
    code = run_cli("num-sim", "--policy", "unicast", "--n-devices", "1,2",
                   "--p-local", "0.1", "--iterations", "100",
                   "--seeds", "2", "--out", out)
    assert code == 0
    comments, columns, rows = scenarios.read_csv(os.path.join(out, "num-sim.csv"))
    assert columns == scenarios.NUM_COLUMNS
    assert len(rows) == 2 * 2   # device counts x seeds
    assert any("step_size" in c for c in comments)
    _, agg_cols, agg = scenarios.read_csv(os.path.join(out, "num-sim_agg.csv"))
    assert agg_cols[:3] == ["policy", "n_devices", "p_local"]
    assert len(agg) == 2 and agg[0]["runs"] == "2"


def test_num_sim_empty_sweep_writes_header_only(tmp_path):
    out = str(tmp_path)
    assert run_cli("num-sim", "--n-devices", "", "--out", out) == 0
    _, columns, rows = scenarios.read_csv(os.path.join(out, "num-sim.csv"))
    assert columns == scenarios.NUM_COLUMNS and rows == []


def test_num_sim_rejects_garbled_list(tmp_path, capsys):
    code = run_cli("num-sim", "--n-devices", "1;2", "--out", str(tmp_path))
    assert code == 2
    assert "comma-separated" in capsys.readouterr().err


def test_num_sim_deterministic(tmp_path):
    args = ("num-sim", "--policy", "pseudo_broadcast", "--n-devices", "3",
            "--p-local", "0.2", "--iterations", "150", "--seeds", "2")
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert run_cli(*args, "--out", a) == 0
    assert run_cli(*args, "--out", b) == 0
    for name in ("num-sim.csv", "num-sim_agg.csv"):
        with open(os.path.join(a, name), "rb") as fa, \
             open(os.path.join(b, name), "rb") as fb:
            assert fa.read() == fb.read()


# ---------------------------------------------------------------- proto-sim


def test_proto_sim_writes_rows_and_events(tmp_path):
    scen = scenario_file(tmp_path)
    out = str(tmp_path / "res")
    assert run_cli("proto-sim", scen, "--event-log", "--out", out) == 0
    _, columns, rows = scenarios.read_csv(os.path.join(out, "tiny.csv"))
    assert columns[:4] == ["protocol", "seed", "complete", "duration_s"]
    assert len(rows) == 1 and rows[0]["complete"] == "1"
    _, ev_cols, events = scenarios.read_csv(os.path.join(out, "tiny_events.csv"))
    assert ev_cols == ["t", "device", "event_kind", "segment", "bytes"]
    kinds = {e["event_kind"] for e in events}
    assert "cell_done" in kinds and any(k.startswith("tx.") for k in kinds)


def test_proto_sim_multi_seed_rows(tmp_path):
    scen = scenario_file(tmp_path)
    out = str(tmp_path / "res")
    assert run_cli("proto-sim", scen, "--seeds", "2", "--seed", "5",
                   "--out", out) == 0
    _, _, rows = scenarios.read_csv(os.path.join(out, "tiny.csv"))
    assert [r["seed"] for r in rows] == ["5", "6"]


def test_proto_sim_bad_config_exit_2(tmp_path, capsys):
    scen = scenario_file(tmp_path, "protocol: bogus\ndevices: [{}]\n")
    assert run_cli("proto-sim", scen) == 2
    assert "bogus" in capsys.readouterr().err


def test_proto_sim_missing_file_exit_2(tmp_path, capsys):
    assert run_cli("proto-sim", str(tmp_path / "nope.yaml")) == 2
    assert "nope.yaml" in capsys.readouterr().err


# --------------------------------------------------------------- bench-codec


def test_bench_codec_writes_csv(tmp_path):
    out = str(tmp_path)
    assert run_cli("bench-codec", "--m", "4,8", "--n", "64",
                   "--seconds", "0.02", "--out", out) == 0
    _, columns, rows = scenarios.read_csv(os.path.join(out, "bench-codec.csv"))
    assert columns == scenarios.BENCH_COLUMNS
    assert [r["m"] for r in rows] == ["4", "8"]
    assert all(float(r["encode_mbps"]) > 0 for r in rows)


# -------------------------------------------------------------------- recipe


def test_recipe_runs_and_writes(tmp_path):
    out = str(tmp_path)
    assert run_cli("recipe", "fig-microdownload", "--seeds", "1",
                   "--out", out) == 0
    comments, _, rows = scenarios.read_csv(
        os.path.join(out, "fig-microdownload.csv"))
    assert len(rows) == 2   # adaptive and static, one seed each
    assert any("recipe" in c for c in comments)
    assert os.path.exists(os.path.join(out, "fig-microdownload_agg.csv"))


def test_recipe_unknown_name_exits_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli("recipe", "fig9z", "--out", str(tmp_path))
    assert exc.value.code == 2


# --------------------------------------------------------------------- check


def test_check_missing_results_fails_not_run(tmp_path, capsys, monkeypatch):
    # criteria that need no CSVs are stubbed out; this test is about the
    # missing-file path, not the inline computations
    quick = [acceptance.CriterionResult(1, "stub", "pass", "x", "y")]
    monkeypatch.setattr(acceptance, "evaluate_all",
                        lambda d: quick + [acceptance.evaluate_codec_throughput(d)])
    assert run_cli("check", "--out", str(tmp_path / "none")) == 1
    text = capsys.readouterr().out
    assert "not run" in text and "FAIL" in text


def test_check_table_and_exit_codes(tmp_path, capsys, monkeypatch):
    rows = [acceptance.CriterionResult(1, "alpha", "pass", "m1", "b1"),
            acceptance.CriterionResult(2, "beta", "fail", "m2", "b2", "row x")]
    monkeypatch.setattr(acceptance, "evaluate_all", lambda d: rows)
    assert run_cli("check", "--out", str(tmp_path)) == 1
    text = capsys.readouterr().out
    assert "criterion 1 alpha: pass" in text
    assert "detail:   row x" in text
    assert "FAIL (1/2)" in text
    monkeypatch.setattr(acceptance, "evaluate_all", lambda d: rows[:1])
    assert run_cli("check", "--out", str(tmp_path)) == 0
    assert "PASS (1/1)" in capsys.readouterr().out


def test_check_warns_on_stale_csv(tmp_path, capsys, monkeypatch):
    out = tmp_path / "res"
    out.mkdir()
    stale = out / "fig4a.csv"
    stale.write_text("# old\npolicy\n", encoding="utf-8")
    os.utime(stale, (1, 1))   # far older than the package source
    monkeypatch.setattr(acceptance, "evaluate_all", lambda d: [])
    run_cli("check", "--out", str(out))
    assert "stale" in capsys.readouterr().out
