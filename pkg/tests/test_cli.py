import json
from pathlib import Path

import pytest

from airshield import wire
from airshield.cli import main


def run_cli(*args) -> int:
    return main([str(a) for a in args])


FAST_SIM = ("--set", "sim.duration_s=20")


def read_tree(root: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(root.iterdir())}


def test_simulate_writes_traces_and_manifest(tmp_path, capsys):
    out = tmp_path / "runs"
    rc = run_cli(*FAST_SIM, "simulate", "--condition", "both", "--trials", "3",
                 "--seed", "42", "--out", out)
    assert rc == 0
    files = sorted(p.name for p in out.iterdir())
    assert "manifest.json" in files
    assert len([f for f in files if f.endswith(".jsonl")]) == 6
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["trials"]) == 6
    assert {t["cond"] for t in manifest["trials"]} == {"v", "va"}
    assert {t["seed"] for t in manifest["trials"]} == {42, 43, 44}
    assert len(manifest["config_sha256"]) == 64


def test_simulate_rerun_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run_cli(*FAST_SIM, "simulate", "--condition", "v", "--trials", "2",
                       "--seed", "7", "--out", out) == 0
    assert read_tree(a) == read_tree(b)


def test_simulate_zero_trials_is_usage_error(tmp_path, capsys):
    rc = run_cli("simulate", "--trials", "0", "--out", tmp_path / "x")
    assert rc == 2
    assert "trials" in capsys.readouterr().err


def test_simulate_single_condition(tmp_path):
    out = tmp_path / "v_only"
    assert run_cli(*FAST_SIM, "simulate", "--condition", "v", "--trials", "2",
                   "--seed", "1", "--out", out) == 0
    names = [p.name for p in out.iterdir() if p.suffix == ".jsonl"]
    assert sorted(names) == ["trial_v_1.jsonl", "trial_v_2.jsonl"]


def test_analyze_produces_report(tmp_path, capsys):
    out = tmp_path / "runs"
    assert run_cli(*FAST_SIM, "simulate", "--condition", "both", "--trials", "4",
                   "--seed", "0", "--duration", "60", "--out", out) == 0
    report = tmp_path / "report.json"
    rc = run_cli("analyze", "--in", out, "--report", report)
    assert rc == 0
    payload = json.loads(report.read_text())
    assert payload["n_pairs"] >= 2
    assert set(payload["v"]) == {"mean", "sd", "shapiro"}
    assert "paired_t" in payload and "config_sha256" in payload


def test_analyze_single_condition_exits_2(tmp_path, capsys):
    out = tmp_path / "runs"
    assert run_cli(*FAST_SIM, "simulate", "--condition", "v", "--trials", "3",
                   "--seed", "0", "--out", out) == 0
    rc = run_cli("analyze", "--in", out, "--report", tmp_path / "r.json")
    assert rc == 2


def test_analyze_empty_dir_exits_2(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert run_cli("analyze", "--in", empty, "--report", tmp_path / "r.json") == 2


def test_analyze_identical_pairs_warns(tmp_path):
    out = tmp_path / "runs"
    out.mkdir()
    # two seeds whose V and VA traces are identical -> zero-variance differences
    for seed in (1, 2):
        rows = [{"t_ms": i * 10, "dist_m": 0.30 + 0.001 * seed, "state": "ACTIVE",
                 "duty_pct": 0.0, "cond": cond, "seed": seed}
                for cond in ("v", "va") for i in range(5)]
        for cond in ("v", "va"):
            wire.journal_append(out / wire.trace_filename(cond, seed),
                                [r for r in rows if r["cond"] == cond])
    report = tmp_path / "r.json"
    assert run_cli("analyze", "--in", out, "--report", report) == 0
    payload = json.loads(report.read_text())
    assert payload["paired_t"] is None
    assert any("paired_t" in w for w in payload["warnings"])


def test_analyze_skips_unreadable_trace(tmp_path):
    out = tmp_path / "runs"
    assert run_cli(*FAST_SIM, "simulate", "--condition", "both", "--trials", "3",
                   "--seed", "0", "--duration", "40", "--out", out) == 0
    (out / "trial_zz_9.jsonl").write_text("this is not json\n")
    report = tmp_path / "r.json"
    assert run_cli("analyze", "--in", out, "--report", report) == 0
    payload = json.loads(report.read_text())
    assert any("unreadable" in w for w in payload["warnings"])
    assert payload["n_pairs"] == 3


def test_perceive_reports_calibrated_error(capsys):
    assert run_cli("perceive", "--distance", "0.25", "--samples", "4000",
                   "--seed", "5") == 0
    out = capsys.readouterr().out
    assert "mean |error|" in out
    value = float(out.split("=")[1].split("+/-")[0])
    assert abs(value - 0.035) < 0.006


def test_perceive_inside_core_exits_2(capsys):
    assert run_cli("perceive", "--distance", "0.10") == 2
    assert "core" in capsys.readouterr().err


def test_calibrate_zero_budget_exits_4(tmp_path, capsys):
    rc = run_cli("calibrate", "--budget", "0", "--out", tmp_path / "fit.json")
    assert rc == 4


def test_calibrate_self_targets_succeeds(tmp_path):
    # target the known calibrated behavior; the first evaluation should pass
    targets = tmp_path / "targets.json"
    targets.write_text(json.dumps({"tol_mean": 0.02, "tol_err_near": 0.02,
                                   "tol_err_far": 0.03}))
    fit = tmp_path / "fit.json"
    rc = run_cli("calibrate", "--targets", targets, "--budget", "4", "--out", fit)
    assert rc == 0
    payload = json.loads(fit.read_text())
    assert set(payload) == {"fitted", "residuals", "evaluations"}


def test_calibrate_unknown_target_key_exits_2(tmp_path):
    targets = tmp_path / "targets.json"
    targets.write_text(json.dumps({"v_meen": 0.3}))
    assert run_cli("calibrate", "--targets", targets, "--budget", "1") == 2


def test_posecheck_noiseless(capsys):
    assert run_cli("posecheck", "--poses", "150", "--noise-px", "0") == 0
    out = capsys.readouterr().out
    trans_max = float(out.split("translation max")[1].split("m")[0])
    assert trans_max <= 1e-6


def test_codec_check_reports_exact_count(capsys):
    assert run_cli("codec-check") == 0
    assert "154,368 frames OK" in capsys.readouterr().out


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as e:
        run_cli("--help")
    assert e.value.code == 0


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as e:
        run_cli("simulate", "--frobnicate")
    assert e.value.code == 2
    assert capsys.readouterr().err


def test_bad_config_override_exits_2(tmp_path, capsys):
    rc = run_cli("--set", "nope.key=1", "simulate", "--trials", "1",
                 "--out", tmp_path / "x")
    assert rc == 2


def test_simulate_unwritable_out_exits_3(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("plain file, not a directory")
    rc = run_cli(*FAST_SIM, "simulate", "--trials", "1", "--out",
                 blocker / "nested")
    assert rc == 3
    assert "I/O" in capsys.readouterr().err


def test_config_file_flows_through(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"sim": {"duration_s": 10}}))
    out = tmp_path / "runs"
    assert run_cli("--config", cfg, "simulate", "--condition", "v", "--trials", "1",
                   "--seed", "3", "--out", out) == 0
    records, _ = wire.journal_read(out / "trial_v_3.jsonl")
    assert len(records) == 1000  # 10 s at 10 ms ticks
