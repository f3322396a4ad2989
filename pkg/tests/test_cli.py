from __future__ import annotations

import io
import json
import subprocess
import sys

import pytest

from conftest import DATA_DIR, dump_rows, fixture_rows
from kgdial.cli import _parse_strategy, main
from kgdial.retrieval import Strategy


def test_validate_ok(capsys):
    rc = main(["validate", str(DATA_DIR / "dialogues.jsonl")])
    assert rc == 0
    assert capsys.readouterr().out.strip() == "OK: 10 dialogues, 19 samples"


def test_validate_invalid_exit_code_and_line(tmp_path, capsys):
    rows = fixture_rows()
    rows[2]["turns"][0]["speaker"] = "SYSTEM"
    path = dump_rows(rows, tmp_path / "broken.jsonl")
    rc = main(["validate", str(path)])
    captured = capsys.readouterr()
    assert rc == 1
    assert captured.err.startswith("INVALID: line 3:")


def test_stats_json(capsys):
    rc = main(["stats", str(DATA_DIR / "dialogues.jsonl")])
    assert rc == 0
    obj = json.loads(capsys.readouterr().out)
    assert obj["n_dialogues"] == 10
    assert obj["n_samples"] == 19


def test_eval_with_config_and_out(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(DATA_DIR)
    rc = main(
        ["eval", "--config", "golden_config.json", "--out", str(tmp_path / "art")]
    )
    captured = capsys.readouterr()
    assert rc == 0
    assert "samples: 19" in captured.out
    assert "P.C          94.74" in captured.out
    report = json.loads((tmp_path / "art" / "report.json").read_text())
    golden = json.loads((DATA_DIR / "golden_report.json").read_text())
    assert report == golden


def test_eval_oracle_overrides(capsys):
    rc = main(
        [
            "eval",
            "--dataset",
            str(DATA_DIR / "dialogues.jsonl"),
            "--planner-mode",
            "ORACLE",
        ]
    )
    assert rc == 0
    out = capsys.readouterr().out
    assert "PERSONA     100.00" in out


def test_eval_exit_code_counts_errors(tmp_path, capsys, monkeypatch):
    # Remove one replay row so exactly one sample fails.
    rows = [
        json.loads(line)
        for line in (DATA_DIR / "replay.jsonl").read_text().splitlines()
        if line.strip()
    ]
    victim = next(r for r in rows if "[MIDDLE]" not in r["prompt_key"])
    rows.remove(victim)
    dump_rows(rows, tmp_path / "replay.jsonl")
    cfg = json.loads((DATA_DIR / "golden_config.json").read_text())
    cfg["dataset_path"] = str(DATA_DIR / "dialogues.jsonl")
    cfg["backend"]["replay_path"] = str(tmp_path / "replay.jsonl")
    (tmp_path / "cfg.json").write_text(json.dumps(cfg), encoding="utf-8")
    rc = main(["eval", "--config", str(tmp_path / "cfg.json")])
    captured = capsys.readouterr()
    assert rc == 1
    assert "1 sample(s) failed" in captured.err


def test_eval_without_dataset_errors(capsys):
    rc = main(["eval"])
    captured = capsys.readouterr()
    assert rc == 2
    assert captured.err.startswith("error: no dataset")


def test_bench_output(capsys):
    rc = main(["bench", "--n", "2", "--m", "3", "--queries", "1"])
    assert rc == 0
    profiles = json.loads(capsys.readouterr().out)
    assert len(profiles) == 4
    a = next(p for p in profiles if p["strategy"] == "DEPENDENT_A")
    assert a["candidates_scanned"] == 2 + 3
    assert a["peak_items_resident"] == 2 + 2 * 3


def test_bench_strategy_subset(capsys):
    rc = main(["bench", "--n", "2", "--m", "2", "--queries", "1", "--strategies", "a,d"])
    assert rc == 0
    profiles = json.loads(capsys.readouterr().out)
    assert [p["strategy"] for p in profiles] == ["DEPENDENT_A", "CONCATENATED_D"]


def test_parse_strategy_aliases():
    assert _parse_strategy("a") is Strategy.DEPENDENT_A
    assert _parse_strategy("B") is Strategy.INDEPENDENT_B
    assert _parse_strategy("merged_c") is Strategy.MERGED_C
    with pytest.raises(Exception):
        _parse_strategy("z")


def test_chat_via_stdin(tmp_path, capsys, monkeypatch):
    cfg = {
        "dataset_path": str(DATA_DIR / "dialogues.jsonl"),
        "planner_mode": "ALWAYS_PERSONA",
        "response_mode": "BACKEND",
        "backend": {"kind": "ECHO", "echo_transform": "middle_first"},
    }
    path = tmp_path / "chat.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    monkeypatch.setattr("sys.stdin", io.StringIO("hi a1p0 cooking\n/quit\n"))
    rc = main(["chat", "--config", str(path), "--dialogue-id", "d1"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "[plan] PERSONA" in out
    assert "sys>" in out


def test_chat_unknown_dialogue(tmp_path, capsys):
    cfg = {
        "dataset_path": str(DATA_DIR / "dialogues.jsonl"),
        "planner_mode": "ALWAYS_PERSONA",
        "response_mode": "BACKEND",
        "backend": {"kind": "ECHO"},
    }
    path = tmp_path / "chat.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    rc = main(["chat", "--config", str(path), "--dialogue-id", "nope"])
    assert rc == 2
    assert "no dialogue" in capsys.readouterr().err


def test_console_script_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "kgdial", "validate", str(DATA_DIR / "dialogues.jsonl")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert proc.stdout.startswith("OK:")
