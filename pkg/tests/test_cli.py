import json

import pytest

from evotutor.cli import main
from evotutor.knowledge_store import KnowledgeStore
from evotutor.simulation import make_script, save_script


def test_evolve_init_then_rerun(tmp_path, capsys):
    kb = tmp_path / "kb.jsonl"
    assert main(["evolve", "--kb", str(kb), "--init", "--now", "10"]) == 0
    assert "solidified=18" in capsys.readouterr().out
    store = KnowledgeStore.load(kb)
    assert len(store.chunks) == 18
    assert main(["evolve", "--kb", str(kb), "--now", "10"]) == 0
    audit = kb.with_suffix(".evolution.jsonl")
    assert len(audit.read_text().splitlines()) == 2


def test_evolve_missing_kb(tmp_path, capsys):
    assert main(["evolve", "--kb", str(tmp_path / "nope.jsonl")]) == 2
    assert "--init" in capsys.readouterr().err


def test_run_bundled_and_file_script(tmp_path, capsys):
    out = tmp_path / "t.jsonl"
    assert main(["run", "--student", "novice_intuitive", "--script", "fault_diagnosis",
                 "--seed", "3", "--out", str(out)]) == 0
    first = json.loads(out.read_text())
    assert len(first["steps"]) == 20
    path = tmp_path / "tiny.json"
    save_script(make_script("tiny", ("concept",), turns=2), path)
    assert main(["run", "--student", "advanced_engineer", "--script", str(path), "--system", "a",
                 "--out", str(out), "--append"]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 2 and len(json.loads(lines[1])["steps"]) == 2
    assert "return" in capsys.readouterr().out


def test_run_is_seed_reproducible(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for p in (a, b):
        main(["run", "--student", "misconception_prone", "--script", "mixed_review", "--seed", "9", "--out", str(p)])
    assert a.read_bytes() == b.read_bytes()


def test_run_unknown_script(tmp_path, capsys):
    assert main(["run", "--student", "novice_intuitive", "--script", "nonexistent",
                 "--out", str(tmp_path / "x.jsonl")]) == 2
    assert "bundled" in capsys.readouterr().err


def test_bench_then_report(tmp_path, capsys):
    out = tmp_path / "bench"
    assert main(["bench", "--configs", "a,e", "--seed", "1", "--out", str(out)]) == 0
    table = capsys.readouterr().out
    assert "(a) LLM Only" in table and "(e) Full System" in table
    assert {p.name for p in out.iterdir()} == {"trajectories.jsonl", "scores.jsonl", "report.json"}
    assert main(["report", "--input", str(out)]) == 0
    assert "Average" in capsys.readouterr().out
    assert main(["report", "--format", "json", "--input", str(out / "report.json")]) == 0
    data = json.loads(capsys.readouterr().out)
    assert [c["config"] for c in data["configs"]] == ["a", "e"]


def test_bench_unknown_config(tmp_path):
    assert main(["bench", "--configs", "a,q", "--out", str(tmp_path)]) == 2


def test_report_missing(tmp_path, capsys):
    assert main(["report", "--input", str(tmp_path)]) == 2
    assert "bench" in capsys.readouterr().err


def test_tune_writes_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"hyper": {"learning_rate": 0.3}}))
    hist = tmp_path / "hist.jsonl"
    assert main(["tune", "--budget", "3", "--config", str(cfg), "--history", str(hist)]) == 0
    saved = json.loads(cfg.read_text())
    assert set(saved) == {"hyper", "policy", "provider"}
    assert len(hist.read_text().splitlines()) == 4
    assert "accepted" in capsys.readouterr().out


def test_bad_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"hyper": {"theta_solid": 0.2, "theta_forget": 0.4}}))
    assert main(["run", "--student", "novice_intuitive", "--script", "mixed_review", "--config", str(cfg),
                 "--out", str(tmp_path / "x.jsonl")]) == 2
    cfg.write_text("[1, 2]")
    assert main(["bench", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_argparse_rejects_unknown_student():
    with pytest.raises(SystemExit):
        main(["run", "--student", "wizard", "--script", "mixed_review"])
