import io
import json
import shutil
from argparse import Namespace

import pytest

from patientgraph.cli import cmd_chat, main
from patientgraph.dialogue import read_dialogues


@pytest.fixture
def e2e(tmp_path, fixtures_dir):
    dst = tmp_path / "e2e"
    shutil.copytree(fixtures_dir / "e2e", dst)
    return dst


def test_extract_golden(e2e, tmp_path):
    out = tmp_path / "ext.jsonl"
    assert main(["extract", "--config", str(e2e / "config.toml"), str(e2e / "dialogues.jsonl"), "-o", str(out)]) == 0
    assert out.read_text() == (e2e / "golden_extraction.jsonl").read_text()


def test_extract_empty_file(e2e, tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    out = tmp_path / "ext.jsonl"
    assert main(["extract", "--config", str(e2e / "config.toml"), str(empty), "-o", str(out)]) == 0
    assert out.read_text() == ""


def test_build_graph_rows(e2e, tmp_path):
    out = tmp_path / "g.jsonl"
    assert main(["build-graph", "--config", str(e2e / "config.toml"), str(e2e / "dialogues.jsonl"), "-o", str(out)]) == 0
    rows = [json.loads(x) for x in out.read_text().splitlines()]
    assert [r["id"] for r in rows] == [d.id for d in read_dialogues(e2e / "dialogues.jsonl")]
    assert all(r["graph"]["edges"] for r in rows)


def test_recommend_replay_golden_with_trace(e2e, tmp_path):
    out, trace = tmp_path / "pred.jsonl", tmp_path / "trace"
    argv = ["recommend", "--config", str(e2e / "config.toml"), str(e2e / "dialogues.jsonl"), "-o", str(out),
            "--trace", str(trace)]
    assert main(argv) == 0
    assert out.read_text() == (e2e / "golden_predictions.jsonl").read_text()
    t = json.loads((trace / "d02.json").read_text())
    assert {"graph", "np", "pp", "prompt", "response", "paths"} <= set(t)
    assert "Losartan" not in t["candidates"]


def test_poisoned_cache_gives_one_failure_row(e2e, tmp_path):
    cache = e2e / "cache.jsonl"
    rows = cache.read_text().splitlines()
    marker = "I have had diarrhea since yesterday"
    kept = [r for r in rows if not (marker in r and "Candidate medications are from" in r)]
    assert len(kept) == len(rows) - 1
    cache.write_text("\n".join(kept) + "\n")
    out = tmp_path / "pred.jsonl"
    assert main(["recommend", "--config", str(e2e / "config.toml"), str(e2e / "dialogues.jsonl"), "-o", str(out)]) == 1
    recs = [json.loads(x) for x in out.read_text().splitlines()]
    failed = [r for r in recs if r.get("error")]
    assert [r["id"] for r in failed] == ["d04"] and "ReplayMissError" in failed[0]["error"]
    assert len(recs) == 10


def test_resume_keeps_good_rows(e2e, tmp_path):
    out = tmp_path / "pred.jsonl"
    golden = (e2e / "golden_predictions.jsonl").read_text().splitlines()
    marked = golden[0].replace("I recommend", "RESUMED: I recommend")
    out.write_text(marked + "\n")
    argv = ["recommend", "--config", str(e2e / "config.toml"), str(e2e / "dialogues.jsonl"), "-o", str(out), "--resume"]
    assert main(argv) == 0
    assert out.read_text().splitlines() == [marked] + golden[1:]


def test_evaluate_perfect_and_disjoint(e2e, tmp_path, capsys):
    gold = e2e / "dialogues.jsonl"
    perfect = tmp_path / "perfect.jsonl"
    perfect.write_text("".join(json.dumps({"id": d.id, "medications": sorted(d.gold_medications)}) + "\n"
                               for d in read_dialogues(gold)))
    report = tmp_path / "r.json"
    assert main(["evaluate", str(perfect), str(gold), "-o", str(report)]) == 0
    assert json.loads(report.read_text())["mean_f1"] == 1.0
    disjoint = tmp_path / "disjoint.jsonl"
    disjoint.write_text("".join(json.dumps({"id": d.id, "medications": ["Nothing"]}) + "\n" for d in read_dialogues(gold)))
    assert main(["evaluate", str(disjoint), str(gold), "-o", str(report)]) == 0
    assert json.loads(report.read_text())["mean_jaccard"] == 0.0
    assert "mean" in capsys.readouterr().out


def test_evaluate_rejects_unmatched_ids(e2e, tmp_path):
    preds = tmp_path / "p.jsonl"
    preds.write_text('{"id": "zzz", "medications": []}\n')
    assert main(["evaluate", str(preds), str(e2e / "dialogues.jsonl")]) == 2


def test_bad_config_exit_code(tmp_path, e2e):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("k1 = 0\n")
    assert main(["extract", "--config", str(cfg), str(e2e / "dialogues.jsonl")]) == 2


def chat_args(**kw):
    base = dict(config=None, task="interview", cache_mode=None, cache_path=None, workers=None,
                trace=False, transcript=None, session_id="s1")
    base.update(kw)
    return Namespace(**base)


def test_chat_eof_immediately():
    out = io.StringIO()
    assert cmd_chat(chat_args(), io.StringIO(""), out) == 0
    assert out.getvalue() == ""


def test_chat_scripted_session(tmp_path):
    out = io.StringIO()
    transcript = tmp_path / "t.jsonl"
    stdin = io.StringIO("I have a cough.\n\nAnd I'm pregnant.\n")
    assert cmd_chat(chat_args(trace=True, transcript=str(transcript)), stdin, out) == 0
    lines = out.getvalue().splitlines()
    assert sum(ln.startswith("Doctor: ") for ln in lines) == 2
    assert "[graph v" in out.getvalue() and "patient has_symptom cough" in out.getvalue()
    (d,) = read_dialogues(transcript)
    assert [t.role.value for t in d.turns] == ["patient", "doctor", "patient", "doctor"]
