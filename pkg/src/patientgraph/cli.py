"""Command line: extract, build-graph, recommend, evaluate, chat."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

from .clients import ClientError
from .dialogue import Dialogue, DialogueFormatError, Role, dump_dialogues, read_dialogues
from .evaluation import EvaluationError, evaluate_predictions
from .extraction import ExtractionError, extract_concepts, extract_patient_characteristics, fill_slots
from .inference import GenerationError, result_line
from .kg import KGFormatError
from .pipeline import ConfigError, GraphBuilder, PipelineConfig, Resources, build_graph, chat_turn, run_dialogue

log = logging.getLogger("patientgraph")


def load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = {}
    for name in ("task", "cache_mode", "workers", "cache_path"):
        v = getattr(args, name, None)
        if v is not None:
            overrides[name] = v
    if getattr(args, "no_np", False):
        overrides["use_np"] = False
    if getattr(args, "no_pp", False):
        overrides["use_pp"] = False
    return cfg.replace(**overrides) if overrides else cfg


def _write(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def _mention_dict(c) -> dict:
    return {"surface": c.surface, "category": c.category.value, "turn": c.turn_index,
            "span": list(c.char_span) if c.char_span else None, "canonical": c.canonical}


def _slot_dict(s) -> dict:
    return {"concept": s.concept.name if s.concept else None, "slot": s.slot, "value": s.value,
            "evidence_turns": sorted(s.evidence_turns)}


def extraction_record(res: Resources, d: Dialogue) -> dict:
    cfg = res.config
    concepts, slots = [], []
    for m in d.patient_turns():
        for c in extract_concepts(res.extractor, d, m):
            concepts.append(_mention_dict(c))
            slots.extend(_slot_dict(s) for s in fill_slots(res.extractor, d, c, cfg.k, cfg.window_cap))
    chars = [_slot_dict(s) for s in extract_patient_characteristics(res.extractor, d)]
    return {"id": d.id, "concepts": concepts, "slots": slots, "characteristics": chars}


def cmd_extract(args) -> int:
    res = Resources.load(load_config(args))
    dialogues = read_dialogues(args.dialogues)
    records = [extraction_record(res, d) for d in dialogues]
    _write(args.output, "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in records))
    n_c = sum(len(r["concepts"]) for r in records)
    n_s = sum(len(r["slots"]) for r in records)
    print(f"{len(records)} dialogues, {n_c} concepts, {n_s} slot values", file=sys.stderr)
    return 0


def cmd_build_graph(args) -> int:
    cfg = load_config(args)
    res = Resources.load(cfg)
    rows = []
    for d in read_dialogues(args.dialogues):
        g = build_graph(res.extractor, res.kg, d.history(), cfg.k, cfg.window_cap)
        rows.append(json.dumps({"id": d.id, "graph": g.to_dict()}, ensure_ascii=False, sort_keys=True) + "\n")
    _write(args.output, "".join(rows))
    return 0


def _run_one(res: Resources, d: Dialogue, trace_dir: Optional[Path]):
    try:
        run = run_dialogue(res, d)
    except (ClientError, GenerationError, ExtractionError, ValueError) as exc:
        log.error("dialogue %s failed: %s", d.id, exc)
        return result_line(d.id, None, f"{type(exc).__name__}: {exc}"), False
    if trace_dir is not None:
        trace_dir.mkdir(parents=True, exist_ok=True)
        (trace_dir / f"{_safe(d.id)}.json").write_text(
            json.dumps(run.trace(), ensure_ascii=False, indent=2, sort_keys=True), encoding="utf-8")
    return result_line(d.id, run.result), True


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


def _previous_rows(path: Optional[str]) -> dict:
    if not path or path == "-" or not Path(path).exists():
        return {}
    done = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            if not rec.get("error"):
                done[rec["id"]] = line
    return done


def recommend_lines(res: Resources, dialogues, workers: int = 1, trace_dir: Optional[Path] = None, done=None):
    """Prediction rows in input order; rows already in ``done`` are reused."""
    done = done or {}

    def job(d):
        if d.id in done:
            return done[d.id], True
        return _run_one(res, d, trace_dir)

    if workers == 1:
        return [job(d) for d in dialogues]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, dialogues))


def cmd_recommend(args) -> int:
    cfg = load_config(args)
    res = Resources.load(cfg)
    dialogues = read_dialogues(args.dialogues)
    trace_dir = Path(args.trace) if args.trace else None
    done = _previous_rows(args.output) if args.resume else {}
    rows = recommend_lines(res, dialogues, cfg.workers, trace_dir, done)
    _write(args.output, "".join(line + "\n" for line, _ in rows))
    failed = sum(not ok for _, ok in rows)
    print(f"{len(rows) - failed} succeeded, {failed} failed", file=sys.stderr)
    return 1 if failed else 0


def read_predictions(path) -> dict:
    preds = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise EvaluationError(f"{path}: line {lineno}: {exc.msg}") from None
        preds[rec["id"]] = rec.get("medications") or []
    return preds


def cmd_evaluate(args) -> int:
    preds = read_predictions(args.predictions)
    gold = {}
    for d in read_dialogues(args.gold):
        if d.gold_medications is None:
            raise EvaluationError(f"dialogue {d.id!r} has no gold medications")
        gold[d.id] = d.gold_medications
    tags = json.loads(Path(args.tags).read_text(encoding="utf-8")) if args.tags else None
    report = evaluate_predictions(preds, gold, strict=not args.lenient, error_tags=tags)
    if args.output:
        _write(args.output, report.to_json() + "\n")
    print(report.table())
    return 0


def cmd_chat(args, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    cfg = load_config(args)
    res = Resources.load(cfg)
    builder = GraphBuilder(res.extractor, res.kg, cfg.k, cfg.window_cap)
    d = Dialogue(id=args.session_id, turns=())
    last_version = builder.graph.version
    for line in stdin:
        text = line.strip()
        if not text:
            continue
        d = d.append(Role.PATIENT, text)
        try:
            run = chat_turn(res, builder, d)
        except (ClientError, GenerationError, ValueError) as exc:
            print(f"[error] {exc}", file=stdout)
            continue
        reply = run.result.response_text.strip()
        d = d.append(Role.DOCTOR, reply)
        print(f"Doctor: {reply}", file=stdout)
        if args.trace:
            g = builder.graph
            grew = "grew" if g.version > last_version else "unchanged"
            print(f"[graph v{g.version}, {grew}]", file=stdout)
            for ln in run.graph.patient_edges():
                print("  " + " ".join(ln), file=stdout)
            last_version = g.version
        stdout.flush()
    if args.transcript:
        _write(args.transcript, dump_dialogues([d]) if d.turns else "")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="patientgraph", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML pipeline configuration")
        sp.add_argument("--task", choices=("recommend", "interview"))
        sp.add_argument("--cache-mode", dest="cache_mode", choices=("record", "replay", "passthrough"))
        sp.add_argument("--cache", dest="cache_path", help="replay cache file (JSON Lines)")
        sp.add_argument("--workers", type=int)

    sp = sub.add_parser("extract", help="concepts and slot values per dialogue")
    common(sp)
    sp.add_argument("dialogues")
    sp.add_argument("-o", "--output")
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("build-graph", help="patient graph per dialogue")
    common(sp)
    sp.add_argument("dialogues")
    sp.add_argument("-o", "--output")
    sp.set_defaults(func=cmd_build_graph)

    sp = sub.add_parser("recommend", help="predict medications for each dialogue")
    common(sp)
    sp.add_argument("dialogues")
    sp.add_argument("-o", "--output")
    sp.add_argument("--trace", nargs="?", const="trace", help="dump graph, prompts and response per dialogue into DIR")
    sp.add_argument("--resume", action="store_true", help="keep successful rows already in the output file")
    sp.add_argument("--no-np", action="store_true", help="disable neighborhood prompts")
    sp.add_argument("--no-pp", action="store_true", help="disable path-based prompts")
    sp.set_defaults(func=cmd_recommend)

    sp = sub.add_parser("evaluate", help="score predictions against gold medications")
    sp.add_argument("predictions")
    sp.add_argument("gold", help="dialogue file carrying gold_medications")
    sp.add_argument("-o", "--output")
    sp.add_argument("--tags", help="JSON map id -> error tags")
    sp.add_argument("--lenient", action="store_true", help="allow empty gold sets")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("chat", help="interactive consultation on standard input")
    common(sp)
    sp.add_argument("--trace", action="store_true", help="print the patient graph after each turn")
    sp.add_argument("--transcript", help="write the session as a dialogue JSON Lines file")
    sp.add_argument("--session-id", default="session")
    sp.set_defaults(func=cmd_chat)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DialogueFormatError, KGFormatError, EvaluationError, ExtractionError, ClientError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
