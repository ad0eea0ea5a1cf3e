"""Replay a fixture set with the prompt sources switched off one at a time and print F1 / Jaccard.

    python3 scripts/run_ablation.py [--set tests/fixtures/ablation] [--cache-mode replay]
"""

import argparse
import json
from pathlib import Path

from patientgraph.cli import recommend_lines
from patientgraph.dialogue import read_dialogues
from patientgraph.evaluation import evaluate_predictions
from patientgraph.pipeline import PipelineConfig, Resources

VARIANTS = [
    ("full", {}),
    ("w/o NP", {"use_np": False}),
    ("w/o PP", {"use_pp": False}),
    ("w/o NP and PP", {"use_np": False, "use_pp": False}),
]


def main():
    root = Path(__file__).resolve().parent.parent
    ap = argparse.ArgumentParser()
    ap.add_argument("--set", default=str(root / "tests" / "fixtures" / "ablation"))
    ap.add_argument("--cache-mode", default=None, choices=("record", "replay", "passthrough"))
    args = ap.parse_args()

    base = PipelineConfig.load(Path(args.set) / "config.toml")
    if args.cache_mode:
        base = base.replace(cache_mode=args.cache_mode)
    dialogues = read_dialogues(Path(args.set) / "dialogues.jsonl")
    gold = {d.id: d.gold_medications for d in dialogues}

    print(f"{'variant':<16}{'jaccard':>9}{'f1':>9}  failures")
    for name, changes in VARIANTS:
        try:
            res = Resources.load(base.replace(**changes))
        except Exception as exc:
            print(f"{name:<16}  skipped: {exc}")
            continue
        rows = recommend_lines(res, dialogues)
        preds = {json.loads(line)["id"]: json.loads(line)["medications"] for line, _ in rows}
        report = evaluate_predictions(preds, gold)
        failures = sum(not ok for _, ok in rows)
        print(f"{name:<16}{float(report.mean_jaccard):9.4f}{float(report.mean_f1):9.4f}  {failures}")


if __name__ == "__main__":
    main()
