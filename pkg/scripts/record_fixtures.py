"""Write the test fixture sets and record their replay caches.

Each set gets dialogues.jsonl, a config, the offline responder's knowledge
table, a static search table, and cache.jsonl recorded by running the
pipeline once in record mode. Golden outputs are then produced in replay mode.

    python3 scripts/record_fixtures.py [--out tests/fixtures]
"""

import argparse
import json
import shutil
from pathlib import Path

from patientgraph.cli import extraction_record, recommend_lines
from patientgraph.dialogue import Department, Dialogue, dump_dialogues
from patientgraph.pipeline import PipelineConfig, Resources

E2E_DIALOGUES = [
    ("d01", "Respiratory", ["Aspirin", "Berberine"], [
        ("patient", "I think I caught a cold, my nose is running."),
        ("doctor", "Do you have a fever?"),
        ("patient", "No fever, just a cough since two days."),
    ]),
    ("d02", "Respiratory", ["Ambroxol", "Nifedipine"], [
        ("patient", "I'm pregnant and I have high blood pressure. I also have bronchitis."),
        ("doctor", "Do you have a cough?"),
        ("patient", "Yes, I cough a lot."),
    ]),
    ("d03", "Dermatology", ["Calamine Lotion"], [
        ("patient", "My arms are itchy and red, the doctor said it was eczema before."),
        ("doctor", "Are you pregnant?"),
        ("patient", "Yes, I am pregnant."),
    ]),
    ("d04", "Gastroenterology", ["Montmorillonite Powder"], [
        ("patient", "I have had diarrhea since yesterday."),
        ("doctor", "Any fever?"),
        ("patient", "No."),
    ]),
    ("d05", "Gastroenterology", ["Omeprazole"], [
        ("patient", "My stomach burns after meals, I was told I have gastritis."),
        ("doctor", "Have you taken anything for it?"),
        ("patient", "I took Aspirin for a headache but it made the pain worse."),
    ]),
    ("d06", "Respiratory", ["Oseltamivir"], [
        ("patient", "我得了流感, I have a high fever."),
        ("doctor", "How long have you had the fever?"),
        ("patient", "About three days."),
    ]),
    ("d07", "Dermatology", ["Loratadine"], [
        ("patient", "I'm 30 years old, my skin is itchy all over."),
        ("doctor", "Are you pregnant?"),
        ("patient", "No, I'm not pregnant."),
    ]),
    ("d08", "Respiratory", ["Labetalol"], [
        ("patient", "I am a 60-year-old man with high blood pressure."),
        ("doctor", "Do you have bronchitis or asthma?"),
        ("patient", "No, nothing like that."),
    ]),
    ("d09", "Gastroenterology", ["Berberine", "Montmorillonite Powder"], [
        ("patient", "The doctor said I have gastroenteritis and I have loose stools."),
        ("doctor", "Did you take smecta?"),
        ("patient", "Not yet."),
    ]),
    ("d10", "Respiratory", ["Ambroxol"], [
        ("patient", "I have bronchitis and I'm on Warfarin for my heart."),
        ("doctor", "Is the cough getting worse?"),
        ("patient", "Yes, worse at night."),
    ]),
]

E2E_KNOWLEDGE = {
    "cold": "Rest, drink fluids, and Aspirin can ease aches from a cold.",
    "hypertension": "Nifedipine is commonly used for high blood pressure in pregnancy.",
    "itching": "For itching, a non-drowsy antihistamine such as Loratadine is often used.",
    "diarrhea": "Oral rehydration and Montmorillonite Powder help with diarrhea.",
    "gastritis": "Omeprazole reduces stomach acid; avoid spicy food.",
}

E2E_SEARCH = {
    "treatment for bronchitis": [["Bronchitis care", "Ambroxol thins mucus and eases coughing in bronchitis.", "https://example.org/bronchitis"]],
    "treatment for hypertension": [["Blood pressure drugs", "Nifedipine and Labetalol are options for high blood pressure.", "https://example.org/bp"]],
    "treatment for influenza": [["Flu treatment", "Oseltamivir shortens influenza when started early.", "https://example.org/flu"]],
    "treatment for cold": [],
}

# gold medications reach the prompt only through neighborhood facts, and partly through LLM answers
ABLATION_DIALOGUES = [
    ("a01", "Respiratory", ["Aspirin", "Berberine"], [("patient", "I caught a cold last night.")]),
    ("a02", "Dermatology", ["Loratadine"], [("patient", "My skin has been itchy for a week.")]),
    ("a03", "Gastroenterology", ["Montmorillonite Powder"], [("patient", "I have diarrhea today.")]),
    ("a04", "Dermatology", ["Calamine Lotion"], [("patient", "I have eczema on my hands.")]),
]

ABLATION_KNOWLEDGE = {
    "cold": "Aspirin relieves aches that come with a cold.",
    "diarrhea": "Montmorillonite Powder settles diarrhea.",
}

ABLATION_VARIANTS = {"full": {}, "no_np": {"use_np": False}, "no_pp": {"use_pp": False}, "no_np_pp": {"use_np": False, "use_pp": False}}


def dialogues(rows):
    return [Dialogue.from_pairs(i, pairs, department=Department(dept), gold_medications=frozenset(gold)) for i, dept, gold, pairs in rows]


def write_set(root: Path, rows, knowledge, search, extra=None) -> PipelineConfig:
    if root.exists():
        shutil.rmtree(root)
    root.mkdir(parents=True)
    (root / "dialogues.jsonl").write_text(dump_dialogues(dialogues(rows)), encoding="utf-8")
    (root / "knowledge.json").write_text(json.dumps(knowledge, indent=1, sort_keys=True), encoding="utf-8")
    cfg = {"task": "recommend", "knowledge": "knowledge.json", "cache_path": "cache.jsonl",
           "cache_mode": "replay", "chat_backend": "offline"}
    if search is not None:
        (root / "search.json").write_text(json.dumps(search, indent=1, sort_keys=True), encoding="utf-8")
        cfg.update(search_backend="static", search_fixture="search.json")
    cfg.update(extra or {})
    (root / "config.toml").write_text(PipelineConfig.from_dict(cfg).to_toml(), encoding="utf-8")
    return PipelineConfig.load(root / "config.toml")


def record(cfg: PipelineConfig, ds, **changes):
    res = Resources.load(cfg.replace(cache_mode="record", concurrent_sources=False, **changes))
    recommend_lines(res, ds)


def replay_lines(cfg: PipelineConfig, ds, **changes) -> str:
    res = Resources.load(cfg.replace(cache_mode="replay", **changes))
    return "".join(line + "\n" for line, _ in recommend_lines(res, ds))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "tests" / "fixtures"))
    out = Path(ap.parse_args().out)

    e2e = out / "e2e"
    cfg = write_set(e2e, E2E_DIALOGUES, E2E_KNOWLEDGE, E2E_SEARCH)
    ds = dialogues(E2E_DIALOGUES)
    record(cfg, ds)
    (e2e / "golden_predictions.jsonl").write_text(replay_lines(cfg, ds), encoding="utf-8")
    res = Resources.load(cfg)
    (e2e / "golden_extraction.jsonl").write_text(
        "".join(json.dumps(extraction_record(res, d), ensure_ascii=False, sort_keys=True) + "\n" for d in ds),
        encoding="utf-8")

    abl = out / "ablation"
    cfg = write_set(abl, ABLATION_DIALOGUES, ABLATION_KNOWLEDGE, None)
    ds = dialogues(ABLATION_DIALOGUES)
    for name, changes in ABLATION_VARIANTS.items():
        record(cfg, ds, **changes)
        (abl / f"predictions_{name}.jsonl").write_text(replay_lines(cfg, ds, **changes), encoding="utf-8")
    print(f"fixtures written under {out}")


if __name__ == "__main__":
    main()
