"""Concept mention detection and slot-value state filling."""

from __future__ import annotations

import ast
import enum
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Protocol, Sequence

from .clients import ChatRequest, DEFAULT_TEMPERATURE
from .dialogue import Dialogue, Role, Utterance, context_window
from . import templates as tpl

PRIMARY_PATIENT = "patient"


class Category(str, enum.Enum):
    DISEASE = "Disease"
    SYMPTOM = "Symptom"
    MEDICATION = "Medication"
    PATIENT_CHARACTERISTIC = "PatientCharacteristic"


STATE_VALUES = (
    "patient claims positive",
    "patient claims negative",
    "doctor claims positive",
    "doctor claims negative",
    "unknown",
)
POSITIVE_STATES = frozenset({"patient claims positive", "doctor claims positive"})
NEGATIVE_STATES = frozenset({"patient claims negative", "doctor claims negative"})
YES_NO_UNKNOWN = ("yes", "no", "unknown")
MEMORY = "memory"

# None marks a free-text slot.
_CONDITION_SLOTS = {"state": STATE_VALUES, "past_medical_history": YES_NO_UNKNOWN, MEMORY: None}
SLOT_SCHEMAS = {
    Category.DISEASE: _CONDITION_SLOTS,
    Category.SYMPTOM: _CONDITION_SLOTS,
    Category.MEDICATION: {
        "whether_taken": YES_NO_UNKNOWN,
        "whether_effective": YES_NO_UNKNOWN,
        "whether_doctor_recommend": YES_NO_UNKNOWN,
        MEMORY: None,
    },
    Category.PATIENT_CHARACTERISTIC: {MEMORY: None},
}
CHARACTERISTIC_SLOTS = {
    "gender": ("male", "female"),
    "age": None,
    "blood_pressure": None,
    "pregnant": ("yes", "no"),
}


class ExtractionError(RuntimeError):
    pass


class ExtractionFormatError(ExtractionError):
    """Client output could not be parsed or violates a closed vocabulary."""

    def __init__(self, message: str, raw: str = ""):
        self.raw = raw
        super().__init__(f"{message}; raw output: {raw[:300]!r}" if raw else message)


@dataclass(frozen=True)
class ConceptMention:
    surface: str
    category: Category
    turn_index: int
    char_span: Optional[tuple] = None
    canonical: Optional[str] = None
    patient: str = PRIMARY_PATIENT

    @property
    def name(self) -> str:
        return self.canonical or self.surface


@dataclass(frozen=True)
class SlotValue:
    concept: Optional[ConceptMention]  # None: the value sits on the patient node
    slot: str
    value: str
    evidence_turns: frozenset = frozenset()
    patient: str = PRIMARY_PATIENT

    @property
    def recency(self) -> int:
        return max(self.evidence_turns, default=-1)


def validate_slot_value(sv: SlotValue) -> None:
    if sv.concept is None:
        if sv.slot not in CHARACTERISTIC_SLOTS:
            raise ExtractionFormatError(f"unknown patient characteristic {sv.slot!r}")
        vocab = CHARACTERISTIC_SLOTS[sv.slot]
    else:
        schema = SLOT_SCHEMAS[sv.concept.category]
        if sv.slot not in schema:
            raise ExtractionFormatError(f"slot {sv.slot!r} does not apply to {sv.concept.category.value}")
        vocab = schema[sv.slot]
    if vocab is not None and sv.value not in vocab:
        raise ExtractionFormatError(f"value {sv.value!r} outside vocabulary of slot {sv.slot!r}")
    if not sv.value.strip():
        raise ExtractionFormatError(f"empty value for slot {sv.slot!r}")


class Extractor(Protocol):
    concurrent_safe: bool

    def extract_concepts(self, text: str, turn_index: int) -> list[ConceptMention]: ...

    def fill_slots(self, context: Sequence[Utterance], concept: ConceptMention) -> list[SlotValue]: ...

    def extract_characteristics(self, utterances: Sequence[Utterance]) -> list[SlotValue]: ...


# ---------------------------------------------------------------- operations


def extract_concepts(extractor: Extractor, d: Dialogue, m: int) -> list[ConceptMention]:
    if not 0 <= m < len(d.turns):
        raise IndexError(f"turn {m} out of range")
    turn = d.turns[m]
    if turn.role is not Role.PATIENT:
        raise ValueError(f"turn {m} is not a patient utterance")
    out: list[ConceptMention] = []
    seen = set()
    for c in extractor.extract_concepts(turn.text, m):
        if not isinstance(c.category, Category):
            raise ExtractionFormatError(f"unknown category {c.category!r}")
        if c.char_span is not None:
            start, end = c.char_span
            if turn.text[start:end] != c.surface:
                raise ExtractionFormatError(f"span {c.char_span} does not match surface {c.surface!r}")
        key = (c.surface, c.category)
        if key in seen:
            continue
        seen.add(key)
        out.append(c)
    return out


def fill_slots(extractor: Extractor, d: Dialogue, c: ConceptMention, k: Optional[int], cap: Optional[int] = None) -> list[SlotValue]:
    """Slot values for ``c`` read from its context window, one per applicable slot.

    Closed slots without evidence are ``"unknown"``; the memory slot is only
    present when there is something to remember.
    """
    window = context_window(d, c.turn_index, k, cap)
    allowed = {u.index for u in window}
    got: dict[str, SlotValue] = {}
    for sv in extractor.fill_slots(window, c):
        validate_slot_value(sv)
        if not sv.evidence_turns <= allowed:
            raise ExtractionFormatError(
                f"evidence turns {sorted(sv.evidence_turns)} fall outside window {sorted(allowed)}"
            )
        if sv.slot in got:
            raise ExtractionFormatError(f"duplicate value for slot {sv.slot!r}")
        got[sv.slot] = sv
    out = []
    for slot, vocab in SLOT_SCHEMAS[c.category].items():
        if slot in got:
            out.append(got[slot])
        elif vocab is not None:
            out.append(SlotValue(c, slot, "unknown", frozenset(), c.patient))
    return out


def extract_patient_characteristics(extractor: Extractor, d: Dialogue) -> list[SlotValue]:
    patient_turns = [u for u in d.turns if u.role is Role.PATIENT]
    latest: dict[tuple, SlotValue] = {}
    for sv in extractor.extract_characteristics(patient_turns):
        if sv.concept is not None:
            raise ExtractionFormatError("patient characteristic attached to a concept")
        validate_slot_value(sv)
        key = (sv.patient, sv.slot)
        if key not in latest or sv.recency >= latest[key].recency:
            latest[key] = sv
    return sorted(latest.values(), key=lambda sv: (sv.patient, sv.slot))


# ---------------------------------------------------------------- lexicon / rules


class LexiconEntry(NamedTuple):
    category: Category
    canonical: str


def load_lexicon(path) -> dict[str, LexiconEntry]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    out = {}
    for surface, entry in raw.items():
        try:
            out[surface] = LexiconEntry(Category(entry["category"]), entry.get("canonical") or surface)
        except (KeyError, ValueError, TypeError):
            raise ExtractionError(f"{path}: bad lexicon entry for {surface!r}") from None
    return out


def _wordish(ch: str) -> bool:
    return ch.isascii() and ch.isalnum()


def find_surface(text: str, surface: str, start: int = 0) -> int:
    """Case-insensitive search honouring ASCII word boundaries; -1 if absent."""
    low, needle = text.lower(), surface.lower()
    i = low.find(needle, start)
    while i != -1:
        end = i + len(needle)
        left_ok = i == 0 or not (_wordish(text[i - 1]) and _wordish(surface[0]))
        right_ok = end >= len(text) or not (_wordish(text[end]) and _wordish(surface[-1]))
        if left_ok and right_ok:
            return i
        i = low.find(needle, i + 1)
    return -1


NEGATION_CUES = (
    "no", "not", "never", "without", "denies", "deny", "don't", "dont", "doesn't", "didn't",
    "haven't", "hasn't", "isn't", "aren't", "wasn't", "nor", "neither", "free of", "ruled out",
    "没有", "不是", "无", "否认", "没",
)
POST_NEGATION_CUES = ("is gone", "has gone", "went away", "resolved", "ruled out", "is negative", "已经好了")
HISTORY_CUES = ("history of", "used to", "previously", "in the past", "years ago", "before", "chronic", "以前", "病史")
TAKEN_CUES = ("took", "taken", "taking", "take", "used", "using", "tried", "on", "吃了", "服用", "用了")
EFFECTIVE_POS = ("helped", "helps", "works", "worked", "effective", "better", "relieved", "有效", "好多了")
EFFECTIVE_NEG = (
    "didn't help", "did not help", "doesn't help", "not help", "no effect", "not effective",
    "didn't work", "doesn't work", "not working", "useless", "no better", "没效果", "没用",
)
RECOMMEND_POS = ("recommend", "suggest", "prescribe", "take", "try", "use", "建议", "推荐")
RECOMMEND_NEG = ("don't take", "do not take", "avoid", "stop", "not recommend", "shouldn't", "should not", "don't use", "不建议", "不要")
AFFIRM = ("yes", "yeah", "yep", "i do", "i did", "sure", "right", "是的", "有")
DENY = ("no", "nope", "not really", "i don't", "never", "没有", "不")
DURATION = re.compile(
    r"\b(?:for|since)\s+(?:about\s+|almost\s+|nearly\s+|over\s+)?"
    r"(?:a|an|one|two|three|four|five|six|seven|several|a few|\d+)\s+"
    r"(?:hours?|days?|weeks?|months?|years?)\b",
    re.IGNORECASE,
)
_CLAUSE_BREAK = re.compile(r"[.;!?,，。；！？]|\bbut\b|\bhowever\b", re.IGNORECASE)


def _has_cue(text: str, cues: Iterable[str]) -> bool:
    return any(find_surface(text, cue) != -1 for cue in cues)


def _clause_around(text: str, start: int, end: int) -> tuple[str, str]:
    """Text of the clause before and after the span [start, end)."""
    left = 0
    for m in _CLAUSE_BREAK.finditer(text, 0, start):
        left = m.end()
    m = _CLAUSE_BREAK.search(text, end)
    right = m.start() if m else len(text)
    return text[left:start], text[end:right]


def _is_question(text: str, end: int) -> bool:
    m = re.compile(r"[.;!?。；！？]").search(text, end)
    return bool(m) and m.group() in "?？"


def _starts_with(text: str, cues: Iterable[str]) -> bool:
    low = text.strip().lower()
    for cue in cues:
        if low.startswith(cue):
            rest = low[len(cue):]
            if not rest or not _wordish(rest[0]):
                return True
    return False


class _Claim(NamedTuple):
    turn: int
    role: Role
    positive: bool
    extra_turns: tuple = ()


@dataclass
class LexiconExtractor:
    """Dictionary match plus negation/assertion cue rules; fully deterministic."""

    lexicon: dict
    negation_cues: tuple = NEGATION_CUES
    concurrent_safe: bool = True
    _surfaces: list = field(init=False, repr=False)

    def __post_init__(self):
        self.lexicon = {
            s: e if isinstance(e, LexiconEntry) else LexiconEntry(Category(e["category"]), e.get("canonical") or s)
            for s, e in self.lexicon.items()
        }
        self._surfaces = sorted(self.lexicon, key=lambda s: (-len(s), s))

    @classmethod
    def from_file(cls, path) -> "LexiconExtractor":
        return cls(load_lexicon(path))

    def _entry(self, surface: str) -> Optional[LexiconEntry]:
        if surface in self.lexicon:
            return self.lexicon[surface]
        low = surface.lower()
        for s, e in self.lexicon.items():
            if s.lower() == low:
                return e
        return None

    def extract_concepts(self, text: str, turn_index: int) -> list[ConceptMention]:
        taken = [False] * len(text)
        found = []
        for surface in self._surfaces:
            pos = find_surface(text, surface)
            while pos != -1:
                end = pos + len(surface)
                if not any(taken[pos:end]):
                    for i in range(pos, end):
                        taken[i] = True
                    entry = self.lexicon[surface]
                    found.append((pos, ConceptMention(text[pos:end], entry.category, turn_index, (pos, end), entry.canonical)))
                pos = find_surface(text, surface, pos + 1)
        return [c for _, c in sorted(found, key=lambda p: p[0])]

    def surfaces_for(self, concept: ConceptMention) -> list[str]:
        names = {concept.surface}
        canonical = concept.canonical or (self._entry(concept.surface) or LexiconEntry(concept.category, concept.surface)).canonical
        names.add(canonical)
        names.update(s for s, e in self.lexicon.items() if e.canonical == canonical)
        return sorted(names, key=lambda s: (-len(s), s))

    def _occurrences(self, utterance: Utterance, surfaces: list[str]):
        text = utterance.text
        taken: list[tuple[int, int]] = []
        for s in surfaces:
            pos = find_surface(text, s)
            while pos != -1:
                end = pos + len(s)
                if not any(a < end and pos < b for a, b in taken):
                    taken.append((pos, end))
                pos = find_surface(text, s, pos + 1)
        return sorted(taken)

    def _negated(self, before: str, after: str) -> bool:
        tail = before.lower().split()[-6:]
        window = " ".join(tail)
        cjk_tail = before[-4:]
        return (
            _has_cue(window, self.negation_cues)
            or any(cue in cjk_tail for cue in self.negation_cues if not cue.isascii())
            or _has_cue(after, POST_NEGATION_CUES)
        )

    def _state_claims(self, context: Sequence[Utterance], surfaces: list[str]) -> list[_Claim]:
        claims = []
        for pos_in_ctx, u in enumerate(context):
            for start, end in self._occurrences(u, surfaces):
                before, after = _clause_around(u.text, start, end)
                if _is_question(u.text, end):
                    # a yes/no reply from the other side settles it
                    nxt = context[pos_in_ctx + 1] if pos_in_ctx + 1 < len(context) else None
                    if nxt is not None and nxt.role is not u.role:
                        if _starts_with(nxt.text, DENY):
                            claims.append(_Claim(nxt.index, nxt.role, False, (u.index,)))
                        elif _starts_with(nxt.text, AFFIRM):
                            claims.append(_Claim(nxt.index, nxt.role, True, (u.index,)))
                    continue
                claims.append(_Claim(u.index, u.role, not self._negated(before, after)))
        return claims

    def fill_slots(self, context: Sequence[Utterance], concept: ConceptMention) -> list[SlotValue]:
        surfaces = self.surfaces_for(concept)
        if concept.category in (Category.DISEASE, Category.SYMPTOM):
            return self._fill_condition(context, concept, surfaces)
        if concept.category is Category.MEDICATION:
            return self._fill_medication(context, concept, surfaces)
        return self._fill_memory_only(context, concept, surfaces)

    def _memory(self, concept, notes: list[str], turns: set) -> list[SlotValue]:
        notes = list(dict.fromkeys(n for n in notes if n))
        if not notes:
            return []
        return [SlotValue(concept, MEMORY, "; ".join(notes), frozenset(turns), concept.patient)]

    def _durations(self, context, surfaces) -> tuple[list[str], set]:
        notes, turns = [], set()
        for u in context:
            if self._occurrences(u, surfaces):
                for m in DURATION.finditer(u.text):
                    notes.append(m.group(0).lower())
                    turns.add(u.index)
        return notes, turns

    def _fill_condition(self, context, concept, surfaces) -> list[SlotValue]:
        out = []
        claims = sorted(self._state_claims(context, surfaces), key=lambda c: c.turn)
        notes, mem_turns = self._durations(context, surfaces)
        if claims:
            last = claims[-1]
            who = "patient" if last.role is Role.PATIENT else "doctor"
            state = f"{who} claims {'positive' if last.positive else 'negative'}"
            out.append(SlotValue(concept, "state", state, frozenset({last.turn, *last.extra_turns}), concept.patient))
            for old in claims[:-1]:
                old_who = "patient" if old.role is Role.PATIENT else "doctor"
                old_state = f"{old_who} claims {'positive' if old.positive else 'negative'}"
                if old_state != state:
                    notes.append(f"earlier state: {old_state} (turn {old.turn})")
                    mem_turns.add(old.turn)
        history = None
        for u in context:
            for start, end in self._occurrences(u, surfaces):
                before, after = _clause_around(u.text, start, end)
                clause = before + " " + after
                if _has_cue(clause, HISTORY_CUES):
                    tail = " ".join(before.lower().split()[-6:])
                    neg = _has_cue(tail, ("no", "never", "没有"))
                    history = ("no" if neg else "yes", u.index)
        if history:
            out.append(SlotValue(concept, "past_medical_history", history[0], frozenset({history[1]}), concept.patient))
        return out + self._memory(concept, notes, mem_turns)

    def _fill_medication(self, context, concept, surfaces) -> list[SlotValue]:
        taken = effective = recommend = None
        for u in context:
            occ = self._occurrences(u, surfaces)
            if not occ:
                continue
            start, end = occ[0]
            if _is_question(u.text, end):
                continue
            before, after = _clause_around(u.text, start, end)
            if u.role is Role.PATIENT:
                if _has_cue(before, TAKEN_CUES) or _has_cue(after, TAKEN_CUES):
                    taken = ("no" if self._negated(before, "") else "yes", u.index)
                rest = u.text[end:]
                if _has_cue(rest, EFFECTIVE_NEG):
                    effective = ("no", u.index)
                elif _has_cue(rest, EFFECTIVE_POS):
                    effective = ("yes", u.index)
            else:
                if _has_cue(before, RECOMMEND_NEG) or _has_cue(after, RECOMMEND_NEG):
                    recommend = ("no", u.index)
                elif _has_cue(before, RECOMMEND_POS) or _has_cue(after, RECOMMEND_POS):
                    recommend = ("yes", u.index)
        out = []
        for slot, hit in (("whether_taken", taken), ("whether_effective", effective), ("whether_doctor_recommend", recommend)):
            if hit:
                out.append(SlotValue(concept, slot, hit[0], frozenset({hit[1]}), concept.patient))
        notes, turns = self._durations(context, surfaces)
        return out + self._memory(concept, notes, turns)

    def _fill_memory_only(self, context, concept, surfaces) -> list[SlotValue]:
        notes, turns = [], set()
        for u in context:
            if u.index == concept.turn_index and concept.char_span:
                m = re.search(r"\b(\d+)\s+weeks?\b", u.text)
                if m:
                    notes.append(m.group(0).lower())
                    turns.add(u.index)
        return self._memory(concept, notes, turns)

    def extract_characteristics(self, utterances: Sequence[Utterance]) -> list[SlotValue]:
        return rule_characteristics(utterances)


_AGE = re.compile(r"\b(\d{1,3})[- ]?(?:years?|yrs?)[- ]old\b|\bI(?:'m| am) (\d{1,3})\b", re.IGNORECASE)
_GENDER = re.compile(
    r"\bI(?:'m| am)\s+(?:a|an)?\s*(?:\d{1,3}[- ]?(?:years?|yrs?)[- ]old\s+)?(man|woman|male|female|boy|girl|guy|lady)\b",
    re.IGNORECASE,
)
_PREGNANT = re.compile(r"\b(?:pregnant|pregnancy)\b|怀孕", re.IGNORECASE)
_BP = re.compile(r"blood pressure\s+(?:is\s+|of\s+|was\s+|around\s+|about\s+)*(\d{2,3}\s*/\s*\d{2,3})", re.IGNORECASE)
_GENDER_MAP = {"man": "male", "male": "male", "boy": "male", "guy": "male",
               "woman": "female", "female": "female", "girl": "female", "lady": "female"}


def rule_characteristics(utterances: Sequence[Utterance]) -> list[SlotValue]:
    """Regex pass over patient turns for gender, age, blood pressure and pregnancy."""
    found: dict[str, SlotValue] = {}
    for u in utterances:
        if u.role is not Role.PATIENT:
            continue
        text = u.text
        if (m := _AGE.search(text)) is not None:
            found["age"] = SlotValue(None, "age", m.group(1) or m.group(2), frozenset({u.index}))
        if (m := _GENDER.search(text)) is not None:
            found["gender"] = SlotValue(None, "gender", _GENDER_MAP[m.group(1).lower()], frozenset({u.index}))
        if (m := _BP.search(text)) is not None:
            found["blood_pressure"] = SlotValue(None, "blood_pressure", m.group(1).replace(" ", ""), frozenset({u.index}))
        if (m := _PREGNANT.search(text)) is not None and not _is_question(text, m.end()):
            before, after = _clause_around(text, m.start(), m.end())
            tail = " ".join(before.lower().split()[-6:])
            negated = _has_cue(tail, ("not", "no", "never", "isn't", "aren't", "没有", "没")) or "没" in before[-3:]
            found["pregnant"] = SlotValue(None, "pregnant", "no" if negated else "yes", frozenset({u.index}))
    return list(found.values())


# ---------------------------------------------------------------- LLM-backed


def parse_list_output(raw: str) -> list[str]:
    """Strict JSON list first, then the first bracketed span, then a Python literal."""
    candidates = [raw.strip()]
    start, end = raw.find("["), raw.rfind("]")
    if start != -1 and end > start:
        candidates.append(raw[start : end + 1])
    for cand in candidates:
        for loader in (json.loads, ast.literal_eval):
            try:
                val = loader(cand)
            except (ValueError, SyntaxError, TypeError, MemoryError, RecursionError):
                continue
            if isinstance(val, (list, tuple)) and all(isinstance(v, str) for v in val):
                return [v.strip() for v in val if v.strip()]
    raise ExtractionFormatError("expected a list of strings", raw)


def parse_json_output(raw: str) -> dict:
    candidates = [raw.strip()]
    start, end = raw.find("{"), raw.rfind("}")
    if start != -1 and end > start:
        candidates.append(raw[start : end + 1])
    for cand in candidates:
        try:
            val = json.loads(cand)
        except ValueError:
            continue
        if isinstance(val, dict):
            return val
    raise ExtractionFormatError("expected a JSON object", raw)


_STATE_ALIASES = {
    "patient-positive": "patient claims positive",
    "patient-negative": "patient claims negative",
    "doctor-positive": "doctor claims positive",
    "doctor-negative": "doctor claims negative",
}
CATEGORY_DEFINITIONS = {
    Category.DISEASE: "a diagnosed or suspected illness, e.g. cold, gastritis, eczema",
    Category.SYMPTOM: "a sign or complaint the patient experiences, e.g. cough, diarrhea, itching",
    Category.MEDICATION: "a drug or medicinal product, e.g. Aspirin, Loratadine",
    Category.PATIENT_CHARACTERISTIC: "a personal condition relevant to prescribing, e.g. pregnancy, allergy, age group",
}


def _norm_closed(value, vocab, raw, aliases=None) -> str:
    if isinstance(value, bool):
        value = "yes" if value else "no"
    if not isinstance(value, str):
        raise ExtractionFormatError(f"non-string slot value {value!r}", raw)
    v = value.strip().lower()
    v = (aliases or {}).get(v, v)
    if v not in vocab:
        raise ExtractionFormatError(f"value {value!r} outside vocabulary", raw)
    return v


@dataclass
class LLMExtractor:
    """Extraction through a chat client using the shipped instruction templates."""

    client: object
    template_dir: Optional[Path] = None
    demonstrations_dir: Optional[Path] = None
    temperature: float = DEFAULT_TEMPERATURE
    model: str = "default"
    max_tokens: int = 1024
    concurrent_safe: bool = True

    def _template(self, name: str) -> str:
        return tpl.load_template(name, self.template_dir)

    def _demos(self, name: str) -> str:
        base = self.demonstrations_dir or tpl.data_path("demonstrations")
        path = Path(base) / f"{name}.json"
        return tpl.render_demonstrations(tpl.load_demonstrations(path)) if path.exists() else ""

    def _ask(self, prompt: str) -> str:
        req = ChatRequest.user(prompt, temperature=self.temperature, model=self.model, max_tokens=self.max_tokens)
        return self.client.chat(req)

    def extract_concepts(self, text: str, turn_index: int) -> list[ConceptMention]:
        template = self._template("concept_extraction")
        demos = self._demos("concept_extraction")
        out = []
        for cat in Category:
            prompt = tpl.render(template, {
                "Category": cat.value,
                "Definition": CATEGORY_DEFINITIONS[cat],
                "Demonstrations": demos,
                "Context": text,
            })
            for ent in parse_list_output(self._ask(prompt)):
                pos = find_surface(text, ent)
                if pos != -1:
                    out.append(ConceptMention(text[pos : pos + len(ent)], cat, turn_index, (pos, pos + len(ent))))
                else:
                    out.append(ConceptMention(ent, cat, turn_index))
        return out

    def _evidence(self, context, concept) -> frozenset:
        hits = {u.index for u in context if find_surface(u.text, concept.surface) != -1}
        return frozenset(hits or {concept.turn_index})

    def fill_slots(self, context: Sequence[Utterance], concept: ConceptMention) -> list[SlotValue]:
        if concept.category is Category.PATIENT_CHARACTERISTIC:
            return []
        is_med = concept.category is Category.MEDICATION
        name = "slot_filling_medication" if is_med else "slot_filling"
        prompt = tpl.render(self._template(name), {
            "Demonstrations": self._demos(name),
            "Context": "\n".join(u.render() for u in context),
            "Disease/Symptom": concept.surface,
            "Medication": concept.surface,
        })
        raw = self._ask(prompt)
        data = parse_json_output(raw)
        ev = self._evidence(context, concept)
        out = []
        if is_med:
            keys = {"whether taken": "whether_taken", "whether effective": "whether_effective",
                    "whether doctor recommend": "whether_doctor_recommend"}
            for key, slot in keys.items():
                val = data.get(key, data.get(slot))
                if val is not None:
                    out.append(SlotValue(concept, slot, _norm_closed(val, YES_NO_UNKNOWN, raw), ev, concept.patient))
        else:
            state = data.get("main-state", data.get("state"))
            if state is not None:
                out.append(SlotValue(concept, "state", _norm_closed(state, STATE_VALUES, raw, _STATE_ALIASES), ev, concept.patient))
            hist = data.get("past medical history", data.get("past_medical_history"))
            if hist is not None:
                out.append(SlotValue(concept, "past_medical_history", _norm_closed(hist, YES_NO_UNKNOWN, raw), ev, concept.patient))
        other = data.get("other relevant information", data.get("memory"))
        if other:
            if isinstance(other, str):
                other = [other]
            notes = [str(o).strip() for o in other if str(o).strip()]
            if notes:
                out.append(SlotValue(concept, MEMORY, "; ".join(notes), ev, concept.patient))
        return out

    def extract_characteristics(self, utterances: Sequence[Utterance]) -> list[SlotValue]:
        patient = [u for u in utterances if u.role is Role.PATIENT]
        if not patient:
            return []
        prompt = tpl.render(self._template("characteristics"), {
            "Demonstrations": self._demos("characteristics"),
            "Context": "\n".join(u.render() for u in patient),
        })
        raw = self._ask(prompt)
        data = parse_json_output(raw)
        last = frozenset({patient[-1].index})
        out = []
        for slot, vocab in CHARACTERISTIC_SLOTS.items():
            val = data.get(slot)
            if val in (None, "", "unknown"):
                continue
            val = _norm_closed(val, vocab, raw) if vocab else str(val).strip()
            ev = frozenset(u.index for u in patient if slot != "age" and find_surface(u.text, val) != -1) or last
            out.append(SlotValue(None, slot, val, ev))
        return out
