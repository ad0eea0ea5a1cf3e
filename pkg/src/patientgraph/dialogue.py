"""Dialogue representation and turn bookkeeping."""

from __future__ import annotations

import enum
import io
import json
import unicodedata
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Sequence, Union


class Role(str, enum.Enum):
    PATIENT = "patient"
    DOCTOR = "doctor"


class Department(str, enum.Enum):
    RESPIRATORY = "Respiratory"
    GASTROENTEROLOGY = "Gastroenterology"
    DERMATOLOGY = "Dermatology"
    OTHER = "Other"


class DialogueFormatError(ValueError):
    """Raised for malformed or schema-violating dialogue records."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DialogueParseError(DialogueFormatError):
    pass


class DialogueSchemaError(DialogueFormatError):
    pass


def _nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


@dataclass(frozen=True)
class Utterance:
    index: int
    role: Role
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise DialogueSchemaError(f"utterance {self.index} has empty text")

    def render(self) -> str:
        return f"{self.role.value.capitalize()}: {self.text}"


@dataclass(frozen=True)
class Dialogue:
    id: str
    turns: tuple[Utterance, ...] = ()
    department: Optional[Department] = None
    gold_medications: Optional[frozenset[str]] = None
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        for expected, turn in enumerate(self.turns):
            if turn.index != expected:
                raise DialogueSchemaError(
                    f"dialogue {self.id!r}: turn indices must be 0..n-1 in order, "
                    f"got {turn.index} at position {expected}"
                )

    @classmethod
    def from_pairs(cls, id: str, pairs: Iterable[tuple[str, str]], **kwargs) -> "Dialogue":
        turns = tuple(
            Utterance(i, Role(role), _nfc(text)) for i, (role, text) in enumerate(pairs)
        )
        return cls(id=id, turns=turns, **kwargs)

    def __len__(self) -> int:
        return len(self.turns)

    def patient_turns(self) -> list[int]:
        return [u.index for u in self.turns if u.role is Role.PATIENT]

    def last_patient_index(self) -> Optional[int]:
        idx = self.patient_turns()
        return idx[-1] if idx else None

    def ends_with_patient(self) -> bool:
        return bool(self.turns) and self.turns[-1].role is Role.PATIENT

    def history(self) -> "Dialogue":
        """Prefix ending at the last patient turn: the input for generating the next doctor turn."""
        last = self.last_patient_index()
        if last is None:
            return self.with_turns(())
        return self.with_turns(self.turns[: last + 1])

    def with_turns(self, turns: Sequence[Utterance]) -> "Dialogue":
        return Dialogue(
            id=self.id,
            turns=tuple(turns),
            department=self.department,
            gold_medications=self.gold_medications,
            meta=self.meta,
        )

    def append(self, role: Union[Role, str], text: str) -> "Dialogue":
        turn = Utterance(len(self.turns), Role(role), _nfc(text))
        return self.with_turns(self.turns + (turn,))

    def consecutive_same_role(self) -> list[tuple[int, int]]:
        """Index pairs (i, i+1) where two adjacent turns share a role."""
        return [
            (a.index, b.index)
            for a, b in zip(self.turns, self.turns[1:])
            if a.role is b.role
        ]

    def merged(self) -> "Dialogue":
        """Merge runs of same-role turns into one turn each, re-indexing."""
        merged: list[tuple[Role, list[str]]] = []
        for u in self.turns:
            if merged and merged[-1][0] is u.role:
                merged[-1][1].append(u.text)
            else:
                merged.append((u.role, [u.text]))
        turns = tuple(Utterance(i, role, " ".join(texts)) for i, (role, texts) in enumerate(merged))
        return self.with_turns(turns)

    def render(self, upto: Optional[int] = None) -> str:
        turns = self.turns if upto is None else self.turns[: upto + 1]
        return "\n".join(u.render() for u in turns)


def context_window(
    d: Dialogue,
    center: int,
    k: Optional[int],
    cap: Optional[int] = None,
) -> list[Utterance]:
    """Utterances within ``k`` patient/doctor exchanges of ``center``.

    A radius of ``k`` exchanges spans ``2k`` utterances on each side because
    roles interleave. ``k=None`` means unbounded and yields the whole history
    up to and including ``center``. ``cap`` limits the result to the utterances
    closest to the center (ties broken toward earlier turns).
    """
    if not 0 <= center < len(d.turns):
        raise IndexError(f"center {center} out of range for dialogue of {len(d.turns)} turns")
    if d.turns[center].role is not Role.PATIENT:
        raise ValueError(f"center {center} is not a patient turn")
    if k is None:
        lo, hi = 0, center
    else:
        if k < 0:
            raise ValueError("window radius must be >= 0")
        lo = max(0, center - 2 * k)
        hi = min(len(d.turns) - 1, center + 2 * k)
    window = list(d.turns[lo : hi + 1])
    if cap is not None and len(window) > cap:
        if cap < 1:
            raise ValueError("cap must be >= 1")
        keep = sorted(window, key=lambda u: (abs(u.index - center), u.index))[:cap]
        window = sorted(keep, key=lambda u: u.index)
    return window


def _parse_record(obj, line: int) -> Dialogue:
    if not isinstance(obj, dict):
        raise DialogueSchemaError("record must be a JSON object", line)
    if "id" not in obj or not isinstance(obj["id"], str):
        raise DialogueSchemaError("missing or non-string 'id'", line)
    raw_turns = obj.get("turns")
    if not isinstance(raw_turns, list):
        raise DialogueSchemaError("'turns' must be a list", line)
    turns = []
    for i, t in enumerate(raw_turns):
        if not isinstance(t, dict) or not isinstance(t.get("text"), str):
            raise DialogueSchemaError(f"turn {i} must be an object with string 'text'", line)
        try:
            role = Role(t.get("role"))
        except ValueError:
            raise DialogueSchemaError(f"turn {i} has unknown role {t.get('role')!r}", line) from None
        text = _nfc(t["text"])
        if not text.strip():
            raise DialogueSchemaError(f"turn {i} has empty text", line)
        turns.append(Utterance(i, role, text))
    dept = obj.get("department")
    if dept is not None:
        try:
            dept = Department(dept)
        except ValueError:
            raise DialogueSchemaError(f"unknown department {dept!r}", line) from None
    gold = obj.get("gold_medications")
    if gold is not None:
        if not isinstance(gold, list) or not all(isinstance(g, str) for g in gold):
            raise DialogueSchemaError("'gold_medications' must be a list of strings", line)
        gold = frozenset(_nfc(g) for g in gold)
    return Dialogue(id=_nfc(obj["id"]), turns=tuple(turns), department=dept, gold_medications=gold)


def load_dialogues(source: Union[IO[bytes], IO[str], str, bytes], format: str = "jsonl") -> list[Dialogue]:
    """Parse a JSON Lines dialogue stream. Blank lines are skipped."""
    if format.lower() not in ("jsonl", "jsonlines"):
        raise ValueError(f"unsupported dialogue format {format!r}")
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    elif isinstance(source, str):
        source = io.StringIO(source)
    dialogues = []
    for lineno, raw in enumerate(source, start=1):
        if isinstance(raw, bytes):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise DialogueParseError(f"invalid UTF-8: {exc}", lineno) from None
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DialogueParseError(f"invalid JSON: {exc.msg}", lineno) from None
        dialogues.append(_parse_record(obj, lineno))
    return dialogues


def read_dialogues(path) -> list[Dialogue]:
    with open(path, "rb") as fh:
        return load_dialogues(fh)


def dialogue_to_dict(d: Dialogue) -> dict:
    return {
        "id": d.id,
        "department": d.department.value if d.department else None,
        "turns": [{"role": u.role.value, "text": u.text} for u in d.turns],
        "gold_medications": sorted(d.gold_medications) if d.gold_medications is not None else None,
    }


def dump_dialogues(dialogues: Iterable[Dialogue]) -> str:
    return "".join(
        json.dumps(dialogue_to_dict(d), ensure_ascii=False) + "\n" for d in dialogues
    )
