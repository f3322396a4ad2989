"""Dialogue corpus ingestion and the persona-keyed document store.

Wire format is JSON Lines, one dialogue per line:

    {"dialogue_id": "...",
     "persona": ["sentence", ...],
     "documents": [["sentence", ...], ...],   # parallel to persona
     "turns": [{"speaker": "USER"|"SYSTEM", "text": "...",
                "grounding": {"sources": [...],
                              "persona_index": int,
                              "knowledge_indices": [int, ...]}}, ...]}

`documents[i]` holds the knowledge sentences for `persona[i]`; that keying is
the dependency between the two sources. Grounding labels mark which sources a
SYSTEM turn draws from: [] (none), ["PERSONA"], or ["PERSONA", "DOCUMENTS"].
Errors are line-addressed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .errors import (
    EmptyCorpus,
    InvariantViolation,
    ParseError,
    SchemaError,
    UnknownAttribute,
)
from .registry import DOCUMENTS, PERSONA, SourceId
from .text import Tokenizer, tokenize


class Speaker(str, Enum):
    USER = "USER"
    SYSTEM = "SYSTEM"


_LEGAL_SOURCE_LISTS = ((), (PERSONA,), (PERSONA, DOCUMENTS))


@dataclass(frozen=True)
class GroundingLabel:
    sources: tuple[SourceId, ...] = ()
    persona_index: int | None = None
    knowledge_indices: tuple[int, ...] | None = None


@dataclass(frozen=True)
class Turn:
    speaker: Speaker
    text: str
    grounding: GroundingLabel | None = None


DialogueContext = tuple[Turn, ...]


@dataclass(frozen=True)
class DialogueRecord:
    dialogue_id: str
    persona: tuple[str, ...]
    documents: tuple[tuple[str, ...], ...]
    turns: tuple[Turn, ...]


@dataclass(frozen=True)
class KnowledgeTuple:
    head: str
    attribute: str
    tail: str


@dataclass(frozen=True)
class CorpusStats:
    n_dialogues: int
    n_samples: int
    avg_turns: float
    n_utterances: int
    avg_length: float
    frac_resp_with_persona: float
    frac_resp_with_p_and_k: float


def validate_record(record: DialogueRecord, line: int | None = None) -> None:
    """Enforce structural invariants; raises InvariantViolation."""

    def bad(detail: str) -> InvariantViolation:
        return InvariantViolation(record.dialogue_id, detail, line)

    if not record.dialogue_id:
        raise InvariantViolation("", "empty dialogue_id", line)
    if len(record.documents) != len(record.persona):
        raise bad(
            f"documents has {len(record.documents)} entries "
            f"but persona has {len(record.persona)}"
        )
    if not record.turns:
        raise bad("no turns")
    for i, turn in enumerate(record.turns):
        expected = Speaker.USER if i % 2 == 0 else Speaker.SYSTEM
        if turn.speaker is not expected:
            raise bad(f"turn {i} must be {expected.value}, got {turn.speaker.value}")
        if not turn.text.strip():
            raise bad(f"turn {i} has empty text")
        if turn.speaker is Speaker.USER and turn.grounding is not None:
            raise bad(f"turn {i}: USER turns carry no grounding")
        if turn.grounding is not None:
            _validate_grounding(record, i, turn.grounding, line)


def _validate_grounding(
    record: DialogueRecord, turn_idx: int, g: GroundingLabel, line: int | None
) -> None:
    def bad(detail: str) -> InvariantViolation:
        return InvariantViolation(record.dialogue_id, f"turn {turn_idx}: {detail}", line)

    if g.sources not in _LEGAL_SOURCE_LISTS:
        raise bad(f"illegal grounding sources {list(g.sources)}")
    if (g.persona_index is not None) != (PERSONA in g.sources):
        raise bad("persona_index present iff PERSONA in sources")
    if (g.knowledge_indices is not None) != (DOCUMENTS in g.sources):
        raise bad("knowledge_indices present iff DOCUMENTS in sources")
    if g.persona_index is not None:
        if not 0 <= g.persona_index < len(record.persona):
            raise bad(
                f"persona_index {g.persona_index} out of range "
                f"(|persona| = {len(record.persona)})"
            )
    if g.knowledge_indices is not None:
        docs = record.documents[g.persona_index]  # persona_index checked above
        if not g.knowledge_indices:
            raise bad("knowledge_indices must be non-empty when DOCUMENTS in sources")
        for k in g.knowledge_indices:
            if not 0 <= k < len(docs):
                raise bad(
                    f"knowledge index {k} out of range "
                    f"(|documents[{g.persona_index}]| = {len(docs)})"
                )


def _expect(obj: dict, field: str, kind: type, line: int, path: str = ""):
    where = f"{path}.{field}" if path else field
    if field not in obj:
        raise SchemaError(line, where, "missing")
    value = obj[field]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise SchemaError(line, where, f"expected number, got {type(value).__name__}")
        return value
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise SchemaError(line, where, f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def _str_list(obj: dict, field: str, line: int, path: str = "") -> list[str]:
    value = _expect(obj, field, list, line, path)
    where = f"{path}.{field}" if path else field
    for i, item in enumerate(value):
        if not isinstance(item, str):
            raise SchemaError(line, f"{where}[{i}]", "expected string")
    return value


def _parse_grounding(obj, line: int, path: str) -> GroundingLabel:
    if not isinstance(obj, dict):
        raise SchemaError(line, path, "expected object")
    sources = tuple(_str_list(obj, "sources", line, path))
    persona_index = None
    if "persona_index" in obj:
        persona_index = _expect(obj, "persona_index", int, line, path)
    knowledge_indices = None
    if "knowledge_indices" in obj:
        raw = _expect(obj, "knowledge_indices", list, line, path)
        for i, item in enumerate(raw):
            if not isinstance(item, int) or isinstance(item, bool):
                raise SchemaError(line, f"{path}.knowledge_indices[{i}]", "expected integer")
        knowledge_indices = tuple(raw)
    return GroundingLabel(sources, persona_index, knowledge_indices)


def _parse_turn(obj, line: int, idx: int) -> Turn:
    path = f"turns[{idx}]"
    if not isinstance(obj, dict):
        raise SchemaError(line, path, "expected object")
    speaker_raw = _expect(obj, "speaker", str, line, path)
    try:
        speaker = Speaker(speaker_raw)
    except ValueError:
        raise SchemaError(line, f"{path}.speaker", f"unknown speaker {speaker_raw!r}") from None
    text = _expect(obj, "text", str, line, path)
    grounding = None
    if obj.get("grounding") is not None:
        grounding = _parse_grounding(obj["grounding"], line, f"{path}.grounding")
    return Turn(speaker, text, grounding)


def _parse_record(obj, line: int) -> DialogueRecord:
    if not isinstance(obj, dict):
        raise SchemaError(line, "", "expected object")
    dialogue_id = _expect(obj, "dialogue_id", str, line)
    persona = tuple(_str_list(obj, "persona", line))
    docs_raw = _expect(obj, "documents", list, line)
    documents = []
    for i, entry in enumerate(docs_raw):
        if not isinstance(entry, list):
            raise SchemaError(line, f"documents[{i}]", "expected list")
        for j, sent in enumerate(entry):
            if not isinstance(sent, str):
                raise SchemaError(line, f"documents[{i}][{j}]", "expected string")
        documents.append(tuple(entry))
    turns_raw = _expect(obj, "turns", list, line)
    turns = tuple(_parse_turn(t, line, i) for i, t in enumerate(turns_raw))
    record = DialogueRecord(dialogue_id, persona, tuple(documents), turns)
    validate_record(record, line)
    return record


def load_dataset(path: str | Path) -> list[DialogueRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON: {exc.msg}") from None
            records.append(_parse_record(obj, lineno))
    return records


def record_to_obj(record: DialogueRecord) -> dict:
    turns = []
    for turn in record.turns:
        obj: dict = {"speaker": turn.speaker.value, "text": turn.text}
        if turn.grounding is not None:
            g: dict = {"sources": list(turn.grounding.sources)}
            if turn.grounding.persona_index is not None:
                g["persona_index"] = turn.grounding.persona_index
            if turn.grounding.knowledge_indices is not None:
                g["knowledge_indices"] = list(turn.grounding.knowledge_indices)
            obj["grounding"] = g
        turns.append(obj)
    return {
        "dialogue_id": record.dialogue_id,
        "persona": list(record.persona),
        "documents": [list(d) for d in record.documents],
        "turns": turns,
    }


def dump_dataset(records: list[DialogueRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_obj(record), ensure_ascii=False) + "\n")


def stats(records: list[DialogueRecord], tokenizer: Tokenizer = tokenize) -> CorpusStats:
    if not records:
        raise EmptyCorpus("no dialogues")
    n_utterances = 0
    n_tokens = 0
    n_samples = 0
    with_persona = 0
    with_p_and_k = 0
    for record in records:
        for turn in record.turns:
            n_utterances += 1
            n_tokens += len(tokenizer(turn.text))
            if turn.speaker is Speaker.SYSTEM:
                n_samples += 1
                g = turn.grounding
                if g is not None and PERSONA in g.sources:
                    with_persona += 1
                if g is not None and DOCUMENTS in g.sources:
                    with_p_and_k += 1
    return CorpusStats(
        n_dialogues=len(records),
        n_samples=n_samples,
        avg_turns=n_samples / len(records),
        n_utterances=n_utterances,
        avg_length=n_tokens / n_utterances if n_utterances else 0.0,
        frac_resp_with_persona=with_persona / n_samples if n_samples else 0.0,
        frac_resp_with_p_and_k=with_p_and_k / n_samples if n_samples else 0.0,
    )


_TEMPLATE_KINDS = ("possessive", "contains")


def render_tuple(
    t: KnowledgeTuple,
    template_table: dict[str, str],
    default_kind: str | None = None,
) -> str:
    kind = template_table.get(t.attribute, default_kind)
    if kind is None:
        raise UnknownAttribute(f"no template for attribute {t.attribute!r}")
    if kind not in _TEMPLATE_KINDS:
        raise ValueError(f"unknown template kind {kind!r}")
    if kind == "possessive":
        return f"{t.head}'s {t.attribute} is {t.tail}"
    return f"The {t.attribute} of {t.head} contains {t.tail}"


def match_persona_knowledge(
    persona: str,
    tuples: list[KnowledgeTuple],
    tokenizer: Tokenizer = tokenize,
    stopwords: frozenset[str] = frozenset(),
) -> list[KnowledgeTuple]:
    """Tuples whose head or tail exactly equals a non-stopword persona token."""
    tokens = set(tokenizer(persona)) - stopwords
    matched = []
    seen = set()
    for t in tuples:
        if t in seen:
            continue
        if t.head in tokens or t.tail in tokens:
            matched.append(t)
            seen.add(t)
    return matched


def load_tuples(path: str | Path) -> list[KnowledgeTuple]:
    tuples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise SchemaError(lineno, "", "expected object")
            t = KnowledgeTuple(
                head=_expect(obj, "head", str, lineno),
                attribute=_expect(obj, "attribute", str, lineno),
                tail=_expect(obj, "tail", str, lineno),
            )
            if not (t.head and t.attribute and t.tail):
                raise SchemaError(lineno, "", "head/attribute/tail must be non-empty")
            tuples.append(t)
    return tuples


def load_template_table(path: str | Path) -> dict[str, str]:
    table = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(table, dict):
        raise ValueError("template table must be a JSON object")
    for attr, kind in table.items():
        if kind not in _TEMPLATE_KINDS:
            raise ValueError(f"attribute {attr!r}: unknown template kind {kind!r}")
    return table


def render_transcript(turns: DialogueContext) -> str:
    """"User: ..." / "System: ..." lines, newline-separated."""
    prefix = {Speaker.USER: "User", Speaker.SYSTEM: "System"}
    return "\n".join(f"{prefix[t.speaker]}: {t.text}" for t in turns)


def context_text(turns: DialogueContext, window: int | None = None) -> str:
    """Retrieval query text: turn texts joined by single spaces.

    `window` keeps only the last that many turns (default: all).
    """
    kept = turns if window is None else turns[-window:]
    return " ".join(t.text for t in kept)
