from __future__ import annotations

import json
from pathlib import Path

import pytest

from kgdial import (
    DialogueRecord,
    GroundingLabel,
    SourceRegistry,
    Speaker,
    Turn,
    load_dataset,
    persona_knowledge_registry,
)

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def records() -> tuple[DialogueRecord, ...]:
    return tuple(load_dataset(DATA_DIR / "dialogues.jsonl"))


@pytest.fixture(scope="session")
def train_records() -> tuple[DialogueRecord, ...]:
    return tuple(load_dataset(DATA_DIR / "train.jsonl"))


@pytest.fixture()
def registry() -> SourceRegistry:
    return persona_knowledge_registry()


def make_record(
    dialogue_id: str = "x1",
    persona: tuple[str, ...] = ("I love jazz music", "I grow tomatoes"),
    documents: tuple[tuple[str, ...], ...] = (
        ("jazz clubs open late downtown", "trumpet lessons cost little"),
        ("tomatoes need full sun", "water tomatoes every morning"),
    ),
    turns: tuple[Turn, ...] | None = None,
) -> DialogueRecord:
    """A small, valid, two-persona record for unit tests."""
    if turns is None:
        turns = (
            Turn(Speaker.USER, "what should I do tonight"),
            Turn(
                Speaker.SYSTEM,
                "go hear some jazz music downtown",
                GroundingLabel(sources=("PERSONA",), persona_index=0),
            ),
        )
    return DialogueRecord(dialogue_id, persona, documents, turns)


def dump_rows(rows: list[dict], path: Path) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    return path


def fixture_rows() -> list[dict]:
    """The bundled dataset as mutable dicts, for corruption tests."""
    rows = []
    with open(DATA_DIR / "dialogues.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows
