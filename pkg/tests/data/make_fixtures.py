"""Regenerate the committed test fixtures in this directory.

Run from the repository root after installing the package:

    python3 tests/data/make_fixtures.py

Outputs: dialogues.jsonl, train.jsonl, replay.jsonl, golden_config.json,
golden_report.json.  The dataset is hand-designed so that every evaluation
path is exercised: all three decision classes appear, one sample grounds
two knowledge entries at once, two scripted planner replies are deliberate
mistakes (one collapses to NULL, one names the sources in reverse), a few
scripted responses are truncated so the text metrics dip below 1.0, and
two queries are phrased so first-stage retrieval misses.
"""

from __future__ import annotations

import json
from pathlib import Path

from kgdial import (
    BackendDescriptor,
    BackendKind,
    DialogueRecord,
    GroundingLabel,
    JudgeDescriptor,
    JudgeKind,
    PipelineConfig,
    PlanDecision,
    PlannerPolicy,
    PlannerPromptSpec,
    ResponseMode,
    RetrievalMode,
    Speaker,
    Turn,
    build_planning_prompt,
    decision_text,
    dump_dataset,
    parse_decision,
    persona_knowledge_registry,
    render_input,
    report_to_json,
    retrieve_plan,
    run_eval,
    validate_record,
)
from kgdial.pipeline import iter_samples

HERE = Path(__file__).parent

TOPICS = (
    "cooking", "jazz", "hiking", "painting", "chess",
    "gardening", "cycling", "pottery", "astronomy", "baking",
)

# Per dialogue: list of system-turn plans.  Each entry is
# (decision class, persona index, knowledge indices, query phrasing).
# Phrasing "plain" mentions the grounded tokens, "vague" mentions none
# (forcing a retrieval miss), "wrongrule" mentions a sibling entry's
# rule token so first-stage document retrieval picks the wrong entry.
PLANS: dict[int, list[tuple]] = {
    1: [("NULL", None, None, "plain"), ("PERSONA", 0, None, "plain")],
    2: [("PERSONA", 1, None, "plain"), ("BOTH", 2, [0], "plain")],
    3: [("BOTH", 0, [1], "plain"), ("NULL", None, None, "plain")],
    4: [("BOTH", 1, [2], "plain")],
    5: [("NULL", None, None, "plain"), ("BOTH", 2, [1], "vague")],
    6: [("PERSONA", 2, None, "plain"), ("BOTH", 0, [0, 2], "plain")],
    7: [("BOTH", 1, [1], "wrongrule"), ("PERSONA", 0, None, "plain")],
    8: [("NULL", None, None, "plain"), ("BOTH", 2, [0], "plain")],
    9: [("BOTH", 0, [2], "plain"), ("BOTH", 1, [0], "plain")],
    10: [("PERSONA", 2, None, "plain"), ("NULL", None, None, "plain")],
}

# Scripted planner replies that deviate from the gold decision text.
PLANNER_MISTAKES = {
    "d4:1": "DOCUMENTS",
    "d9:3": "I would use DOCUMENTS then PERSONA for this one.",
}

# Samples whose scripted response drops the last two reference tokens.
TRUNCATED = {"d2:3", "d7:1", "d10:1"}

# d8's third persona keeps only two knowledge entries (ragged shape).
DOC_COUNTS = {(8, 2): 2}


def topic(d: int, i: int) -> str:
    return TOPICS[(d - 1 + i) % len(TOPICS)]


def persona_text(d: int, i: int) -> str:
    return f"I adore {topic(d, i)} activity a{d}p{i} every weekend"


def doc_text(d: int, i: int, j: int) -> str:
    return f"The {topic(d, i)} guide g{d}p{i}k{j} mentions rule r{j} for fans"


def user_text(d: int, k: int, plan: tuple) -> str:
    cls, i, js, phrasing = plan
    if phrasing == "vague":
        return f"Could you share one more hint u{d}t{k}?"
    if cls == "NULL":
        return f"Shall we keep chatting about the weather u{d}t{k}?"
    if cls == "PERSONA":
        return f"Tell me about your {topic(d, i)} routine a{d}p{i} u{d}t{k}?"
    rule = 0 if phrasing == "wrongrule" else js[0]
    return f"Any {topic(d, i)} advice a{d}p{i} like rule r{rule} u{d}t{k}?"


def reference_text(d: int, k: int, plan: tuple) -> str:
    cls, i, js, _ = plan
    if cls == "NULL":
        return f"Of course, happy to keep talking in d{d} turn {k}."
    if cls == "PERSONA":
        return f"You know {persona_text(d, i)}, so I am glad you asked."
    facts = " and ".join(doc_text(d, i, j) for j in js)
    return f"Since {persona_text(d, i)}, note {facts}, what a treat."


def build_record(d: int, dialogue_id: str, plans: list[tuple]) -> DialogueRecord:
    persona = tuple(persona_text(d, i) for i in range(3))
    documents = tuple(
        tuple(doc_text(d, i, j) for j in range(DOC_COUNTS.get((d, i), 3)))
        for i in range(3)
    )
    turns: list[Turn] = []
    for k, plan in enumerate(plans):
        cls, i, js, _ = plan
        turns.append(Turn(Speaker.USER, user_text(d, k, plan)))
        if cls == "NULL":
            grounding = GroundingLabel(sources=())
        elif cls == "PERSONA":
            grounding = GroundingLabel(sources=("PERSONA",), persona_index=i)
        else:
            grounding = GroundingLabel(
                sources=("PERSONA", "DOCUMENTS"),
                persona_index=i,
                knowledge_indices=tuple(js),
            )
        turns.append(Turn(Speaker.SYSTEM, reference_text(d, k, plan), grounding))
    record = DialogueRecord(dialogue_id, persona, documents, tuple(turns))
    validate_record(record)
    return record


def main() -> None:
    records = [build_record(d, f"d{d}", PLANS[d]) for d in sorted(PLANS)]
    dump_dataset(records, HERE / "dialogues.jsonl")

    train_plans = {
        11: [("NULL", None, None, "plain"), ("PERSONA", 0, None, "plain")],
        12: [("BOTH", 1, [0], "plain"), ("PERSONA", 2, None, "plain")],
    }
    train = [
        build_record(d, f"t{d - 10}", train_plans[d]) for d in sorted(train_plans)
    ]
    dump_dataset(train, HERE / "train.jsonl")

    # Replay table: walk every sample the way the pipeline does, so the
    # prompt keys match byte for byte.
    registry = persona_knowledge_registry()
    prompt_spec = PlannerPromptSpec(registry=registry)
    base_cfg = PipelineConfig(dataset_path=str(HERE / "dialogues.jsonl"))
    rows = []
    for sample in iter_samples(records):
        gold = sample.turn.grounding
        prompt = build_planning_prompt(sample.context, prompt_spec)
        reply = PLANNER_MISTAKES.get(sample.sample_id)
        if reply is None:
            reply = decision_text(PlanDecision(tuple(gold.sources)))
        rows.append({"prompt_key": prompt, "response": reply})
        decision = parse_decision(reply, registry).decision
        evidence = retrieve_plan(
            decision, sample.context, sample.record, base_cfg.retrieval, registry
        )
        rendered = render_input(sample.context, decision, evidence).rendered
        reference = sample.turn.text
        if sample.sample_id in TRUNCATED:
            response = " ".join(reference.split()[:-2])
        else:
            response = reference
        rows.append({"prompt_key": rendered, "response": response})
    with open(HERE / "replay.jsonl", "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")

    cfg = PipelineConfig(
        dataset_path=str(HERE / "dialogues.jsonl"),
        planner_mode=PlannerPolicy.BACKEND_ZERO_SHOT,
        retrieval_mode=RetrievalMode.RETRIEVER,
        response_mode=ResponseMode.BACKEND,
        backend=BackendDescriptor(
            kind=BackendKind.SCRIPTED, replay_path=str(HERE / "replay.jsonl")
        ),
        judge=JudgeDescriptor(kind=JudgeKind.RULE, threshold=0.5),
    )
    artifacts = run_eval(cfg)
    if artifacts.errors:
        raise SystemExit(f"golden run hit {artifacts.errors} sample errors")
    (HERE / "golden_report.json").write_text(
        report_to_json(artifacts.report) + "\n", encoding="utf-8"
    )

    # A ready-to-run config with paths relative to this directory, for the
    # command line walkthrough in the README.
    config_obj = {
        "dataset_path": "dialogues.jsonl",
        "planner_mode": "BACKEND_ZERO_SHOT",
        "retrieval_mode": "RETRIEVER",
        "response_mode": "BACKEND",
        "backend": {"kind": "SCRIPTED", "replay_path": "replay.jsonl"},
        "judge": {"kind": "RULE", "threshold": 0.5},
    }
    (HERE / "golden_config.json").write_text(
        json.dumps(config_obj, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"wrote fixtures for {len(records)} dialogues to {HERE}")


if __name__ == "__main__":
    main()
