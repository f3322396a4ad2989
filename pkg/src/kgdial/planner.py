"""Source planning: decide which knowledge sources a turn needs, in order.

Covers the supervised special-token serialization ("[SOURCE] PERSONA,
DOCUMENTS [EOS]"), zero-shot and in-context prompt construction for
unsupervised planning, and normalization of raw model output into a decision
that always respects the dependency graph:

- a recognized set missing one of its dependencies collapses to NULL (the
  treatment of a bare DOCUMENTS answer);
- a complete set in the wrong order is reordered, preserving the model's
  intent, and flagged for the audit log.
"""

from __future__ import annotations

import re
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

from .backends import GenerationBackend, GenerationRequest
from .corpus import DialogueContext, DialogueRecord, Speaker, render_transcript
from .errors import MissingDescription, PreconditionError
from .registry import SourceId, SourceRegistry

FLAG_UNPARSED = "unparsed"
FLAG_COLLAPSED = "collapsed_incomplete"
FLAG_REORDERED = "reordered"


@dataclass(frozen=True)
class SpecialTokens:
    source_open: str = "[SOURCE]"
    source_close: str = "[EOS]"
    middle_open: str = "[MIDDLE]"
    middle_close: str = "[EOM]"
    null_token: str = "NULL"

    def __post_init__(self) -> None:
        tokens = (
            self.source_open,
            self.source_close,
            self.middle_open,
            self.middle_close,
            self.null_token,
        )
        if len(set(tokens)) != len(tokens):
            raise ValueError("special tokens must be pairwise distinct")
        if not all(tokens):
            raise ValueError("special tokens must be non-empty")

    def all(self) -> tuple[str, ...]:
        return (
            self.source_open,
            self.source_close,
            self.middle_open,
            self.middle_close,
            self.null_token,
        )


DEFAULT_TOKENS = SpecialTokens()


@dataclass(frozen=True)
class PlanDecision:
    sources: tuple[SourceId, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "sources", tuple(self.sources))
        if len(set(self.sources)) != len(self.sources):
            raise ValueError(f"duplicate sources in decision: {self.sources}")

    @property
    def is_null(self) -> bool:
        return not self.sources


NULL_DECISION = PlanDecision()


class PromptMode(str, Enum):
    ZERO_SHOT = "ZERO_SHOT"
    IN_CONTEXT = "IN_CONTEXT"


Demonstration = tuple[DialogueContext, PlanDecision]


@dataclass(frozen=True)
class PlannerPromptSpec:
    registry: SourceRegistry
    mode: PromptMode = PromptMode.ZERO_SHOT
    demonstrations: tuple[Demonstration, ...] = field(default_factory=tuple)
    template_dir: str | None = None

    def __post_init__(self) -> None:
        if self.mode is PromptMode.IN_CONTEXT and not self.demonstrations:
            raise ValueError("IN_CONTEXT mode requires at least one demonstration")
        if self.mode is PromptMode.ZERO_SHOT and self.demonstrations:
            raise ValueError("ZERO_SHOT mode takes no demonstrations")


def load_template(name: str, template_dir: str | None = None) -> str:
    if template_dir is not None:
        return (Path(template_dir) / name).read_text(encoding="utf-8")
    return (resources.files("kgdial") / "templates" / name).read_text(encoding="utf-8")


def decision_text(d: PlanDecision, toks: SpecialTokens = DEFAULT_TOKENS) -> str:
    return ", ".join(d.sources) if d.sources else toks.null_token


def serialize_decision(d: PlanDecision, toks: SpecialTokens = DEFAULT_TOKENS) -> str:
    return f"{toks.source_open} {decision_text(d, toks)} {toks.source_close}"


@dataclass(frozen=True)
class ParsedPlan:
    decision: PlanDecision
    flags: tuple[str, ...] = ()


def _word_pattern(name: str) -> re.Pattern[str]:
    # ASCII-only boundaries so names adjacent to CJK text still match.
    return re.compile(
        rf"(?<![A-Za-z0-9_]){re.escape(name)}(?![A-Za-z0-9_])", re.IGNORECASE
    )


def parse_decision(
    raw: str,
    registry: SourceRegistry,
    toks: SpecialTokens = DEFAULT_TOKENS,
) -> ParsedPlan:
    """Normalize arbitrary backend text into a dependency-valid decision."""
    span = raw
    open_at = raw.find(toks.source_open)
    if open_at >= 0:
        close_at = raw.find(toks.source_close, open_at + len(toks.source_open))
        if close_at >= 0:
            span = raw[open_at + len(toks.source_open) : close_at]

    hits: list[tuple[int, SourceId]] = []
    for name in registry.names:
        for m in _word_pattern(name).finditer(span):
            hits.append((m.start(), name))
    hits.sort()
    recognized: list[SourceId] = []
    for _, name in hits:
        if name not in recognized:
            recognized.append(name)

    if not recognized:
        if _word_pattern(toks.null_token).search(span):
            return ParsedPlan(NULL_DECISION)
        return ParsedPlan(NULL_DECISION, (FLAG_UNPARSED,))

    needed = registry.dependency_closure(recognized)
    if not needed <= set(recognized):
        return ParsedPlan(NULL_DECISION, (FLAG_COLLAPSED,))
    if registry.validate_order(recognized):
        return ParsedPlan(PlanDecision(tuple(recognized)))
    return ParsedPlan(
        PlanDecision(registry.topological(recognized)), (FLAG_REORDERED,)
    )


def _dependency_paragraph(registry: SourceRegistry) -> str:
    edges = registry.edges()
    if not edges:
        return "These knowledge bases are independent of each other."
    relies = " ".join(
        f"The invocation of {dependent} relies on the results from {dep}."
        for dep, dependent in edges
    )
    return (
        "There exists a dependency between these knowledge bases. "
        f"{relies} Please ensure the correct order of invoking them."
    )


def _require_context(context: DialogueContext) -> None:
    if not any(t.speaker is Speaker.USER for t in context):
        raise PreconditionError("dialogue context must contain at least one user turn")


def build_planning_prompt(context: DialogueContext, spec: PlannerPromptSpec) -> str:
    _require_context(context)
    for source in spec.registry.specs:
        if not source.description.strip():
            raise MissingDescription(f"source {source.name!r} has no description")
    template = load_template("planning_zero_shot.txt", spec.template_dir)
    desc_list = "\n".join(f"{s.name}: {s.description}" for s in spec.registry.specs)
    body = template.format(
        K_DESC_LIST=desc_list,
        DEPENDENCY_DESC=_dependency_paragraph(spec.registry),
        DIALOGUE=render_transcript(context),
    )
    if spec.mode is PromptMode.ZERO_SHOT:
        return body
    demos = "".join(
        "Here is a demonstration dialogue between the user and the system:\n"
        f"{render_transcript(demo_context)}\n"
        f"Decision: {serialize_decision(demo_decision)}\n\n"
        for demo_context, demo_decision in spec.demonstrations
    )
    return demos + body


@dataclass(frozen=True)
class PlanOutcome:
    decision: PlanDecision
    flags: tuple[str, ...]
    raw_output: str
    prompt: str


def plan(
    context: DialogueContext,
    backend: GenerationBackend,
    spec: PlannerPromptSpec,
    toks: SpecialTokens = DEFAULT_TOKENS,
    request_defaults: GenerationRequest | None = None,
) -> PlanOutcome:
    prompt = build_planning_prompt(context, spec)
    base = request_defaults or GenerationRequest(prompt="")
    raw = backend.generate(
        GenerationRequest(
            prompt=prompt,
            temperature=base.temperature,
            top_p=base.top_p,
            max_tokens=base.max_tokens,
        )
    )
    parsed = parse_decision(raw, spec.registry, toks)
    return PlanOutcome(parsed.decision, parsed.flags, raw, prompt)


def decision_class(d: PlanDecision) -> str:
    """Bucket a decision for per-class metrics: NULL, the single source's
    name, or BOTH for multi-source decisions."""
    if not d.sources:
        return "NULL"
    if len(d.sources) == 1:
        return d.sources[0]
    return "BOTH"


def select_demonstrations(
    records: Sequence[DialogueRecord], k: int = 3
) -> tuple[Demonstration, ...]:
    """Pick k (context, gold decision) pairs covering the decision classes
    round-robin (NULL, then single-source, then multi-source, repeating),
    falling back to corpus order when a class runs out."""
    buckets: dict[str, list[Demonstration]] = {}
    ordered: list[Demonstration] = []
    for record in records:
        for i, turn in enumerate(record.turns):
            if turn.speaker is not Speaker.SYSTEM or turn.grounding is None:
                continue
            demo = (record.turns[:i], PlanDecision(tuple(turn.grounding.sources)))
            ordered.append(demo)
            buckets.setdefault(decision_class(demo[1]), []).append(demo)
    chosen: list[Demonstration] = []
    class_order = ["NULL", "PERSONA", "BOTH"]
    extra = [c for c in sorted(buckets) if c not in class_order]
    cycle = class_order + extra
    i = 0
    while len(chosen) < k and any(buckets.values()):
        cls = cycle[i % len(cycle)]
        i += 1
        if buckets.get(cls):
            chosen.append(buckets[cls].pop(0))
    for demo in ordered:
        if len(chosen) >= k:
            break
        if demo not in chosen:
            chosen.append(demo)
    return tuple(chosen[:k])


def escape_special_tokens(text: str, toks: SpecialTokens = DEFAULT_TOKENS) -> str:
    """Defuse special-token literals occurring in free text by inserting a
    backslash before the final character (e.g. "[EOS]" -> "[EOS\\]")."""
    for token in toks.all():
        if token in text:
            text = text.replace(token, token[:-1] + "\\" + token[-1])
    return text
