"""Build the generation input from context, decision, and evidence, then get
the response from a backend.

Two input styles exist. The serialized style is the compact special-token
layout (transcript, then one [SOURCE]...[EOS] block naming the planned
sources, then one [MIDDLE]...[EOM] block with the evidence texts). The
prompt style is the instruction template that labels each evidence line
with its source name; in-context mode prepends worked demonstrations.
Free text is escaped so special-token literals inside it cannot forge
block boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .backends import GenerationBackend, GenerationRequest
from .corpus import DialogueContext, render_transcript
from .errors import EmptyResponse, EvidenceWithoutSource
from .planner import (
    DEFAULT_TOKENS,
    PlanDecision,
    SpecialTokens,
    escape_special_tokens,
    load_template,
    serialize_decision,
)
from .registry import SourceId
from .retrieval import RetrievedEvidence

EvidenceMap = dict[SourceId, list[RetrievedEvidence]]


@dataclass(frozen=True)
class AssembledInput:
    context: DialogueContext
    decision: PlanDecision
    evidence: EvidenceMap
    rendered: str


class AssembleStyle(str, Enum):
    SERIALIZED = "SERIALIZED"
    PROMPT_ZERO_SHOT = "PROMPT_ZERO_SHOT"
    PROMPT_IN_CONTEXT = "PROMPT_IN_CONTEXT"


@dataclass(frozen=True)
class AssemblingDemo:
    context: DialogueContext
    evidence_texts: dict[SourceId, tuple[str, ...]]
    response: str


def _ordered_evidence(
    decision: PlanDecision, evidence: EvidenceMap
) -> list[tuple[SourceId, list[RetrievedEvidence]]]:
    extra = set(evidence) - set(decision.sources)
    if extra:
        raise EvidenceWithoutSource(
            f"evidence for sources not in decision: {sorted(extra)}"
        )
    return [(s, evidence[s]) for s in decision.sources if s in evidence]


def render_input(
    context: DialogueContext,
    decision: PlanDecision,
    evidence: EvidenceMap,
    toks: SpecialTokens = DEFAULT_TOKENS,
) -> AssembledInput:
    """The serialized model input; evidence texts joined "; " in decision
    order, with the null token standing in when there is nothing to show."""
    ordered = _ordered_evidence(decision, evidence)
    texts = [
        escape_special_tokens(ev.item.text, toks) for _, evs in ordered for ev in evs
    ]
    middle = "; ".join(texts) if texts else toks.null_token
    transcript = escape_special_tokens(render_transcript(context), toks)
    rendered = (
        f"{transcript} {serialize_decision(decision, toks)} "
        f"{toks.middle_open} {middle} {toks.middle_close}"
    )
    return AssembledInput(context, decision, dict(ordered), rendered)


def _middle_lines(
    pairs: list[tuple[SourceId, list[str]]], null_token: str
) -> str:
    lines = [f"{source}: {text}" for source, texts in pairs for text in texts]
    return "\n".join(lines) if lines else null_token


def build_assembling_prompt(
    context: DialogueContext,
    evidence: EvidenceMap,
    mode: AssembleStyle = AssembleStyle.PROMPT_ZERO_SHOT,
    decision: PlanDecision | None = None,
    demonstrations: tuple[AssemblingDemo, ...] = (),
    template_dir: str | None = None,
    toks: SpecialTokens = DEFAULT_TOKENS,
) -> str:
    """The instruction-style prompt with evidence as "SourceName: text"
    lines (the literal null token when there is no evidence)."""
    if decision is None:
        decision = PlanDecision(tuple(evidence))
    ordered = _ordered_evidence(decision, evidence)
    template = load_template("assembling_zero_shot.txt", template_dir)
    body = template.format(
        DIALOGUE=render_transcript(context),
        MIDDLE_RESULTS=_middle_lines(
            [(s, [ev.item.text for ev in evs]) for s, evs in ordered],
            toks.null_token,
        ),
    )
    if mode is not AssembleStyle.PROMPT_IN_CONTEXT:
        return body
    demos = "".join(
        "Here is a demonstration:\n"
        "The dialogue is as follows:\n"
        f"{render_transcript(demo.context)}\n"
        "The following knowledge is retrieved from different sources of "
        "knowledge bases:\n"
        f"{_middle_lines(list(demo.evidence_texts.items()), toks.null_token)}\n"
        f"System: {demo.response}\n\n"
        for demo in demonstrations
    )
    return demos + body


@dataclass(frozen=True)
class AssembleOutcome:
    response: str
    model_input: str


def assemble(
    context: DialogueContext,
    decision: PlanDecision,
    evidence: EvidenceMap,
    backend: GenerationBackend,
    style: AssembleStyle = AssembleStyle.SERIALIZED,
    demonstrations: tuple[AssemblingDemo, ...] = (),
    toks: SpecialTokens = DEFAULT_TOKENS,
    template_dir: str | None = None,
    request_defaults: GenerationRequest | None = None,
) -> AssembleOutcome:
    if style is AssembleStyle.SERIALIZED:
        model_input = render_input(context, decision, evidence, toks).rendered
    else:
        model_input = build_assembling_prompt(
            context,
            evidence,
            mode=style,
            decision=decision,
            demonstrations=demonstrations,
            template_dir=template_dir,
            toks=toks,
        )
    base = request_defaults or GenerationRequest(prompt="")
    response = backend.generate(
        GenerationRequest(
            prompt=model_input,
            temperature=base.temperature,
            top_p=base.top_p,
            max_tokens=base.max_tokens,
        )
    )
    if not response.strip():
        raise EmptyResponse("backend returned an empty response")
    return AssembleOutcome(response=response, model_input=model_input)
