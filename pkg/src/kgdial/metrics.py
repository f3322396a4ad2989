"""Evaluation: per-class planning F1, Recall@1, BLEU1, Rouge-L, and the
calibrated consistency scores.

Consistency is scored per sample by a four-case rule over (grounding exists,
planner used the source): the judge verdict counts only when both hold;
abstaining with no grounding scores 1; a missed grounding or a spurious
source use scores 0. The corpus score is the mean over all samples, so
correct abstention is rewarded and over-planning is penalized.
"""

from __future__ import annotations

import json
import math
import warnings
from collections.abc import Sequence
from dataclasses import dataclass

from .backends import Judge
from .errors import EmptyCandidateWarning, EmptyCorpus, JudgeFailure, NoEligibleSamples
from .planner import PlanDecision, decision_class
from .registry import DOCUMENTS, PERSONA, SourceId
from .retrieval import RetrievedEvidence
from .text import Tokenizer, tokenize


@dataclass(frozen=True)
class SampleEval:
    sample_id: str
    gold_decision: PlanDecision
    pred_decision: PlanDecision
    gold_persona: str | None = None
    gold_knowledge: str | None = None
    gold_persona_index: int | None = None
    gold_knowledge_indices: tuple[int, ...] | None = None
    retrieved: dict[SourceId, list[RetrievedEvidence]] | None = None
    response: str = ""
    reference: str = ""

    def __post_init__(self) -> None:
        if (self.gold_persona is not None) != (PERSONA in self.gold_decision.sources):
            raise ValueError(
                f"sample {self.sample_id}: gold_persona present iff PERSONA in gold"
            )
        if (self.gold_knowledge is not None) != (
            DOCUMENTS in self.gold_decision.sources
        ):
            raise ValueError(
                f"sample {self.sample_id}: gold_knowledge present iff DOCUMENTS in gold"
            )


@dataclass(frozen=True)
class ConsistencyCase:
    has_grounding: bool
    planner_used: bool
    judge_verdict: bool | None = None

    def __post_init__(self) -> None:
        if (self.judge_verdict is not None) != (self.has_grounding and self.planner_used):
            raise ValueError(
                "judge_verdict present iff has_grounding and planner_used"
            )


def consistency_value(case: ConsistencyCase) -> float:
    if case.has_grounding and case.planner_used:
        return 1.0 if case.judge_verdict else 0.0
    if case.has_grounding or case.planner_used:
        # Missed grounding, or spurious source use: both score 0.
        return 0.0
    return 1.0


@dataclass(frozen=True)
class EvalReport:
    m: int
    f1_per_class: dict[str, tuple[float, int]]
    recall_at_1: dict[SourceId, float]
    bleu1: float
    rouge_l: float
    pc: float
    kc: float


CLASSES = ("NULL", "PERSONA", "BOTH")


def planning_f1(samples: Sequence[SampleEval]) -> dict[str, tuple[float, int]]:
    """One-vs-rest F1 per decision class, with the predicted count of each
    class alongside (counts sum to the sample count)."""
    gold = [decision_class(s.gold_decision) for s in samples]
    pred = [decision_class(s.pred_decision) for s in samples]
    classes = list(CLASSES) + sorted(set(gold + pred) - set(CLASSES))
    out: dict[str, tuple[float, int]] = {}
    for cls in classes:
        tp = sum(1 for g, p in zip(gold, pred) if g == cls and p == cls)
        fp = sum(1 for g, p in zip(gold, pred) if g != cls and p == cls)
        fn = sum(1 for g, p in zip(gold, pred) if g == cls and p != cls)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = (
            2 * precision * recall / (precision + recall)
            if precision + recall
            else 0.0
        )
        out[cls] = (f1, tp + fp)
    return out


def recall_at_1(
    samples: Sequence[SampleEval], sources: Sequence[SourceId] | None = None
) -> dict[SourceId, float]:
    """Fraction of gold-eligible samples whose rank-1 item matches the gold
    index. DOCUMENTS hits when the rank-1 key is any of the gold knowledge
    indices. Asked-for sources with no eligible samples raise."""
    explicit = sources is not None
    if sources is None:
        observed = []
        for s in samples:
            for src in s.gold_decision.sources:
                if src not in observed:
                    observed.append(src)
        sources = observed
    out: dict[SourceId, float] = {}
    for source in sources:
        eligible = [s for s in samples if source in s.gold_decision.sources]
        if not eligible:
            if explicit:
                raise NoEligibleSamples(source)
            continue
        hits = 0
        for s in eligible:
            results = (s.retrieved or {}).get(source, [])
            if not results:
                continue
            top_key = results[0].item.key
            if source == PERSONA:
                hits += top_key == (s.gold_persona_index,)
            elif source == DOCUMENTS:
                gold_keys = {
                    (s.gold_persona_index, k) for k in s.gold_knowledge_indices or ()
                }
                hits += top_key in gold_keys
        out[source] = hits / len(eligible)
    return out


def bleu1(candidate: str, reference: str, tokenizer: Tokenizer = tokenize) -> float:
    """Sentence-level unigram precision with clipping, times the brevity
    penalty min(1, e^(1 - |ref|/|cand|))."""
    cand = tokenizer(candidate)
    ref = tokenizer(reference)
    if not cand:
        warnings.warn("empty candidate scored 0", EmptyCandidateWarning, stacklevel=2)
        return 0.0
    ref_counts: dict[str, int] = {}
    for token in ref:
        ref_counts[token] = ref_counts.get(token, 0) + 1
    cand_counts: dict[str, int] = {}
    for token in cand:
        cand_counts[token] = cand_counts.get(token, 0) + 1
    clipped = sum(min(c, ref_counts.get(t, 0)) for t, c in cand_counts.items())
    precision = clipped / len(cand)
    bp = min(1.0, math.exp(1 - len(ref) / len(cand)))
    return precision * bp


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(
    candidate: str,
    reference: str,
    tokenizer: Tokenizer = tokenize,
    beta: float = 1.2,
) -> float:
    cand = tokenizer(candidate)
    ref = tokenizer(reference)
    if not cand:
        warnings.warn("empty candidate scored 0", EmptyCandidateWarning, stacklevel=2)
        return 0.0
    if not ref:
        return 0.0
    lcs = _lcs_length(cand, ref)
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    if precision + recall == 0:
        return 0.0
    b2 = beta * beta
    return (1 + b2) * precision * recall / (recall + b2 * precision)


def _persona_case(sample: SampleEval, judge: Judge) -> ConsistencyCase:
    has_g = sample.gold_persona is not None
    used = PERSONA in sample.pred_decision.sources
    verdict = None
    if has_g and used:
        verdict = _judge(judge, sample, sample.gold_persona)
    return ConsistencyCase(has_g, used, verdict)


def _knowledge_case(sample: SampleEval, judge: Judge) -> ConsistencyCase:
    has_g = sample.gold_knowledge is not None
    used = DOCUMENTS in sample.pred_decision.sources
    verdict = None
    if has_g and used:
        verdict = _judge(judge, sample, sample.gold_knowledge)
    return ConsistencyCase(has_g, used, verdict)


def _judge(judge: Judge, sample: SampleEval, grounding: str) -> bool:
    try:
        return judge.judge(sample.response, grounding)
    except JudgeFailure as exc:
        raise JudgeFailure(f"sample {sample.sample_id}: {exc}") from exc


def pc_kc(samples: Sequence[SampleEval], judge: Judge) -> tuple[float, float]:
    """Calibrated persona/knowledge consistency: mean of the four-case value
    over all samples."""
    if not samples:
        raise EmptyCorpus("no samples to score")
    pc = sum(consistency_value(_persona_case(s, judge)) for s in samples)
    kc = sum(consistency_value(_knowledge_case(s, judge)) for s in samples)
    return pc / len(samples), kc / len(samples)


def evaluate(
    samples: Sequence[SampleEval], judge: Judge, tokenizer: Tokenizer = tokenize
) -> EvalReport:
    if not samples:
        raise EmptyCorpus("no samples to evaluate")
    pc, kc = pc_kc(samples, judge)
    return EvalReport(
        m=len(samples),
        f1_per_class=planning_f1(samples),
        recall_at_1=recall_at_1(samples),
        bleu1=sum(bleu1(s.response, s.reference, tokenizer) for s in samples)
        / len(samples),
        rouge_l=sum(rouge_l(s.response, s.reference, tokenizer) for s in samples)
        / len(samples),
        pc=pc,
        kc=kc,
    )


def report_to_obj(report: EvalReport) -> dict:
    return {
        "m": report.m,
        "f1_per_class": {
            cls: {"f1": f1, "predicted": count}
            for cls, (f1, count) in report.f1_per_class.items()
        },
        "recall_at_1": dict(report.recall_at_1),
        "bleu1": report.bleu1,
        "rouge_l": report.rouge_l,
        "pc": report.pc,
        "kc": report.kc,
    }


def report_to_json(report: EvalReport) -> str:
    return json.dumps(report_to_obj(report), sort_keys=True, ensure_ascii=False)


def report_to_table(report: EvalReport) -> str:
    """Aligned text table, scores x100 at two decimals."""

    def pct(x: float) -> str:
        return f"{100 * x:.2f}"

    lines = [f"samples: {report.m}", "", "planning F1 (predicted count)"]
    for cls, (f1, count) in report.f1_per_class.items():
        lines.append(f"  {cls:<10} {pct(f1):>7}  ({count})")
    if report.recall_at_1:
        lines.append("")
        lines.append("Recall@1")
        for source, value in report.recall_at_1.items():
            lines.append(f"  {source:<10} {pct(value):>7}")
    lines += [
        "",
        "generation",
        f"  {'BLEU1':<10} {pct(report.bleu1):>7}",
        f"  {'Rouge-L':<10} {pct(report.rouge_l):>7}",
        f"  {'P.C':<10} {pct(report.pc):>7}",
        f"  {'K.C':<10} {pct(report.kc):>7}",
    ]
    return "\n".join(lines)
