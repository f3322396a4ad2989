"""End-to-end orchestration: plan, retrieve, assemble, evaluate.

Every SYSTEM turn is one evaluation sample with the full preceding context.
Planning policy, retrieval source (live retriever vs injected gold), and
response source (backend vs reference echo) are independently switchable so
ceiling runs and ablations come from config alone:

- planner ORACLE copies the gold decision; ALWAYS_PERSONA / ALWAYS_BOTH force
  a constant decision; NO_DOCUMENTS drops DOCUMENTS from the gold decision;
  NO_DEPENDENCY keeps gold decisions but retrieves documents from the flat
  pool; BACKEND_* ask a generation backend.

Per-sample failures are recorded and skipped, never fatal; the CLI exit code
encodes the error count. With a scripted backend the whole run is
deterministic and byte-reproducible.
"""

from __future__ import annotations

import json
import sys
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import TextIO

from .assembler import AssembleStyle, AssemblingDemo, assemble
from .backends import (
    BackendDescriptor,
    BackendKind,
    ConstantJudge,
    GenerationBackend,
    Judge,
    RuleJudge,
    create_backend,
)
from .corpus import (
    DialogueContext,
    DialogueRecord,
    GroundingLabel,
    Speaker,
    Turn,
    load_dataset,
)
from .errors import EmptyCorpus, KgdialError
from .metrics import (
    EvalReport,
    SampleEval,
    evaluate,
    report_to_json,
    report_to_table,
)
from .planner import (
    Demonstration,
    PlanDecision,
    PlannerPromptSpec,
    PromptMode,
    plan,
    select_demonstrations,
)
from .registry import (
    DOCUMENTS,
    PERSONA,
    SourceId,
    SourceRegistry,
    persona_knowledge_registry,
    registry_from_config,
    registry_to_config,
)
from .retrieval import (
    KnowledgeItem,
    RetrievalConfig,
    RetrievedEvidence,
    RetrieverKind,
    ScanCounter,
    Strategy,
    StrategyProfile,
    profile_to_obj,
    retrieve_plan,
    run_bench,
)


class PlannerPolicy(str, Enum):
    BACKEND_ZERO_SHOT = "BACKEND_ZERO_SHOT"
    BACKEND_IN_CONTEXT = "BACKEND_IN_CONTEXT"
    ORACLE = "ORACLE"
    ALWAYS_PERSONA = "ALWAYS_PERSONA"
    ALWAYS_BOTH = "ALWAYS_BOTH"
    NO_DEPENDENCY = "NO_DEPENDENCY"
    NO_DOCUMENTS = "NO_DOCUMENTS"


_GOLD_BASED = (
    PlannerPolicy.ORACLE,
    PlannerPolicy.NO_DEPENDENCY,
    PlannerPolicy.NO_DOCUMENTS,
)
_BACKEND_BASED = (PlannerPolicy.BACKEND_ZERO_SHOT, PlannerPolicy.BACKEND_IN_CONTEXT)


class RetrievalMode(str, Enum):
    RETRIEVER = "RETRIEVER"
    ORACLE = "ORACLE"


class ResponseMode(str, Enum):
    BACKEND = "BACKEND"
    REFERENCE = "REFERENCE"


class JudgeKind(str, Enum):
    RULE = "RULE"
    CONSTANT_TRUE = "CONSTANT_TRUE"
    CONSTANT_FALSE = "CONSTANT_FALSE"


@dataclass(frozen=True)
class JudgeDescriptor:
    kind: JudgeKind = JudgeKind.RULE
    threshold: float = 0.5


def build_judge(descriptor: JudgeDescriptor) -> Judge:
    if descriptor.kind is JudgeKind.RULE:
        return RuleJudge(threshold=descriptor.threshold)
    return ConstantJudge(descriptor.kind is JudgeKind.CONSTANT_TRUE)


@dataclass(frozen=True)
class PipelineConfig:
    dataset_path: str
    registry: SourceRegistry = field(default_factory=persona_knowledge_registry)
    retrieval: RetrievalConfig = RetrievalConfig()
    planner_mode: PlannerPolicy = PlannerPolicy.ORACLE
    retrieval_mode: RetrievalMode = RetrievalMode.RETRIEVER
    response_mode: ResponseMode = ResponseMode.REFERENCE
    assemble_style: AssembleStyle = AssembleStyle.SERIALIZED
    backend: BackendDescriptor | None = None
    judge: JudgeDescriptor = JudgeDescriptor()
    seed: int = 0
    max_in_flight: int = 1
    train_path: str | None = None
    n_demos: int = 3
    template_dir: str | None = None

    def __post_init__(self) -> None:
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        needs_backend = (
            self.planner_mode in _BACKEND_BASED
            or self.response_mode is ResponseMode.BACKEND
        )
        if needs_backend and self.backend is None:
            raise ValueError(
                "backend descriptor required for backend planning or responses"
            )
        if self.planner_mode is PlannerPolicy.BACKEND_IN_CONTEXT and not self.train_path:
            raise ValueError("BACKEND_IN_CONTEXT requires train_path for demonstrations")


def config_from_obj(obj: dict) -> PipelineConfig:
    registry = (
        registry_from_config(obj) if "sources" in obj else persona_knowledge_registry()
    )
    retrieval_obj = obj.get("retrieval", {})
    retrieval = RetrievalConfig(
        top_n=retrieval_obj.get("top_n", 1),
        strategy=Strategy(retrieval_obj.get("strategy", "DEPENDENT_A")),
        retriever_kind=RetrieverKind(retrieval_obj.get("retriever_kind", "BM25")),
        context_window_turns=retrieval_obj.get("context_window_turns"),
    )
    backend = None
    if obj.get("backend") is not None:
        b = obj["backend"]
        backend = BackendDescriptor(
            kind=BackendKind(b["kind"]),
            endpoint=b.get("endpoint"),
            model_name=b.get("model_name"),
            api_key_env=b.get("api_key_env"),
            timeout_ms=b.get("timeout_ms", 30_000),
            retries=b.get("retries", 2),
            replay_path=b.get("replay_path"),
            echo_transform=b.get("echo_transform", "identity"),
        )
    judge_obj = obj.get("judge", {})
    judge = JudgeDescriptor(
        kind=JudgeKind(judge_obj.get("kind", "RULE")),
        threshold=judge_obj.get("threshold", 0.5),
    )
    return PipelineConfig(
        dataset_path=obj["dataset_path"],
        registry=registry,
        retrieval=retrieval,
        planner_mode=PlannerPolicy(obj.get("planner_mode", "ORACLE")),
        retrieval_mode=RetrievalMode(obj.get("retrieval_mode", "RETRIEVER")),
        response_mode=ResponseMode(obj.get("response_mode", "REFERENCE")),
        assemble_style=AssembleStyle(obj.get("assemble_style", "SERIALIZED")),
        backend=backend,
        judge=judge,
        seed=obj.get("seed", 0),
        max_in_flight=obj.get("max_in_flight", 1),
        train_path=obj.get("train_path"),
        n_demos=obj.get("n_demos", 3),
        template_dir=obj.get("template_dir"),
    )


def config_to_obj(cfg: PipelineConfig) -> dict:
    backend = None
    if cfg.backend is not None:
        backend = {
            "kind": cfg.backend.kind.value,
            "endpoint": cfg.backend.endpoint,
            "model_name": cfg.backend.model_name,
            "api_key_env": cfg.backend.api_key_env,
            "timeout_ms": cfg.backend.timeout_ms,
            "retries": cfg.backend.retries,
            "replay_path": cfg.backend.replay_path,
            "echo_transform": cfg.backend.echo_transform,
        }
    return {
        "dataset_path": cfg.dataset_path,
        **registry_to_config(cfg.registry),
        "retrieval": {
            "top_n": cfg.retrieval.top_n,
            "strategy": cfg.retrieval.strategy.value,
            "retriever_kind": cfg.retrieval.retriever_kind.value,
            "context_window_turns": cfg.retrieval.context_window_turns,
        },
        "planner_mode": cfg.planner_mode.value,
        "retrieval_mode": cfg.retrieval_mode.value,
        "response_mode": cfg.response_mode.value,
        "assemble_style": cfg.assemble_style.value,
        "backend": backend,
        "judge": {"kind": cfg.judge.kind.value, "threshold": cfg.judge.threshold},
        "seed": cfg.seed,
        "max_in_flight": cfg.max_in_flight,
        "train_path": cfg.train_path,
        "n_demos": cfg.n_demos,
        "template_dir": cfg.template_dir,
    }


@dataclass(frozen=True)
class Sample:
    sample_id: str
    record: DialogueRecord
    turn_index: int

    @property
    def context(self) -> DialogueContext:
        return self.record.turns[: self.turn_index]

    @property
    def turn(self) -> Turn:
        return self.record.turns[self.turn_index]


def iter_samples(records: list[DialogueRecord]) -> list[Sample]:
    samples = []
    for record in records:
        for i, turn in enumerate(record.turns):
            if turn.speaker is Speaker.SYSTEM:
                samples.append(Sample(f"{record.dialogue_id}:{i}", record, i))
    return samples


@dataclass(frozen=True)
class RunArtifacts:
    samples: tuple[SampleEval, ...]
    audits: tuple[dict, ...]
    report: EvalReport | None
    profiles: tuple[StrategyProfile, ...]
    config_obj: dict
    errors: int
    searches: int
    candidates_scanned: int
    wall_time_ns: int


def _gold_texts(
    record: DialogueRecord, grounding: GroundingLabel
) -> tuple[str | None, str | None]:
    gold_persona = None
    gold_knowledge = None
    if grounding.persona_index is not None:
        gold_persona = record.persona[grounding.persona_index]
    if grounding.knowledge_indices is not None:
        docs = record.documents[grounding.persona_index]
        gold_knowledge = " ".join(docs[k] for k in grounding.knowledge_indices)
    return gold_persona, gold_knowledge


def _policy_decision(
    cfg: PipelineConfig,
    context: DialogueContext,
    gold: PlanDecision,
    backend: GenerationBackend | None,
    demos: tuple[Demonstration, ...],
) -> tuple[PlanDecision, tuple[str, ...], str | None, str | None]:
    """Returns (decision, flags, raw backend text, prompt)."""
    policy = cfg.planner_mode
    if policy in (PlannerPolicy.ORACLE, PlannerPolicy.NO_DEPENDENCY):
        return gold, (), None, None
    if policy is PlannerPolicy.NO_DOCUMENTS:
        kept = tuple(s for s in gold.sources if s != DOCUMENTS)
        return PlanDecision(kept), (), None, None
    if policy is PlannerPolicy.ALWAYS_PERSONA:
        return PlanDecision((PERSONA,)), (), None, None
    if policy is PlannerPolicy.ALWAYS_BOTH:
        return PlanDecision((PERSONA, DOCUMENTS)), (), None, None
    mode = (
        PromptMode.IN_CONTEXT
        if policy is PlannerPolicy.BACKEND_IN_CONTEXT
        else PromptMode.ZERO_SHOT
    )
    spec = PlannerPromptSpec(
        registry=cfg.registry,
        mode=mode,
        demonstrations=demos if mode is PromptMode.IN_CONTEXT else (),
        template_dir=cfg.template_dir,
    )
    outcome = plan(context, backend, spec)
    return outcome.decision, outcome.flags, outcome.raw_output, outcome.prompt


def _oracle_evidence(
    sample: Sample, decision: PlanDecision
) -> dict[SourceId, list[RetrievedEvidence]]:
    """Gold grounding injected as rank-1 evidence for the planned sources."""
    grounding = sample.turn.grounding
    record = sample.record
    out: dict[SourceId, list[RetrievedEvidence]] = {}
    for source in decision.sources:
        evidences: list[RetrievedEvidence] = []
        if source == PERSONA and grounding.persona_index is not None:
            idx = grounding.persona_index
            item = KnowledgeItem(PERSONA, (idx,), record.persona[idx])
            evidences = [RetrievedEvidence(item, 1.0, 1)]
        elif source == DOCUMENTS and grounding.knowledge_indices is not None:
            idx = grounding.persona_index
            evidences = [
                RetrievedEvidence(
                    KnowledgeItem(DOCUMENTS, (idx, k), record.documents[idx][k]),
                    1.0,
                    rank,
                )
                for rank, k in enumerate(grounding.knowledge_indices, start=1)
            ]
        out[source] = evidences
    return out


@dataclass
class _ProcessResult:
    sample_eval: SampleEval | None
    audit: dict
    error: str | None
    searches: int
    candidates_scanned: int


def _process_sample(
    cfg: PipelineConfig,
    sample: Sample,
    backend: GenerationBackend | None,
    planning_demos: tuple[Demonstration, ...],
    assembling_demos: tuple[AssemblingDemo, ...],
) -> _ProcessResult:
    audit: dict = {"sample_id": sample.sample_id}
    counter = ScanCounter()
    try:
        grounding = sample.turn.grounding
        if grounding is None:
            raise KgdialError("sample has no grounding label")
        gold = PlanDecision(tuple(grounding.sources))
        audit["gold_decision"] = list(gold.sources)

        pred, flags, raw, prompt = _policy_decision(
            cfg, sample.context, gold, backend, planning_demos
        )
        audit["parsed_decision"] = list(pred.sources)
        audit["normalization_flags"] = list(flags)
        if raw is not None:
            audit["raw_output"] = raw

        retrieval_cfg = cfg.retrieval
        if cfg.planner_mode is PlannerPolicy.NO_DEPENDENCY:
            retrieval_cfg = replace(retrieval_cfg, strategy=Strategy.INDEPENDENT_B)
        if cfg.retrieval_mode is RetrievalMode.ORACLE:
            retrieved = _oracle_evidence(sample, pred)
        else:
            retrieved = retrieve_plan(
                pred,
                sample.context,
                sample.record,
                retrieval_cfg,
                registry=cfg.registry,
                counter=counter,
            )

        reference = sample.turn.text
        if cfg.response_mode is ResponseMode.REFERENCE:
            response = reference
            audit["rendered_input_or_prompt"] = None
        else:
            outcome = assemble(
                sample.context,
                pred,
                retrieved,
                backend,
                style=cfg.assemble_style,
                demonstrations=assembling_demos,
                template_dir=cfg.template_dir,
            )
            response = outcome.response
            audit["rendered_input_or_prompt"] = outcome.model_input
        audit["response"] = response

        gold_persona, gold_knowledge = _gold_texts(sample.record, grounding)
        sample_eval = SampleEval(
            sample_id=sample.sample_id,
            gold_decision=gold,
            pred_decision=pred,
            gold_persona=gold_persona,
            gold_knowledge=gold_knowledge,
            gold_persona_index=grounding.persona_index,
            gold_knowledge_indices=grounding.knowledge_indices,
            retrieved=retrieved,
            response=response,
            reference=reference,
        )
        return _ProcessResult(
            sample_eval, audit, None, counter.searches, counter.candidates_scanned
        )
    except KgdialError as exc:
        audit["error"] = str(exc)
        return _ProcessResult(
            None, audit, str(exc), counter.searches, counter.candidates_scanned
        )


def _assembling_demos_from(
    records: list[DialogueRecord], k: int
) -> tuple[AssemblingDemo, ...]:
    demos = []
    for record in records:
        for i, turn in enumerate(record.turns):
            if len(demos) >= k:
                return tuple(demos)
            if turn.speaker is not Speaker.SYSTEM or turn.grounding is None:
                continue
            gold_persona, gold_knowledge = _gold_texts(record, turn.grounding)
            texts: dict[SourceId, tuple[str, ...]] = {}
            if gold_persona is not None:
                texts[PERSONA] = (gold_persona,)
            if gold_knowledge is not None:
                texts[DOCUMENTS] = (gold_knowledge,)
            demos.append(AssemblingDemo(record.turns[:i], texts, turn.text))
    return tuple(demos)


def run_eval(cfg: PipelineConfig) -> RunArtifacts:
    started = time.perf_counter_ns()
    records = load_dataset(cfg.dataset_path)
    samples = iter_samples(records)
    backend = create_backend(cfg.backend) if cfg.backend is not None else None
    judge = build_judge(cfg.judge)

    planning_demos: tuple[Demonstration, ...] = ()
    assembling_demos: tuple[AssemblingDemo, ...] = ()
    if cfg.train_path:
        train_records = load_dataset(cfg.train_path)
        planning_demos = select_demonstrations(train_records, cfg.n_demos)
        assembling_demos = _assembling_demos_from(train_records, cfg.n_demos)

    def work(sample: Sample) -> _ProcessResult:
        return _process_sample(cfg, sample, backend, planning_demos, assembling_demos)

    if cfg.max_in_flight == 1:
        results = [work(s) for s in samples]
    else:
        with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
            results = list(pool.map(work, samples))

    evals = tuple(r.sample_eval for r in results if r.sample_eval is not None)
    errors = sum(1 for r in results if r.error is not None)
    if not evals:
        raise EmptyCorpus("every sample failed; nothing to evaluate")
    report = evaluate(evals, judge)
    return RunArtifacts(
        samples=evals,
        audits=tuple(r.audit for r in results),
        report=report,
        profiles=(),
        config_obj=config_to_obj(cfg),
        errors=errors,
        searches=sum(r.searches for r in results),
        candidates_scanned=sum(r.candidates_scanned for r in results),
        wall_time_ns=time.perf_counter_ns() - started,
    )


def write_artifacts(artifacts: RunArtifacts, out_dir: str | Path) -> dict[str, Path]:
    """Write report/audit/config/bench files; wall-clock data stays in its
    own file so the rest are byte-comparable across runs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    if artifacts.report is not None:
        paths["report_json"] = out / "report.json"
        paths["report_json"].write_text(
            report_to_json(artifacts.report) + "\n", encoding="utf-8"
        )
        paths["report_txt"] = out / "report.txt"
        paths["report_txt"].write_text(
            report_to_table(artifacts.report) + "\n", encoding="utf-8"
        )
    paths["audit"] = out / "audit.jsonl"
    with open(paths["audit"], "w", encoding="utf-8") as fh:
        for audit in artifacts.audits:
            fh.write(json.dumps(audit, sort_keys=True, ensure_ascii=False) + "\n")
    paths["config"] = out / "config.json"
    paths["config"].write_text(
        json.dumps(artifacts.config_obj, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    if artifacts.profiles:
        paths["bench"] = out / "bench.json"
        paths["bench"].write_text(
            json.dumps([profile_to_obj(p) for p in artifacts.profiles], indent=2)
            + "\n",
            encoding="utf-8",
        )
    paths["timings"] = out / "timings.json"
    paths["timings"].write_text(
        json.dumps(
            {
                "wall_time_ns": artifacts.wall_time_ns,
                "searches": artifacts.searches,
                "candidates_scanned": artifacts.candidates_scanned,
                "errors": artifacts.errors,
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    return paths


def run_bench_artifacts(
    n_list: Sequence[int],
    m_list: Sequence[int],
    strategies: Sequence[Strategy] = tuple(Strategy),
    queries_per_cell: int = 5,
    seed: int = 0,
    cfg: RetrievalConfig | None = None,
) -> RunArtifacts:
    started = time.perf_counter_ns()
    profiles = run_bench(n_list, m_list, strategies, queries_per_cell, seed, cfg)
    return RunArtifacts(
        samples=(),
        audits=(),
        report=None,
        profiles=tuple(profiles),
        config_obj={
            "N": n_list,
            "M": m_list,
            "strategies": [s.value for s in strategies],
            "queries_per_cell": queries_per_cell,
            "seed": seed,
        },
        errors=0,
        searches=0,
        candidates_scanned=0,
        wall_time_ns=time.perf_counter_ns() - started,
    )


def chat(
    cfg: PipelineConfig,
    record: DialogueRecord | None = None,
    input_fh: TextIO | None = None,
    output_fh: TextIO | None = None,
) -> int:
    """Interactive REPL over the live pipeline. Commands: /history, /plan,
    /quit. Backend errors are shown and the session continues."""
    # Resolved here, not in the signature, so stream redirection works.
    input_fh = input_fh if input_fh is not None else sys.stdin
    output_fh = output_fh if output_fh is not None else sys.stdout
    if cfg.planner_mode in _GOLD_BASED:
        print(
            f"chat requires a non-gold planner mode, not {cfg.planner_mode.value}",
            file=output_fh,
        )
        return 2
    if cfg.response_mode is not ResponseMode.BACKEND:
        print("chat requires response_mode=BACKEND", file=output_fh)
        return 2
    if record is None:
        records = load_dataset(cfg.dataset_path)
        record = records[0]
    backend = create_backend(cfg.backend)
    turns: list[Turn] = []
    last_decision: PlanDecision | None = None
    last_flags: tuple[str, ...] = ()
    print(
        f"knowledge stores from dialogue '{record.dialogue_id}' "
        f"({len(record.persona)} personas). /history /plan /quit",
        file=output_fh,
    )
    while True:
        print("you> ", end="", file=output_fh, flush=True)
        line = input_fh.readline()
        if not line:
            print("", file=output_fh)
            return 0
        line = line.strip()
        if not line:
            continue
        if line == "/quit":
            return 0
        if line == "/history":
            for turn in turns:
                who = "you" if turn.speaker is Speaker.USER else "sys"
                print(f"  {who}: {turn.text}", file=output_fh)
            continue
        if line == "/plan":
            if last_decision is None:
                print("  no plan yet", file=output_fh)
            else:
                shown = ", ".join(last_decision.sources) or "NULL"
                print(f"  decision: {shown}", file=output_fh)
                print(f"  flags: {list(last_flags)}", file=output_fh)
            continue
        if line.startswith("/"):
            print("  commands: /history /plan /quit", file=output_fh)
            continue
        turns.append(Turn(Speaker.USER, line))
        decision, flags, retrieved, response, err = _process_chat_turn(
            cfg, tuple(turns), record, backend
        )
        last_decision, last_flags = decision, flags
        if err:
            print(f"  error: {err}", file=output_fh)
            turns.pop()
            continue
        shown = ", ".join(decision.sources) or "NULL"
        print(f"  [plan] {shown}", file=output_fh)
        for source, evidences in retrieved.items():
            for ev in evidences:
                print(f"  [{source}@{ev.rank}] {ev.item.text}", file=output_fh)
        print(f"sys> {response}", file=output_fh)
        turns.append(Turn(Speaker.SYSTEM, response))


def _process_chat_turn(
    cfg: PipelineConfig,
    context: DialogueContext,
    record: DialogueRecord,
    backend: GenerationBackend,
) -> tuple[PlanDecision, tuple[str, ...], dict, str, str | None]:
    try:
        pred, flags, _, _ = _policy_decision(cfg, context, PlanDecision(), backend, ())
        retrieved = retrieve_plan(
            pred, context, record, cfg.retrieval, registry=cfg.registry
        )
        outcome = assemble(context, pred, retrieved, backend, style=cfg.assemble_style)
        return pred, flags, retrieved, outcome.response, None
    except KgdialError as exc:
        return PlanDecision(), (), {}, "", str(exc)
