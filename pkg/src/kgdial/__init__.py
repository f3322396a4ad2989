"""Multi-source knowledge-grounded dialogue: planning, dependency-aware
retrieval, assembling, evaluation, and strategy benchmarking."""

from .assembler import (
    AssembledInput,
    AssembleOutcome,
    AssembleStyle,
    AssemblingDemo,
    assemble,
    build_assembling_prompt,
    render_input,
)
from .backends import (
    BackendDescriptor,
    BackendKind,
    ConstantJudge,
    EchoBackend,
    EmbeddingProvider,
    GenerationBackend,
    GenerationRequest,
    HashingEmbedder,
    HttpChatBackend,
    Judge,
    RuleJudge,
    ScriptedBackend,
    create_backend,
    embed,
)
from .corpus import (
    CorpusStats,
    DialogueContext,
    DialogueRecord,
    GroundingLabel,
    KnowledgeTuple,
    Speaker,
    Turn,
    context_text,
    dump_dataset,
    load_dataset,
    load_template_table,
    load_tuples,
    match_persona_knowledge,
    render_transcript,
    render_tuple,
    stats,
    validate_record,
)
from .errors import KgdialError
from .metrics import (
    ConsistencyCase,
    EvalReport,
    SampleEval,
    bleu1,
    consistency_value,
    evaluate,
    pc_kc,
    planning_f1,
    recall_at_1,
    report_to_json,
    report_to_obj,
    report_to_table,
    rouge_l,
)
from .pipeline import (
    JudgeDescriptor,
    JudgeKind,
    PipelineConfig,
    PlannerPolicy,
    ResponseMode,
    RetrievalMode,
    RunArtifacts,
    chat,
    config_from_obj,
    config_to_obj,
    iter_samples,
    run_eval,
    write_artifacts,
)
from .planner import (
    DEFAULT_TOKENS,
    NULL_DECISION,
    ParsedPlan,
    PlanDecision,
    PlannerPromptSpec,
    PlanOutcome,
    PromptMode,
    SpecialTokens,
    build_planning_prompt,
    decision_class,
    decision_text,
    escape_special_tokens,
    parse_decision,
    plan,
    select_demonstrations,
    serialize_decision,
)
from .registry import (
    DOCUMENTS,
    PERSONA,
    SourceRegistry,
    SourceSpec,
    persona_knowledge_registry,
    register,
    registry_from_config,
    registry_to_config,
    validate_order,
)
from .retrieval import (
    Bm25Params,
    KnowledgeItem,
    RetrievalConfig,
    RetrievedEvidence,
    RetrieverKind,
    ScanCounter,
    Strategy,
    StrategyProfile,
    bm25_search,
    build_index,
    dense_search,
    gen_bench_corpus,
    retrieve_plan,
    run_bench,
    run_strategy_bench,
)
from .text import load_stopwords, tokenize

__version__ = "0.1.0"
