"""Sparse and dense retrieval over knowledge stores, plan-driven multi-step
retrieval with dependency filtering, and the source-organization benchmark.

Items carry tuple keys: a persona sentence is keyed (persona_index,) and a
document sentence (persona_index, doc_index). Ties are broken by ascending
key, which keeps every ranking deterministic.

Four ways to organize the two stores are implemented:

- DEPENDENT_A: documents are keyed by persona; the documents pool for a query
  is exactly the selected persona's documents (scans N+M candidates).
- INDEPENDENT_B: flat document pool, persona text appended to the query
  (scans N+NM).
- MERGED_C: one pool holding personas and documents together; two retrieval
  passes fetch two items (scans 2(N+NM)).
- CONCATENATED_D: one pool of persona+document concatenations, one pass
  (scans NM, but stores every persona M times: 2NM resident units).
"""

from __future__ import annotations

import math
import random
import time
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .backends import EmbeddingProvider, HashingEmbedder, embed
from .corpus import DialogueContext, DialogueRecord, context_text
from .errors import (
    DuplicateKey,
    EmptyCollection,
    PlanOrderInvalid,
    SourceEmpty,
    UnknownSource,
)
from .planner import PlanDecision
from .registry import (
    DOCUMENTS,
    PERSONA,
    SourceId,
    SourceRegistry,
    persona_knowledge_registry,
)
from .text import Tokenizer, tokenize

ItemKey = tuple[int, ...]


@dataclass(frozen=True)
class KnowledgeItem:
    source: SourceId
    key: ItemKey
    text: str


@dataclass(frozen=True)
class RetrievedEvidence:
    item: KnowledgeItem
    score: float
    rank: int


class RetrieverKind(str, Enum):
    BM25 = "BM25"
    DENSE = "DENSE"


class Strategy(str, Enum):
    DEPENDENT_A = "DEPENDENT_A"
    INDEPENDENT_B = "INDEPENDENT_B"
    MERGED_C = "MERGED_C"
    CONCATENATED_D = "CONCATENATED_D"


@dataclass(frozen=True)
class RetrievalConfig:
    top_n: int = 1
    strategy: Strategy = Strategy.DEPENDENT_A
    retriever_kind: RetrieverKind = RetrieverKind.BM25
    context_window_turns: int | None = None

    def __post_init__(self) -> None:
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")
        if self.context_window_turns is not None and self.context_window_turns < 1:
            raise ValueError("context_window_turns must be >= 1 when set")


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self) -> None:
        if self.k1 < 0:
            raise ValueError("k1 must be >= 0")
        if not 0 <= self.b <= 1:
            raise ValueError("b must be in [0, 1]")


@dataclass
class ScanCounter:
    """Instrumentation: every search pass records the pool it enumerated."""

    searches: int = 0
    candidates_scanned: int = 0

    def add(self, pool_size: int) -> None:
        self.searches += 1
        self.candidates_scanned += pool_size


def persona_items(record: DialogueRecord) -> list[KnowledgeItem]:
    return [
        KnowledgeItem(PERSONA, (i,), text) for i, text in enumerate(record.persona)
    ]


def document_items(
    record: DialogueRecord, persona_index: int | None = None
) -> list[KnowledgeItem]:
    if persona_index is not None:
        return [
            KnowledgeItem(DOCUMENTS, (persona_index, j), text)
            for j, text in enumerate(record.documents[persona_index])
        ]
    return [
        KnowledgeItem(DOCUMENTS, (i, j), text)
        for i, docs in enumerate(record.documents)
        for j, text in enumerate(docs)
    ]


def concatenated_items(record: DialogueRecord) -> list[KnowledgeItem]:
    """Strategy d pool: each document glued to its persona sentence."""
    return [
        KnowledgeItem("CONCAT", (i, j), f"{record.persona[i]} {text}")
        for i, docs in enumerate(record.documents)
        for j, text in enumerate(docs)
    ]


# --- BM25 ---------------------------------------------------------------------


@dataclass(frozen=True)
class Bm25Index:
    items: tuple[KnowledgeItem, ...]
    params: Bm25Params
    term_counts: tuple[dict[str, int], ...]
    lengths: tuple[int, ...]
    avg_length: float
    df: dict[str, int]
    tokenizer: Tokenizer


def build_index(
    items: Sequence[KnowledgeItem],
    params: Bm25Params = Bm25Params(),
    tokenizer: Tokenizer = tokenize,
) -> Bm25Index:
    if not items:
        raise EmptyCollection("cannot index an empty item collection")
    keys = [item.key for item in items]
    if len(set(keys)) != len(keys):
        dupes = [k for k, c in Counter(keys).items() if c > 1]
        raise DuplicateKey(f"duplicate item keys: {dupes}")
    term_counts = []
    lengths = []
    df: Counter[str] = Counter()
    for item in items:
        counts = Counter(tokenizer(item.text))
        term_counts.append(dict(counts))
        lengths.append(sum(counts.values()))
        df.update(counts.keys())
    return Bm25Index(
        items=tuple(items),
        params=params,
        term_counts=tuple(term_counts),
        lengths=tuple(lengths),
        avg_length=sum(lengths) / len(lengths),
        df=dict(df),
        tokenizer=tokenizer,
    )


def bm25_search(index: Bm25Index, query: str, n: int) -> list[RetrievedEvidence]:
    """Top-n by Okapi BM25; idf = ln((|C|-df+0.5)/(df+0.5) + 1). Duplicate
    query tokens contribute once per occurrence. Zero-score items are
    excluded, so fewer than n results can come back."""
    if n < 1:
        raise ValueError("n must be >= 1")
    size = len(index.items)
    k1, b = index.params.k1, index.params.b
    query_tokens = index.tokenizer(query)
    scored: list[tuple[float, ItemKey, int]] = []
    for i in range(size):
        counts = index.term_counts[i]
        length = index.lengths[i]
        norm = k1 * (1 - b + b * length / index.avg_length)
        score = 0.0
        for token in query_tokens:
            tf = counts.get(token, 0)
            if tf == 0:
                continue
            idf = math.log((size - index.df[token] + 0.5) / (index.df[token] + 0.5) + 1)
            score += idf * tf * (k1 + 1) / (tf + norm)
        if score > 0:
            scored.append((score, index.items[i].key, i))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [
        RetrievedEvidence(item=index.items[i], score=score, rank=rank)
        for rank, (score, _, i) in enumerate(scored[:n], start=1)
    ]


# --- dense --------------------------------------------------------------------


def dense_search(
    provider: EmbeddingProvider,
    items: Sequence[KnowledgeItem],
    query: str,
    n: int,
) -> list[RetrievedEvidence]:
    """Top-n by cosine similarity; zero-score items are kept (tie-broken by
    ascending key) since dense scores carry no absence signal."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not items:
        return []
    vectors = embed(provider, [query] + [item.text for item in items])
    norms = np.linalg.norm(vectors, axis=1)
    query_vec = vectors[0]
    scores = []
    for i in range(1, len(vectors)):
        denom = norms[0] * norms[i]
        scores.append(float(vectors[i] @ query_vec / denom) if denom > 0 else 0.0)
    order = sorted(range(len(items)), key=lambda i: (-scores[i], items[i].key))
    return [
        RetrievedEvidence(item=items[i], score=scores[i], rank=rank)
        for rank, i in enumerate(order[:n], start=1)
    ]


def _search(
    pool: Sequence[KnowledgeItem],
    query: str,
    n: int,
    cfg: RetrievalConfig,
    params: Bm25Params,
    provider: EmbeddingProvider,
    counter: ScanCounter | None,
) -> list[RetrievedEvidence]:
    if counter is not None:
        counter.add(len(pool))
    if not pool:
        return []
    if cfg.retriever_kind is RetrieverKind.BM25:
        return bm25_search(build_index(pool, params), query, n)
    return dense_search(provider, pool, query, n)


# --- plan-driven retrieval ----------------------------------------------------


def retrieve_plan(
    plan: PlanDecision,
    context: DialogueContext,
    record: DialogueRecord,
    cfg: RetrievalConfig,
    registry: SourceRegistry | None = None,
    params: Bm25Params = Bm25Params(),
    provider: EmbeddingProvider | None = None,
    counter: ScanCounter | None = None,
) -> dict[SourceId, list[RetrievedEvidence]]:
    """Retrieve top-n evidence for each planned source, in plan order.

    Under DEPENDENT_A the documents pool is restricted to the rank-1
    persona's documents and the query stays context-only (the keying already
    encodes the dependency); under INDEPENDENT_B the pool is every document
    and the selected persona text is appended to the query. An empty plan
    retrieves nothing.
    """
    if cfg.strategy not in (Strategy.DEPENDENT_A, Strategy.INDEPENDENT_B):
        raise ValueError(
            f"retrieve_plan supports DEPENDENT_A/INDEPENDENT_B; "
            f"{cfg.strategy.value} is bench-only"
        )
    registry = registry if registry is not None else persona_knowledge_registry()
    if not registry.validate_order(plan.sources):
        raise PlanOrderInvalid(f"plan violates dependency order: {plan.sources}")
    if plan.is_null:
        return {}
    provider = provider if provider is not None else HashingEmbedder()
    query = context_text(context, cfg.context_window_turns)
    out: dict[SourceId, list[RetrievedEvidence]] = {}
    selected_persona: int | None = None
    selected_text: str | None = None
    for source in plan.sources:
        if source == PERSONA:
            pool = persona_items(record)
            if not pool:
                raise SourceEmpty("record has no persona sentences")
            results = _search(pool, query, cfg.top_n, cfg, params, provider, counter)
            out[PERSONA] = results
            if results:
                selected_persona = results[0].item.key[0]
                selected_text = results[0].item.text
        elif source == DOCUMENTS:
            if not any(record.documents):
                raise SourceEmpty("record has no document sentences")
            if cfg.strategy is Strategy.DEPENDENT_A:
                if selected_persona is None:
                    out[DOCUMENTS] = []
                    continue
                pool = document_items(record, selected_persona)
                doc_query = query
            else:
                pool = document_items(record)
                doc_query = f"{query} {selected_text}" if selected_text else query
            out[DOCUMENTS] = _search(
                pool, doc_query, cfg.top_n, cfg, params, provider, counter
            )
        else:
            raise UnknownSource(
                f"no store for source {source!r} in this record format"
            )
    return out


# --- strategy benchmark -------------------------------------------------------


@dataclass(frozen=True)
class BenchQuery:
    text: str
    persona_index: int
    doc_index: int


@dataclass(frozen=True)
class StrategyProfile:
    strategy: str
    N: int
    M: int
    candidates_scanned: int
    peak_items_resident: int
    wall_time_ns: int = 0
    persona_hit_rate: float | None = None
    documents_hit_rate: float | None = None


def profile_to_obj(profile: StrategyProfile) -> dict:
    obj = {
        "strategy": profile.strategy,
        "N": profile.N,
        "M": profile.M,
        "candidates_scanned": profile.candidates_scanned,
        "peak_items_resident": profile.peak_items_resident,
        "wall_time_ns": profile.wall_time_ns,
    }
    if profile.persona_hit_rate is not None:
        obj["persona_hit_rate"] = profile.persona_hit_rate
    if profile.documents_hit_rate is not None:
        obj["documents_hit_rate"] = profile.documents_hit_rate
    return obj


def gen_bench_corpus(
    N: int, M: int, queries_per_cell: int, seed: int = 0
) -> tuple[DialogueRecord, list[BenchQuery]]:
    """Synthetic uniform corpus: N personas, M documents each, plus queries
    that target a known (persona, document) pair."""
    if N < 1 or M < 1 or queries_per_cell < 1:
        raise ValueError("N, M, and queries_per_cell must be >= 1")
    rng = random.Random(f"{seed}:{N}:{M}")
    persona = tuple(f"profile p{i} enjoys hobby h{i} daily" for i in range(N))
    documents = tuple(
        tuple(f"hobby h{i} fact d{i}x{j} detail note" for j in range(M))
        for i in range(N)
    )
    record = DialogueRecord("bench", persona, documents, turns=())
    queries = []
    for _ in range(queries_per_cell):
        i = rng.randrange(N)
        j = rng.randrange(M)
        queries.append(BenchQuery(f"tell me about p{i} hobby h{i} fact d{i}x{j}", i, j))
    return record, queries


def run_strategy_bench(
    record: DialogueRecord,
    queries: Sequence[BenchQuery],
    strategy: Strategy,
    cfg: RetrievalConfig | None = None,
    params: Bm25Params = Bm25Params(),
    provider: EmbeddingProvider | None = None,
) -> StrategyProfile:
    """Run every query under one organization strategy with instrumented
    scans. Retrieval depth follows the strategy definitions (one item per
    store for a/b, two items from the merged pool for c, one concatenation
    for d); candidates_scanned is reported per query.
    """
    if not queries:
        raise ValueError("queries must be non-empty")
    cfg = cfg if cfg is not None else RetrievalConfig(retriever_kind=RetrieverKind.DENSE)
    provider = provider if provider is not None else HashingEmbedder()
    personas = persona_items(record)
    docs_by_persona = [document_items(record, i) for i in range(len(record.persona))]
    all_docs = document_items(record)
    n_personas = len(personas)
    doc_counts = {len(docs) for docs in docs_by_persona}
    if len(doc_counts) != 1:
        raise ValueError("bench corpus must have a uniform document count per persona")
    docs_per_persona = doc_counts.pop()

    counter = ScanCounter()
    persona_hits = 0
    doc_hits = 0

    def search(pool: Sequence[KnowledgeItem], text: str, n: int):
        return _search(pool, text, n, cfg, params, provider, counter)

    started = time.perf_counter_ns()
    if strategy in (Strategy.DEPENDENT_A, Strategy.INDEPENDENT_B):
        peak_resident = len(personas) + len(all_docs)
        for q in queries:
            top_personas = search(personas, q.text, 1)
            selected = top_personas[0].item.key[0] if top_personas else None
            if selected is not None and selected == q.persona_index:
                persona_hits += 1
            if strategy is Strategy.DEPENDENT_A:
                pool = docs_by_persona[selected] if selected is not None else []
                top_docs = search(pool, q.text, 1)
            else:
                top_docs = search(all_docs, q.text, 1)
            if top_docs and top_docs[0].item.key == (q.persona_index, q.doc_index):
                doc_hits += 1
    elif strategy is Strategy.MERGED_C:
        merged = personas + all_docs
        peak_resident = len(merged)
        for q in queries:
            first = search(merged, q.text, 1)
            second_pass = search(merged, q.text, 2)
            returned = list(first)
            for ev in second_pass:
                if all(ev.item.key != r.item.key for r in returned):
                    returned.append(ev)
                    break
            # Contains-gold over the two returned items, not rank-1 recall.
            if any(
                ev.item.source == PERSONA and ev.item.key == (q.persona_index,)
                for ev in returned
            ):
                persona_hits += 1
            if any(
                ev.item.source == DOCUMENTS
                and ev.item.key == (q.persona_index, q.doc_index)
                for ev in returned
            ):
                doc_hits += 1
    elif strategy is Strategy.CONCATENATED_D:
        pool = concatenated_items(record)
        # Each concatenated item physically stores two sentences.
        peak_resident = 2 * len(pool)
        for q in queries:
            top = search(pool, q.text, 1)
            if top and top[0].item.key[0] == q.persona_index:
                persona_hits += 1
            if top and top[0].item.key == (q.persona_index, q.doc_index):
                doc_hits += 1
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unknown strategy {strategy!r}")
    elapsed = time.perf_counter_ns() - started

    total = counter.candidates_scanned
    if total % len(queries):
        raise RuntimeError("scan count not uniform across queries")
    return StrategyProfile(
        strategy=strategy.value,
        N=n_personas,
        M=docs_per_persona,
        candidates_scanned=total // len(queries),
        peak_items_resident=peak_resident,
        wall_time_ns=elapsed,
        persona_hit_rate=persona_hits / len(queries),
        documents_hit_rate=doc_hits / len(queries),
    )


def run_bench(
    n_list: Sequence[int],
    m_list: Sequence[int],
    strategies: Sequence[Strategy] = tuple(Strategy),
    queries_per_cell: int = 5,
    seed: int = 0,
    cfg: RetrievalConfig | None = None,
) -> list[StrategyProfile]:
    profiles = []
    for n in n_list:
        for m in m_list:
            record, queries = gen_bench_corpus(n, m, queries_per_cell, seed)
            for strategy in strategies:
                profiles.append(run_strategy_bench(record, queries, strategy, cfg))
    return profiles
