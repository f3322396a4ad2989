"""Generation, embedding, and consistency-judging backends.

Three generation backends share one protocol: an OpenAI-compatible HTTP chat
client for real runs, a scripted replay backend for bit-exact offline runs,
and an echo backend for structural tests. The judge protocol stands in for
the entailment model that scores response/grounding consistency; the bundled
RuleJudge is a deterministic token-overlap rule, not a trained model.
"""

from __future__ import annotations

import json
import os
import threading
import time
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum
from hashlib import blake2b
from pathlib import Path
from typing import Protocol

import numpy as np
import requests

from .errors import (
    BackendError,
    DimensionMismatch,
    HttpStatus,
    ParseError,
    ProviderFailure,
    ReplayMiss,
    SchemaError,
    Timeout,
)
from .text import Tokenizer, tokenize


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    temperature: float = 0.1
    top_p: float = 0.1
    max_tokens: int = 256

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


class BackendKind(str, Enum):
    HTTP_CHAT = "HTTP_CHAT"
    SCRIPTED = "SCRIPTED"
    ECHO = "ECHO"


@dataclass(frozen=True)
class BackendDescriptor:
    kind: BackendKind
    endpoint: str | None = None
    model_name: str | None = None
    api_key_env: str | None = None
    timeout_ms: int = 30_000
    retries: int = 2
    replay_path: str | None = None
    echo_transform: str = "identity"

    def __post_init__(self) -> None:
        if self.kind is BackendKind.HTTP_CHAT and not (self.endpoint and self.model_name):
            raise ValueError("HTTP_CHAT requires endpoint and model_name")
        if self.kind is BackendKind.SCRIPTED and not self.replay_path:
            raise ValueError("SCRIPTED requires replay_path")


class GenerationBackend(Protocol):
    def generate(self, req: GenerationRequest) -> str: ...


class HttpChatBackend:
    """OpenAI-compatible chat-completions client with retry/backoff.

    Retries timeouts, connection errors, 429, and 5xx with exponential
    backoff; other statuses raise immediately. A response, once received,
    is returned as-is and never re-requested.
    """

    def __init__(self, descriptor: BackendDescriptor, backoff_s: float = 0.25):
        if descriptor.kind is not BackendKind.HTTP_CHAT:
            raise ValueError("descriptor kind must be HTTP_CHAT")
        self._descriptor = descriptor
        self._backoff_s = backoff_s
        self._lock = threading.Lock()
        self.attempts = 0
        self.successes = 0

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        env = self._descriptor.api_key_env
        if env and os.environ.get(env):
            headers["Authorization"] = f"Bearer {os.environ[env]}"
        return headers

    def generate(self, req: GenerationRequest) -> str:
        d = self._descriptor
        url = d.endpoint.rstrip("/") + "/chat/completions"
        body = {
            "model": d.model_name,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "top_p": req.top_p,
            "max_tokens": req.max_tokens,
        }
        last_exc: Exception | None = None
        for attempt in range(d.retries + 1):
            if attempt:
                time.sleep(self._backoff_s * 2 ** (attempt - 1))
            with self._lock:
                self.attempts += 1
            try:
                resp = requests.post(
                    url, json=body, headers=self._headers(), timeout=d.timeout_ms / 1000
                )
            except requests.Timeout as exc:
                last_exc = Timeout(f"request timed out after {d.timeout_ms} ms")
                last_exc.__cause__ = exc
                continue
            except requests.RequestException as exc:
                last_exc = BackendError(f"request failed: {exc}")
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_exc = HttpStatus(resp.status_code, resp.text[:200])
                continue
            if resp.status_code >= 400:
                raise HttpStatus(resp.status_code, resp.text[:200])
            try:
                text = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"malformed completion body: {exc}") from exc
            with self._lock:
                self.successes += 1
            return text
        raise last_exc if last_exc is not None else BackendError("no attempts made")


class ScriptedBackend:
    """Replay backend: prompt looked up exactly, then by longest prefix.

    The replay file is JSONL with objects {"prompt_key": ..., "response": ...};
    a key matches when it is a prefix of the prompt. Misses raise ReplayMiss,
    never improvise.
    """

    def __init__(self, table: dict[str, str]):
        self._table = dict(table)

    @classmethod
    def from_file(cls, path: str | Path) -> ScriptedBackend:
        table: dict[str, str] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    obj = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise ParseError(lineno, f"invalid JSON: {exc.msg}") from None
                if not isinstance(obj, dict) or not isinstance(obj.get("prompt_key"), str):
                    raise SchemaError(lineno, "prompt_key", "expected string")
                if not isinstance(obj.get("response"), str):
                    raise SchemaError(lineno, "response", "expected string")
                table[obj["prompt_key"]] = obj["response"]
        return cls(table)

    def generate(self, req: GenerationRequest) -> str:
        if req.prompt in self._table:
            return self._table[req.prompt]
        best: str | None = None
        for key in self._table:
            if req.prompt.startswith(key) and (best is None or len(key) > len(best)):
                best = key
        if best is None:
            raise ReplayMiss(f"no replay entry for prompt starting {req.prompt[:80]!r}")
        return self._table[best]


class EchoBackend:
    """Deterministic transforms of the prompt, for structural tests.

    "identity" returns the prompt; "middle_first" returns the first
    evidence text inside the [MIDDLE]...[EOM] block (the whole prompt
    if no block is present).
    """

    def __init__(
        self,
        transform: str = "identity",
        middle_open: str = "[MIDDLE]",
        middle_close: str = "[EOM]",
    ):
        if transform not in ("identity", "middle_first"):
            raise ValueError(f"unknown echo transform {transform!r}")
        self._transform = transform
        self._middle_open = middle_open
        self._middle_close = middle_close

    def generate(self, req: GenerationRequest) -> str:
        if self._transform == "identity":
            return req.prompt
        start = req.prompt.find(self._middle_open)
        if start < 0:
            return req.prompt
        start += len(self._middle_open)
        end = req.prompt.find(self._middle_close, start)
        if end < 0:
            end = len(req.prompt)
        inner = req.prompt[start:end].strip()
        return inner.split("; ")[0].strip()


def create_backend(descriptor: BackendDescriptor) -> GenerationBackend:
    if descriptor.kind is BackendKind.HTTP_CHAT:
        return HttpChatBackend(descriptor)
    if descriptor.kind is BackendKind.SCRIPTED:
        return ScriptedBackend.from_file(descriptor.replay_path)
    return EchoBackend(descriptor.echo_transform)


# --- embeddings ---------------------------------------------------------------


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


class HashingEmbedder:
    """Feature-hashed unigram counts, L2-normalized. Deterministic, no model.

    Each token is hashed with blake2b onto one of `dim` buckets; a text with
    no tokens embeds to the zero vector.
    """

    def __init__(self, dim: int = 256, tokenizer: Tokenizer = tokenize):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self._tokenizer = tokenizer

    def _bucket(self, token: str) -> int:
        digest = blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big") % self.dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for row, text in enumerate(texts):
            for token in self._tokenizer(text):
                out[row, self._bucket(token)] += 1.0
            norm = np.linalg.norm(out[row])
            if norm > 0:
                out[row] /= norm
        return out


def embed(provider: EmbeddingProvider, texts: Sequence[str]) -> np.ndarray:
    if not texts:
        raise ProviderFailure("no texts to embed")
    try:
        vectors = np.asarray(provider.embed(list(texts)), dtype=np.float64)
    except (DimensionMismatch, ProviderFailure):
        raise
    except Exception as exc:
        raise ProviderFailure(f"embedding provider failed: {exc}") from exc
    if vectors.ndim != 2 or vectors.shape[0] != len(texts):
        raise DimensionMismatch(
            f"expected ({len(texts)}, dim) array, got shape {vectors.shape}"
        )
    if vectors.shape[1] != provider.dim:
        raise DimensionMismatch(
            f"provider dim {provider.dim} but vectors have {vectors.shape[1]}"
        )
    return vectors


# --- judging ------------------------------------------------------------------


class Judge(Protocol):
    def judge(self, response: str, grounding: str) -> bool: ...


class RuleJudge:
    """True iff the response covers at least `threshold` of the grounding's
    content tokens (deduplicated, stopwords removed). Vacuously true when
    the grounding has no content tokens."""

    def __init__(
        self,
        threshold: float = 0.5,
        tokenizer: Tokenizer = tokenize,
        stopwords: frozenset[str] = frozenset(),
    ):
        if not 0 <= threshold <= 1:
            raise ValueError("threshold must be in [0, 1]")
        self._threshold = threshold
        self._tokenizer = tokenizer
        self._stopwords = stopwords

    def judge(self, response: str, grounding: str) -> bool:
        content = set(self._tokenizer(grounding)) - self._stopwords
        if not content:
            return True
        covered = content & set(self._tokenizer(response))
        return len(covered) / len(content) >= self._threshold


class ConstantJudge:
    def __init__(self, verdict: bool):
        self._verdict = verdict

    def judge(self, response: str, grounding: str) -> bool:
        return self._verdict
