"""Provider abstractions for text generation, embedding, reranking and proof checking.

Production deployments talk to HTTP endpoints; tests and offline demos use the
deterministic in-process implementations (`ScriptedTextProvider`,
`HashEmbeddingProvider`, ...).  Every provider accepts an optional shared
`CallLog` so orchestration code can be audited after the fact (which roles were
invoked, how often, in which order).
"""
from __future__ import annotations

import hashlib
import json
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Protocol, Sequence

import numpy as np


class ProviderError(Exception):
    """A provider failed to produce a usable response after its retries."""


def fingerprint(text: str) -> str:
    """Stable short fingerprint used to key scripted mock responses."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class CallRecord:
    role: str
    kind: str
    key: str


class CallLog:
    """Thread-safe append-only record of provider invocations."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._records: list[CallRecord] = []

    def record(self, role: str, kind: str, key: str) -> None:
        with self._lock:
            self._records.append(CallRecord(role=role, kind=kind, key=key))

    def entries(self, role: str | None = None) -> list[CallRecord]:
        with self._lock:
            records = list(self._records)
        if role is None:
            return records
        return [r for r in records if r.role == role]

    def count(self, role: str | None = None) -> int:
        return len(self.entries(role))


class TextProvider(Protocol):
    def generate(self, prompt: str, **params: Any) -> str: ...


class EmbeddingProvider(Protocol):
    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


class RerankProvider(Protocol):
    def score(self, query: str, passage: str, instruction: str) -> float: ...


def call_with_retries(fn: Callable[[], Any], *, max_retries: int, wait_seconds: float = 0.0) -> Any:
    """Run `fn`, retrying `max_retries` times on ProviderError, waiting in between."""
    attempts = max(0, max_retries) + 1
    last: Exception | None = None
    for attempt in range(attempts):
        try:
            return fn()
        except ProviderError as exc:
            last = exc
            if attempt + 1 < attempts and wait_seconds > 0:
                time.sleep(wait_seconds)
    raise ProviderError(f"provider failed after {attempts} attempts: {last}") from last


def _auth_token(env_var: str | None) -> str | None:
    if not env_var:
        return None
    token = os.environ.get(env_var)
    if not token:
        raise ProviderError(f"auth environment variable {env_var!r} is not set")
    return token


def _post_json(url: str, payload: Mapping[str, Any], *, token: str | None, timeout: float) -> dict:
    body = json.dumps(payload).encode("utf-8")
    request = urllib.request.Request(url, data=body, method="POST")
    request.add_header("Content-Type", "application/json")
    if token:
        request.add_header("Authorization", f"Bearer {token}")
    try:
        with urllib.request.urlopen(request, timeout=timeout) as response:
            return json.loads(response.read().decode("utf-8"))
    except (urllib.error.URLError, TimeoutError, ValueError) as exc:
        raise ProviderError(f"transport failure against {url}: {exc}") from exc


@dataclass
class HttpTextProvider:
    """Text generation over a JSON-POST endpoint.

    Request: {"model": ..., "prompt": ..., "params": {...}} ; response: {"text": ...}.
    """

    url: str
    model: str
    auth_env: str | None = None
    timeout: float = 120.0
    role: str = "text"
    log: CallLog | None = None

    def generate(self, prompt: str, **params: Any) -> str:
        if self.log is not None:
            self.log.record(self.role, "text", fingerprint(prompt))
        token = _auth_token(self.auth_env)
        doc = _post_json(
            self.url,
            {"model": self.model, "prompt": prompt, "params": params},
            token=token,
            timeout=self.timeout,
        )
        text = doc.get("text")
        if not isinstance(text, str):
            raise ProviderError(f"endpoint {self.url} returned no text field")
        return text


@dataclass
class HttpEmbeddingProvider:
    """Embedding over a JSON-POST endpoint: {"model", "texts"} -> {"vectors": [[...]]}."""

    url: str
    model: str
    auth_env: str | None = None
    timeout: float = 120.0
    role: str = "embedder"
    log: CallLog | None = None

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if self.log is not None:
            for text in texts:
                self.log.record(self.role, "embed", fingerprint(text))
        token = _auth_token(self.auth_env)
        doc = _post_json(
            self.url,
            {"model": self.model, "texts": list(texts)},
            token=token,
            timeout=self.timeout,
        )
        vectors = doc.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise ProviderError(f"endpoint {self.url} returned a malformed vectors field")
        return [np.asarray(vec, dtype=np.float32) for vec in vectors]


@dataclass
class HttpRerankProvider:
    """Relevance-probability scoring: {"model", "query", "passage", "instruction"} -> {"score"}."""

    url: str
    model: str
    auth_env: str | None = None
    timeout: float = 120.0
    role: str = "reranker"
    log: CallLog | None = None

    def score(self, query: str, passage: str, instruction: str) -> float:
        if self.log is not None:
            self.log.record(self.role, "rerank", fingerprint(query + "\x00" + passage))
        token = _auth_token(self.auth_env)
        doc = _post_json(
            self.url,
            {"model": self.model, "query": query, "passage": passage, "instruction": instruction},
            token=token,
            timeout=self.timeout,
        )
        score = doc.get("score")
        if not isinstance(score, (int, float)) or not 0.0 <= float(score) <= 1.0:
            raise ProviderError(f"endpoint {self.url} returned an out-of-range score: {score!r}")
        return float(score)


# ---------------------------------------------------------------------------
# Deterministic offline implementations


@dataclass
class ScriptedTextProvider:
    """Deterministic text provider for tests.

    Responses are resolved in order of precedence:
      1. `by_prompt` exact-match table,
      2. `by_fingerprint` table keyed by `fingerprint(prompt)`,
      3. the `default` callable (receives the prompt),
      4. the next entry of `sequence` (entries may be strings, callables, or
         exceptions to raise).
    Raising ProviderError simulates a transport/model failure.
    """

    by_prompt: dict[str, str] = field(default_factory=dict)
    by_fingerprint: dict[str, str] = field(default_factory=dict)
    default: Callable[[str], str] | None = None
    sequence: list[Any] = field(default_factory=list)
    role: str = "text"
    log: CallLog | None = None
    calls: list[str] = field(default_factory=list)

    def generate(self, prompt: str, **params: Any) -> str:
        self.calls.append(prompt)
        if self.log is not None:
            self.log.record(self.role, "text", fingerprint(prompt))
        if prompt in self.by_prompt:
            return self.by_prompt[prompt]
        key = fingerprint(prompt)
        if key in self.by_fingerprint:
            return self.by_fingerprint[key]
        if self.default is not None:
            result = self.default(prompt)
            if isinstance(result, Exception):
                raise result
            return result
        if self.sequence:
            item = self.sequence.pop(0)
            if callable(item):
                item = item(prompt)
            if isinstance(item, Exception):
                raise item
            return str(item)
        raise ProviderError(f"no scripted response for prompt fingerprint {key}")


def hash_vector(text: str, dim: int) -> np.ndarray:
    """Platform-independent pseudo-random unit-scale vector derived from `text`."""
    out = np.empty(dim, dtype=np.float64)
    produced = 0
    counter = 0
    while produced < dim:
        digest = hashlib.sha256(f"{counter}:{text}".encode("utf-8")).digest()
        words = np.frombuffer(digest, dtype="<u4").astype(np.float64)
        values = words / float(2**32) * 2.0 - 1.0
        take = min(len(values), dim - produced)
        out[produced : produced + take] = values[:take]
        produced += take
        counter += 1
    return out.astype(np.float32)


@dataclass
class HashEmbeddingProvider:
    """Deterministic embedding keyed by the text fingerprint; fixed dimension."""

    dim: int = 64
    role: str = "embedder"
    log: CallLog | None = None

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if self.log is not None:
            for text in texts:
                self.log.record(self.role, "embed", fingerprint(text))
        return [hash_vector(text, self.dim) for text in texts]


def _tokens(text: str) -> set[str]:
    return {tok for tok in "".join(c.lower() if c.isalnum() else " " for c in text).split() if tok}


@dataclass
class OverlapRerankProvider:
    """Deterministic reranker: token-overlap ratio between query and passage."""

    role: str = "reranker"
    log: CallLog | None = None
    score_fn: Callable[[str, str, str], float] | None = None
    fail_names: frozenset[str] = frozenset()

    def score(self, query: str, passage: str, instruction: str) -> float:
        if self.log is not None:
            self.log.record(self.role, "rerank", fingerprint(query + "\x00" + passage))
        for name in self.fail_names:
            if name in passage:
                raise ProviderError(f"scripted rerank failure for {name}")
        if self.score_fn is not None:
            return self.score_fn(query, passage, instruction)
        query_tokens = _tokens(query)
        if not query_tokens:
            return 0.0
        overlap = len(query_tokens & _tokens(passage)) / len(query_tokens)
        return max(0.0, min(1.0, overlap))
