"""Standard-mode retrieval: exhaustive cosine index plus head-of-list reranking.

The index is exact and immutable: vectors are stored as 32-bit floats,
similarities are accumulated in 64-bit, and every ranking uses the same total
order (score descending, then name ascending) so results are reproducible
across runs and across save/load round-trips.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Passage, TemplateConfig, compose_query, rerank_instruction
from .providers import (
    CallLog,
    EmbeddingProvider,
    ProviderError,
    RerankProvider,
    call_with_retries,
)

STAGE_EMBED = "embed_only"
STAGE_RERANKED = "reranked"
STAGE_FILTERED = "filtered"
STAGE_AGGREGATED = "aggregated"

_MAGIC = b"DSIX"
_FORMAT_VERSION = 1


class RetrievalError(Exception):
    pass


@dataclass(frozen=True)
class Hit:
    decl_name: str
    score: float
    rank: int
    degraded: bool = False


@dataclass(frozen=True)
class RankedList:
    query: str
    hits: tuple[Hit, ...]
    stage: str

    def names(self) -> list[str]:
        return [hit.decl_name for hit in self.hits]

    def truncated(self, k: int) -> "RankedList":
        return RankedList(query=self.query, hits=self.hits[:k], stage=self.stage)


def ranked_list(
    query: str,
    scored: Iterable[tuple[str, float]],
    stage: str,
    degraded: frozenset[str] = frozenset(),
) -> RankedList:
    """Sort (name, score) pairs into a RankedList under the standard total order."""
    pairs = list(scored)
    names = [name for name, _ in pairs]
    if len(set(names)) != len(names):
        raise RetrievalError("duplicate declaration names in ranked list")
    pairs.sort(key=lambda pair: (-pair[1], pair[0]))
    hits = tuple(
        Hit(decl_name=name, score=float(score), rank=rank, degraded=name in degraded)
        for rank, (name, score) in enumerate(pairs)
    )
    return RankedList(query=query, hits=hits, stage=stage)


@dataclass(frozen=True)
class IndexProvenance:
    embedder_model: str = ""
    template_version: str = ""


@dataclass(frozen=True)
class VectorIndex:
    names: tuple[str, ...]
    matrix: np.ndarray  # float32, shape (n, dim)
    provenance: IndexProvenance = IndexProvenance()
    norms: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.names):
            raise RetrievalError("index matrix shape does not match its name list")
        if len(set(self.names)) != len(self.names):
            raise RetrievalError("duplicate declaration names in index")
        if not np.all(np.isfinite(self.matrix)):
            raise RetrievalError("index vectors must be finite")
        norms = np.linalg.norm(self.matrix.astype(np.float64), axis=1)
        if np.any(norms == 0.0):
            zero = self.names[int(np.argmin(norms))]
            raise RetrievalError(f"zero vector for declaration {zero!r}")
        object.__setattr__(self, "norms", norms)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def __len__(self) -> int:
        return len(self.names)


def build_index(
    passages: Sequence[Passage],
    embedder: EmbeddingProvider,
    provenance: IndexProvenance = IndexProvenance(),
    max_retries: int = 2,
) -> VectorIndex:
    """Embed passages one entry per passage, order-stable.

    A dimension mismatch is reported with the offending passage's name; a
    provider failure (after retries) aborts the build.
    """
    if not passages:
        raise RetrievalError("cannot build an index from zero passages")
    vectors = call_with_retries(
        lambda: embedder.embed([p.text for p in passages]), max_retries=max_retries
    )
    if len(vectors) != len(passages):
        raise RetrievalError("embedder returned a different number of vectors than passages")
    dim = len(np.atleast_1d(vectors[0]))
    rows = []
    for passage, vector in zip(passages, vectors):
        vector = np.asarray(vector, dtype=np.float32).reshape(-1)
        if len(vector) != dim:
            raise RetrievalError(
                f"embedding dimension mismatch for passage {passage.decl_name!r}: "
                f"got {len(vector)}, expected {dim}"
            )
        rows.append(vector)
    matrix = np.vstack(rows)
    return VectorIndex(
        names=tuple(p.decl_name for p in passages), matrix=matrix, provenance=provenance
    )


def save_index(index: VectorIndex, path: str | Path) -> None:
    """Binary layout: magic, version, dim, count, provenance strings, then
    (name length, name bytes, dim little-endian float32) per entry."""
    path = Path(path)
    with path.open("wb") as handle:
        handle.write(_MAGIC)
        handle.write(struct.pack("<IIQ", _FORMAT_VERSION, index.dim, len(index)))
        for text in (index.provenance.embedder_model, index.provenance.template_version):
            blob = text.encode("utf-8")
            handle.write(struct.pack("<I", len(blob)))
            handle.write(blob)
        for name, row in zip(index.names, index.matrix):
            blob = name.encode("utf-8")
            handle.write(struct.pack("<I", len(blob)))
            handle.write(blob)
            handle.write(row.astype("<f4").tobytes())


def load_index(path: str | Path) -> VectorIndex:
    path = Path(path)
    data = path.read_bytes()
    view = memoryview(data)
    if bytes(view[:4]) != _MAGIC:
        raise RetrievalError(f"{path} is not an index file (bad magic)")
    version, dim, count = struct.unpack("<IIQ", view[4:20])
    if version != _FORMAT_VERSION:
        raise RetrievalError(f"unsupported index format version {version}")
    offset = 20

    def read_string() -> str:
        nonlocal offset
        (length,) = struct.unpack("<I", view[offset : offset + 4])
        offset += 4
        text = bytes(view[offset : offset + length]).decode("utf-8")
        offset += length
        return text

    embedder_model = read_string()
    template_version = read_string()
    names: list[str] = []
    rows = np.empty((count, dim), dtype=np.float32)
    for i in range(count):
        names.append(read_string())
        rows[i] = np.frombuffer(view, dtype="<f4", count=dim, offset=offset)
        offset += 4 * dim
    return VectorIndex(
        names=tuple(names),
        matrix=rows,
        provenance=IndexProvenance(embedder_model=embedder_model, template_version=template_version),
    )


def cosine_topk(index: VectorIndex, qvec: np.ndarray, k: int) -> RankedList:
    """Exhaustive cosine top-k; scores lie in [-1, 1]."""
    if k < 1:
        raise RetrievalError("k must be >= 1")
    qvec = np.asarray(qvec, dtype=np.float64).reshape(-1)
    if len(qvec) != index.dim:
        raise RetrievalError(f"query dimension {len(qvec)} does not match index dim {index.dim}")
    qnorm = np.linalg.norm(qvec)
    if qnorm == 0.0:
        raise RetrievalError("query vector is all-zero")
    scores = (index.matrix.astype(np.float64) @ qvec) / (index.norms * qnorm)
    scores = np.clip(scores, -1.0, 1.0)
    full = ranked_list("", zip(index.names, scores.tolist()), STAGE_EMBED)
    return full.truncated(k)


def rerank(
    query: str,
    candidates: RankedList,
    reranker: RerankProvider,
    passages: Mapping[str, Passage],
    template: TemplateConfig = TemplateConfig(),
    max_retries: int = 2,
    log: CallLog | None = None,
) -> RankedList:
    """Re-sort candidates by provider relevance probability.

    The provider sees each candidate's kind through a kind-aware instruction.
    A candidate whose scoring fails after retries keeps its embed-stage score
    and is flagged degraded.
    """
    if not candidates.hits:
        raise RetrievalError("rerank requires a non-empty candidate list")
    scored: list[tuple[str, float]] = []
    degraded: set[str] = set()
    for hit in candidates.hits:
        passage = passages.get(hit.decl_name)
        if passage is None:
            raise RetrievalError(f"no passage for candidate {hit.decl_name!r}")
        instruction = rerank_instruction(passage.kind, template)
        try:
            score = call_with_retries(
                lambda p=passage, ins=instruction: reranker.score(query, p.text, ins),
                max_retries=max_retries,
            )
        except ProviderError:
            if log is not None:
                log.record("reranker", "degraded", hit.decl_name)
            scored.append((hit.decl_name, hit.score))
            degraded.add(hit.decl_name)
            continue
        scored.append((hit.decl_name, float(score)))
    out = ranked_list(query, scored, STAGE_RERANKED, degraded=frozenset(degraded))
    return out


@dataclass
class SearchEngine:
    """Standard mode: embed the query, retrieve a candidate pool, optionally rerank."""

    index: VectorIndex
    passages: Mapping[str, Passage]
    embedder: EmbeddingProvider
    reranker: RerankProvider | None = None
    template: TemplateConfig = TemplateConfig()
    rerank_pool: int = 50
    max_retries: int = 2
    log: CallLog | None = None

    def embed_query(self, query: str) -> np.ndarray:
        text = compose_query(query, self.template)
        vectors = call_with_retries(
            lambda: self.embedder.embed([text]), max_retries=self.max_retries
        )
        return np.asarray(vectors[0], dtype=np.float64)

    def search(
        self,
        query: str,
        k: int,
        *,
        rerank_enabled: bool = True,
        rerank_pool: int | None = None,
        kind_aware: bool | None = None,
    ) -> RankedList:
        """Two-stage search.  `kind_aware` overrides the rerank instruction
        branching only; passage text is fixed at index-build time."""
        if k < 1:
            raise RetrievalError("k must be >= 1")
        pool = rerank_pool or self.rerank_pool
        if pool < 1:
            raise RetrievalError("rerank_pool must be >= 1")
        qvec = self.embed_query(query)
        candidates = cosine_topk(self.index, qvec, max(k, pool))
        candidates = RankedList(query=query, hits=candidates.hits, stage=candidates.stage)
        if not rerank_enabled or self.reranker is None:
            return candidates.truncated(k)
        pooled = candidates.truncated(pool)
        template = self.template
        if kind_aware is not None and kind_aware != template.kind_aware:
            template = TemplateConfig(version=template.version, kind_aware=kind_aware)
        out = rerank(
            query,
            pooled,
            self.reranker,
            self.passages,
            template=template,
            max_retries=self.max_retries,
            log=self.log,
        )
        return out.truncated(k)
