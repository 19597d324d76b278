#!/usr/bin/env python3
"""Standard mode, end to end: corpus -> informalization -> index -> search.

Runs entirely offline against the deterministic mock providers; swap in the
HTTP providers (declsearch.providers) to hit real endpoints.
"""
from pathlib import Path

from declsearch.corpus import (
    InformalizeConfig,
    TemplateConfig,
    compose_passage,
    compose_passages,
    informalize,
    load_corpus,
    topological_order,
)
from declsearch.mocks import MockInformalizer
from declsearch.providers import HashEmbeddingProvider, OverlapRerankProvider
from declsearch.retrieval import SearchEngine, build_index

FIXTURES = Path(__file__).parent.parent / "fixtures"

# ---------------------------------------------------------------- load + order
snapshot = load_corpus(FIXTURES / "corpus_raw.jsonl")
print(f"loaded {len(snapshot)} declarations from the synthetic corpus")

order = topological_order(snapshot)
print(f"first five in dependency order: {order[:5]}")

# -------------------------------------------------------- bottom-up enrichment
# Each prompt carries the already-written descriptions of the record's
# dependencies, so later records are described in grounded terms.
result = informalize(snapshot, MockInformalizer(), MockInformalizer(), InformalizeConfig())
snapshot = result.snapshot
print(f"informalized all records ({len(result.failures)} failures)")

example = snapshot.records[order[-1]]
print(f"\n{example.name} ({example.kind.label}):\n  {example.informal}")

# ------------------------------------------------------------------ templating
# Definitions carry their value field into the passage; theorem values are
# proof terms and are omitted.
a_def = next(r for r in snapshot.records.values() if r.kind.name == "def")
a_thm = next(r for r in snapshot.records.values() if r.kind.name == "theorem")
print("\ndef passage includes its value:")
print("  " + compose_passage(a_def).text.replace("\n", "\n  "))
assert "value:" not in compose_passage(a_thm).text

# The kind-blind ablation renders every record with the theorem template:
blind = compose_passage(a_def, TemplateConfig(kind_aware=False))
assert "value:" not in blind.text and "kind: theorem" in blind.text

# ------------------------------------------------------------ index and search
passages = compose_passages(snapshot)
index = build_index(passages, HashEmbeddingProvider(dim=64))
engine = SearchEngine(
    index=index,
    passages={p.decl_name: p for p in passages},
    embedder=HashEmbeddingProvider(dim=64),
    reranker=OverlapRerankProvider(),
)

for query in ("result about compact", "result about length"):
    print(f"\ntop 5 for {query!r} (embed + rerank):")
    for hit in engine.search(query, k=5).hits:
        print(f"  {hit.rank}  {hit.score:.3f}  {hit.decl_name}")

# The retriever-only ablation skips the rerank stage:
embed_only = engine.search("result about compact", k=5, rerank_enabled=False)
print(f"\nretriever-only stage marker: {embed_only.stage}")
