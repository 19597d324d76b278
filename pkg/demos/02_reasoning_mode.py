#!/usr/bin/env python3
"""Reasoning mode: sketch -> retrieve per step -> filter -> judge -> revise.

Shows the two-branch run, the trace log the UI consumes, and the rank-discount
pooling arithmetic that merges per-step filtered lists into one ranking.
"""
import math
from pathlib import Path

from declsearch.corpus import compose_passages, informalize, load_corpus
from declsearch.mocks import (
    MockFilter,
    MockInformalizer,
    MockJudge,
    MockReviser,
    MockSketcher,
)
from declsearch.providers import HashEmbeddingProvider, OverlapRerankProvider
from declsearch.reasoning import (
    ReasoningConfig,
    ReasoningEnv,
    ReasoningProviders,
    Target,
    TraceLog,
    aggregate,
    run_reasoning,
)
from declsearch.retrieval import RankedList, Hit, SearchEngine, build_index

FIXTURES = Path(__file__).parent.parent / "fixtures"

# ------------------------------------------------- the rank-discount rule alone
# A document at 0-indexed rank i contributes 1/log2(i+2); contributions sum
# across the lists a document appears in.
single = RankedList(
    query="demo",
    hits=tuple(Hit(n, 1.0, i) for i, n in enumerate(["X", "Y", "Z"])),
    stage="filtered",
)
for entry in aggregate([single]).entries:
    print(f"  {entry.decl_name}: {entry.score:.2f}")
assert abs(aggregate([single]).entries[1].score - 1 / math.log2(3)) < 1e-12

# ----------------------------------------------------------- standard substrate
snapshot = informalize(
    load_corpus(FIXTURES / "corpus_raw.jsonl"), MockInformalizer(), MockInformalizer()
).snapshot
passages = compose_passages(snapshot)
index = build_index(passages, HashEmbeddingProvider(dim=64))
engine = SearchEngine(
    index=index,
    passages={p.decl_name: p for p in passages},
    embedder=HashEmbeddingProvider(dim=64),
    reranker=OverlapRerankProvider(),
)

# -------------------------------------------------------------- the full loop
env = ReasoningEnv(
    search=lambda query, k: engine.search(query, k),
    records=snapshot.records,
    providers=ReasoningProviders(
        sketcher=MockSketcher(),
        filterer=MockFilter(),
        judge=MockJudge(),
        reviser=MockReviser(),
    ),
)
target = Target(
    informal="compactness interacts with open covers",
    formal="theorem t : compact open sets admit finite subcovers",
)
trace = TraceLog()
result = run_reasoning(target, env, ReasoningConfig(budget=2), trace=trace)

print(f"\nrun status: {result.status}, winning branch: {result.winner}")
for branch in result.branches:
    print(
        f"  branch {branch.branch_id}: {branch.status}, "
        f"revisions {branch.final_sketch.revision if branch.final_sketch else '-'}, "
        f"judge calls {len(branch.judge_trace)}"
    )

print("\naggregated premises (top 8):")
for entry in result.ranking.entries[:8]:
    print(f"  {entry.score:.3f}  {entry.decl_name}")

print("\nfirst trace events (what the run inspector replays):")
for record in trace.merged()[:5]:
    print(f"  branch {record['branch']}: {record['event']}")
