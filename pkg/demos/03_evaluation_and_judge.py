#!/usr/bin/env python3
"""Evaluation harness walkthrough: ranking metrics, premise-group metrics,
and the anonymized judge protocol with its position-bias diagnostic.
"""
import math

from declsearch.evaluation import (
    JudgeEntry,
    MPRItem,
    PremiseGroup,
    Routing,
    build_judge_prompt,
    covered_at_k,
    group_recall_at_k,
    judge_report,
    ndcg_at_k,
    parse_judge_response,
    recall_at_k,
    run_judge_protocol,
    sample_permutations,
)
from declsearch.mocks import MockJudgeRanker
from declsearch.retrieval import Hit, RankedList


def ranked(names):
    return RankedList(
        query="q",
        hits=tuple(Hit(n, 1.0 - 0.1 * i, i) for i, n in enumerate(names)),
        stage="reranked",
    )


# ------------------------------------------------------- single-target metrics
lst = ranked(["other", "target", "noise"])
print(f"nDCG@10 with the target at rank 2: {ndcg_at_k(lst, 'target', 10):.4f}")
assert abs(ndcg_at_k(lst, "target", 10) - 1 / math.log2(3)) < 1e-12
print(f"Recall@1 = {recall_at_k(lst, 'target', 1)}, Recall@2 = {recall_at_k(lst, 'target', 2)}")

# ------------------------------------------------------- premise-group metrics
item = MPRItem(
    id="demo",
    informal="",
    formal="f",
    groups=(
        PremiseGroup("g1", frozenset({"lemma_a", "lemma_a'"})),  # interchangeable
        PremiseGroup("g2", frozenset({"lemma_b"})),
        PremiseGroup("g3", frozenset({"lemma_c"})),
    ),
    routings=(
        Routing("r0", "original", ("g1", "g2")),
        Routing("r1", "alternative", ("g3",)),
    ),
)
hits = ranked(["lemma_a'", "noise", "lemma_c"])
print(f"\ngroup recall@3 (original scope): {group_recall_at_k(hits, item, 3):.2f}")
print(f"covered@3 main_only:    {covered_at_k(hits, item, 3, variant='main_only')}")
print(f"covered@3 main_or_alt:  {covered_at_k(hits, item, 3, variant='main_or_alt')}")

# --------------------------------------------------------------- judge protocol
systems = ["alpha", "beta", "gamma", "delta"]
perms = sample_permutations("query-001", global_seed=7, systems=systems)
print(f"\nthree distinct label assignments for one query: {perms}")

results = {
    s: {"query-001": [JudgeEntry(f"{s}_hit", "theorem", "", "sig", "", "stmt")]}
    for s in systems
}
prompt = build_judge_prompt("find the lemma", {s: results[s]["query-001"] for s in systems}, perms[0])
print("\nprompt head:\n" + "\n".join(prompt.splitlines()[:6]))

ranking = parse_judge_response('```json\n{"ranking": ["B", "A", "D", "C"]}\n```')
print(f"\nparsed ranking: {ranking}")

protocol = run_judge_protocol(
    {f"q{i}": f"query {i}" for i in range(40)},
    {s: {f"q{i}": results[s]["query-001"] for i in range(40)} for s in systems},
    MockJudgeRanker(seed=7),
    global_seed=7,
)
print(f"\nmean ranks over {protocol.report['judgment_count']} judgments:")
for system, rank in sorted(protocol.report["mean_rank"].items()):
    print(f"  {system}: {rank:.3f}")

# A deliberately primacy-biased judge makes the position table tilt: mean rank
# at label position A beats position D for every system.
from declsearch.evaluation import JudgeJudgment

biased = [
    JudgeJudgment(query_id=f"q{i}", round=r, permutation=perm, ranking=("A", "B", "C", "D"))
    for i in range(60)
    for r, perm in enumerate(sample_permutations(f"q{i}", 3, systems=systems))
]
table = judge_report(biased)["position_bias"]
print("\nposition-bias table under a biased judge (A column vs D column):")
for system in systems:
    print(f"  {system}: A={table[system]['A']:.2f}  D={table[system]['D']:.2f}")
