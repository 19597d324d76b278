#!/usr/bin/env python3
"""The simple reflection loop: prove, verify, retrieve hints, retry.

Demonstrates the solved criterion (comment stripping + live-sorry check) and
three retrieval wirings, including the frozen round-1 reasoning sketch.
"""
from declsearch.evaluation import JudgeEntry
from declsearch.mocks import MockProver, MockQueryRewriter, MockVerifier
from declsearch.prover import (
    LoopConfig,
    ProveProblem,
    ProveProviders,
    is_solved,
    run_reflection_loop,
    strip_comments,
)
from declsearch.providers import CallLog, ScriptedTextProvider

# ------------------------------------------------------------- solved criterion
print("comment stripping:")
print(repr(strip_comments("exact h -- sorry")))
print(repr(strip_comments("/- outer /- inner -/ still comment -/ exact h")))

print("\nsolved checks:")
for source in [
    "theorem t : P := by sorry",            # live sorry
    "theorem t : P := by exact h -- sorry", # comment-only sorry
    "theorem t : P := by exact sorryAx P",  # word boundary
]:
    print(f"  solved={is_solved(True, source)!s:5}  {source}")

# --------------------------------------------------------------- loop wirings
problem = ProveProblem(
    id="demo", informal="a compactness statement", formal_statement="theorem demo : P"
)


def hint(name: str) -> JudgeEntry:
    return JudgeEntry(name, "theorem", name, f"sig {name}", "", f"statement of {name}")


# (1) no retrieval: the prover sees only the statement; a stuck prover burns the
# full budget of reflection_rounds + 1 attempts.
log = CallLog()
outcome = run_reflection_loop(
    problem,
    LoopConfig(retrieval_mode="none", verifier_wait_seconds=0.0),
    ProveProviders(prover=MockProver(always_sorry=True), verifier=MockVerifier(), log=log),
)
print(f"\nno-retrieval stuck prover: solved={outcome.solved}, attempts={len(outcome.attempts)}")

# (2) standard_reflect: hints appear only after the first failure, via a
# rewritten natural-language query.
outcome = run_reflection_loop(
    problem,
    LoopConfig(retrieval_mode="standard_reflect", verifier_wait_seconds=0.0),
    ProveProviders(
        prover=ScriptedTextProvider(
            sequence=["theorem demo : P := by sorry", "theorem demo : P := by exact h"]
        ),
        verifier=MockVerifier(),
        query_rewriter=MockQueryRewriter(),
        retrievers={"standard": lambda q: [hint("Lib.useful_lemma")]},
    ),
)
print(
    f"standard_reflect: solved={outcome.solved} after {outcome.rounds_used} reflection(s); "
    f"round-2 hints: {outcome.attempts[1].hints_used}"
)

# (3) reasoning_sketch: the reasoning pipeline runs once at round 1; its sketch
# and premises stay frozen while reflections fall back to the standard path.
calls = []


def reasoning_runner(informal: str, formal: str):
    calls.append(formal)
    return "1. reduce to the library lemma\n2. apply it", [hint("Lib.key_premise")]


outcome = run_reflection_loop(
    problem,
    LoopConfig(retrieval_mode="reasoning_sketch", reflection_rounds=3, verifier_wait_seconds=0.0),
    ProveProviders(
        prover=MockProver(always_sorry=True),
        verifier=MockVerifier(),
        query_rewriter=MockQueryRewriter(),
        retrievers={"standard": lambda q: [hint("Lib.reflect_hit")]},
        run_reasoning=reasoning_runner,
    ),
)
print(
    f"reasoning_sketch: reasoning invoked {len(calls)} time(s) across "
    f"{len(outcome.attempts)} attempts; round-1 hints {outcome.attempts[0].hints_used}"
)
