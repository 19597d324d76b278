"""Evaluation harness: ranking metrics, group/covered metrics, and the
anonymized LLM-as-judge ranking protocol with position-bias diagnostics.

All benchmark-level numbers are macro-averaged (unweighted per-query mean).
Every metric here is a pure function of the ranked list's top-k prefix.
"""
from __future__ import annotations

import hashlib
import itertools
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .jsonio import parse_json_document, read_jsonl
from .providers import CallLog, ProviderError, TextProvider
from .retrieval import Hit, RankedList

QUERY_STYLES = ("lean", "latex", "natural", "slogan", "nickname", "special_case")
DIFFICULTIES = ("easy", "hard")
JUDGE_LABELS = ("A", "B", "C", "D")

SIGNATURE_TRUNCATION = 800
VALUE_TRUNCATION = 400
STATEMENT_TRUNCATION = 600


class EvaluationError(Exception):
    pass


# ---------------------------------------------------------------------------
# Benchmark data model


@dataclass(frozen=True)
class QRQuery:
    style: str
    text: str


@dataclass(frozen=True)
class QRItem:
    """Single-target benchmark row: one ground-truth declaration, several query styles."""

    decl_name: str
    difficulty: str
    queries: tuple[QRQuery, ...]

    def __post_init__(self) -> None:
        if self.difficulty not in DIFFICULTIES:
            raise EvaluationError(f"unknown difficulty {self.difficulty!r}")
        if not self.queries:
            raise EvaluationError(f"{self.decl_name}: at least one query is required")
        styles = [q.style for q in self.queries]
        for style in styles:
            if style not in QUERY_STYLES:
                raise EvaluationError(f"{self.decl_name}: unknown query style {style!r}")
        if len(set(styles)) != len(styles):
            raise EvaluationError(f"{self.decl_name}: at most one query per style")

    def query_id(self, style: str) -> str:
        return f"{self.decl_name}::{style}"


@dataclass(frozen=True)
class PremiseGroup:
    group_id: str
    members: frozenset[str]

    def __post_init__(self) -> None:
        if not self.members:
            raise EvaluationError(f"group {self.group_id}: members must be non-empty")


@dataclass(frozen=True)
class Routing:
    routing_id: str
    kind: str  # "original" | "alternative"
    group_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.kind not in ("original", "alternative"):
            raise EvaluationError(f"routing {self.routing_id}: unknown kind {self.kind!r}")
        if not self.group_ids:
            raise EvaluationError(f"routing {self.routing_id}: group_ids must be non-empty")


@dataclass(frozen=True)
class MPRItem:
    """Set-valued benchmark row: premise groups organized into proof routings."""

    id: str
    informal: str
    formal: str
    groups: tuple[PremiseGroup, ...]
    routings: tuple[Routing, ...]

    def __post_init__(self) -> None:
        known = {g.group_id for g in self.groups}
        if len(known) != len(self.groups):
            raise EvaluationError(f"{self.id}: duplicate group ids")
        originals = [r for r in self.routings if r.kind == "original"]
        if len(originals) != 1:
            raise EvaluationError(f"{self.id}: exactly one original routing is required")
        for routing in self.routings:
            for gid in routing.group_ids:
                if gid not in known:
                    raise EvaluationError(
                        f"{self.id}: routing {routing.routing_id} references unknown group {gid!r}"
                    )
        n_original = len(originals[0].group_ids)
        if not 1 <= n_original <= 8:
            raise EvaluationError(
                f"{self.id}: original routing must carry 1..8 groups, got {n_original}"
            )

    @property
    def original_routing(self) -> Routing:
        return next(r for r in self.routings if r.kind == "original")

    def group(self, group_id: str) -> PremiseGroup:
        return next(g for g in self.groups if g.group_id == group_id)


def load_qr_benchmark(path: str | Path) -> list[QRItem]:
    items = []
    for line_no, doc in read_jsonl(path):
        try:
            items.append(
                QRItem(
                    decl_name=str(doc["decl_name"]),
                    difficulty=str(doc["difficulty"]),
                    queries=tuple(
                        QRQuery(style=str(q["style"]), text=str(q["text"]))
                        for q in doc["queries"]
                    ),
                )
            )
        except (KeyError, TypeError) as exc:
            raise EvaluationError(f"line {line_no}: malformed benchmark row: {exc}") from exc
    return items


def load_mpr_benchmark(path: str | Path) -> list[MPRItem]:
    items = []
    for line_no, doc in read_jsonl(path):
        try:
            items.append(
                MPRItem(
                    id=str(doc["id"]),
                    informal=str(doc["informal"]),
                    formal=str(doc["formal"]),
                    groups=tuple(
                        PremiseGroup(
                            group_id=str(g["group_id"]),
                            members=frozenset(str(m) for m in g["members"]),
                        )
                        for g in doc["groups"]
                    ),
                    routings=tuple(
                        Routing(
                            routing_id=str(r["routing_id"]),
                            kind=str(r["kind"]),
                            group_ids=tuple(str(g) for g in r["group_ids"]),
                        )
                        for r in doc["routings"]
                    ),
                )
            )
        except (KeyError, TypeError) as exc:
            raise EvaluationError(f"line {line_no}: malformed benchmark row: {exc}") from exc
    return items


def load_run_file(path: str | Path) -> dict[str, RankedList]:
    """System outputs to score: line-delimited {query_id, hits: [{decl_name, score}]}.

    The file's hit order is trusted as the system's ranking.
    """
    runs: dict[str, RankedList] = {}
    for line_no, doc in read_jsonl(path):
        try:
            query_id = str(doc["query_id"])
            hits = tuple(
                Hit(decl_name=str(h["decl_name"]), score=float(h.get("score", 0.0)), rank=i)
                for i, h in enumerate(doc["hits"])
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise EvaluationError(f"line {line_no}: malformed run row: {exc}") from exc
        if query_id in runs:
            raise EvaluationError(f"line {line_no}: duplicate query_id {query_id!r}")
        names = [hit.decl_name for hit in hits]
        if len(set(names)) != len(names):
            raise EvaluationError(f"line {line_no}: duplicate decl_name in hits")
        runs[query_id] = RankedList(query=query_id, hits=hits, stage="reranked")
    return runs


# ---------------------------------------------------------------------------
# Ranking metrics (binary single-document relevance)


def _rank_of(ranked: RankedList, decl_name: str) -> int | None:
    for hit in ranked.hits:
        if hit.decl_name == decl_name:
            return hit.rank
    return None


def ndcg_at_k(ranked: RankedList, gt: str, k: int) -> float:
    """1/log2(r+1) for the 1-indexed rank r of the single relevant document, else 0."""
    if k < 1:
        raise EvaluationError("k must be >= 1")
    rank = _rank_of(ranked, gt)
    if rank is None or rank >= k:
        return 0.0
    return 1.0 / math.log2(rank + 2)


def recall_at_k(ranked: RankedList, gt: str, k: int) -> float:
    if k < 1:
        raise EvaluationError("k must be >= 1")
    rank = _rank_of(ranked, gt)
    return 1.0 if rank is not None and rank < k else 0.0


def macro_average(values: Iterable[float]) -> float:
    values = list(values)
    if not values:
        raise EvaluationError("cannot average an empty value set")
    return sum(values) / len(values)


# ---------------------------------------------------------------------------
# Group metrics


def _group_hit(group: PremiseGroup, topk: set[str]) -> bool:
    return bool(group.members & topk)


def group_recall_at_k(
    ranked: RankedList, item: MPRItem, k: int, scope: str = "original_groups"
) -> float:
    """Fraction of in-scope premise groups with at least one member in the top-k."""
    if scope not in ("original_groups", "all_groups"):
        raise EvaluationError(f"unknown scope {scope!r}")
    if scope == "original_groups":
        groups = [item.group(gid) for gid in item.original_routing.group_ids]
    else:
        groups = list(item.groups)
    if not groups:
        raise EvaluationError(f"{item.id}: no in-scope groups (malformed benchmark row)")
    topk = set(ranked.names()[:k])
    hit = sum(1 for group in groups if _group_hit(group, topk))
    return hit / len(groups)


def covered_at_k(
    ranked: RankedList, item: MPRItem, k: int, variant: str = "main_or_alt"
) -> int:
    """1 iff a complete routing has every one of its groups hit within the top-k.

    `main_only` restricts to the original routing; `main_or_alt` credits any routing.
    """
    if variant not in ("main_only", "main_or_alt"):
        raise EvaluationError(f"unknown covered variant {variant!r}")
    topk = set(ranked.names()[:k])
    routings = (
        [item.original_routing] if variant == "main_only" else list(item.routings)
    )
    for routing in routings:
        if all(_group_hit(item.group(gid), topk) for gid in routing.group_ids):
            return 1
    return 0


def fair_subset(
    items: Sequence[QRItem], snapshots: Sequence[set[str]], mode: str = "fair"
) -> list[QRItem]:
    """Restrict benchmark rows by ground-truth presence across corpus snapshots."""
    if mode not in ("fair", "at_least_one", "full"):
        raise EvaluationError(f"unknown subset mode {mode!r}")
    if mode == "full":
        return list(items)
    out = []
    for item in items:
        present = sum(1 for snapshot in snapshots if item.decl_name in snapshot)
        if mode == "fair" and present == len(snapshots):
            out.append(item)
        elif mode == "at_least_one" and present >= 1:
            out.append(item)
    return out


# ---------------------------------------------------------------------------
# LLM-as-judge protocol


@dataclass(frozen=True)
class JudgeEntry:
    """One retrieved result hydrated for the judge's six-field block."""

    name: str
    kind: str
    informal_name: str
    signature: str
    value: str
    informal_statement: str


@dataclass(frozen=True)
class JudgeJudgment:
    query_id: str
    round: int
    permutation: Mapping[str, str]  # system -> label
    ranking: tuple[str, ...]        # labels, best first

    def __post_init__(self) -> None:
        labels = sorted(self.permutation.values())
        if sorted(self.ranking) != labels:
            raise EvaluationError("ranking must be a strict total order over the assigned labels")

    def rank_of(self, system: str) -> int:
        """1-indexed rank the judge gave this system."""
        return self.ranking.index(self.permutation[system]) + 1


def _query_seed(query_id: str, global_seed: int) -> int:
    digest = hashlib.sha256(f"{global_seed}\x1f{query_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def sample_permutations(
    query_id: str, global_seed: int, rounds: int = 3, systems: Sequence[str] = ()
) -> list[dict[str, str]]:
    """Deterministically draw `rounds` distinct system->label bijections.

    Sampling is without replacement from all |systems|! permutations, keyed by a
    per-query seed, so the same (query_id, global_seed) always yields the same
    assignments and each system lands on each label position near-uniformly over
    many queries.
    """
    systems = list(systems)
    if not systems:
        raise EvaluationError("at least one system is required")
    labels = JUDGE_LABELS[: len(systems)]
    if len(systems) > len(JUDGE_LABELS):
        raise EvaluationError(f"at most {len(JUDGE_LABELS)} systems are supported")
    all_perms = list(itertools.permutations(labels))
    if rounds > len(all_perms):
        raise EvaluationError(
            f"cannot draw {rounds} distinct permutations of {len(systems)} systems"
        )
    rng = random.Random(_query_seed(query_id, global_seed))
    chosen = rng.sample(all_perms, rounds)
    return [dict(zip(systems, perm)) for perm in chosen]


def _truncate(text: str, limit: int) -> str:
    return text[:limit]


def format_result_block(entry: JudgeEntry, index: int) -> str:
    """Six-field block with the protocol's truncation constants applied."""
    return "\n".join(
        [
            f"  [{index}] name: {entry.name}",
            f"      kind: {entry.kind}",
            f"      informal name: {entry.informal_name}",
            f"      signature: {_truncate(entry.signature, SIGNATURE_TRUNCATION)}",
            f"      value: {_truncate(entry.value, VALUE_TRUNCATION)}",
            f"      statement: {_truncate(entry.informal_statement, STATEMENT_TRUNCATION)}",
        ]
    )


JUDGE_PROMPT_HEADER = """You are ranking anonymous retrieval systems on one query.
Below are each system's top results for the query. Judge which system best answers the query.

Query: {query}
"""

JUDGE_PROMPT_FOOTER = """
Produce a strict total order over the systems (ties are forbidden).
Answer with a JSON object whose "ranking" field is a permutation of {labels}, best system first."""

NO_RESULTS_MARKER = "  [no results]"


def build_judge_prompt(
    query: str,
    system_results: Mapping[str, Sequence[JudgeEntry]],
    permutation: Mapping[str, str],
    top_n: int = 5,
) -> str:
    """Render the anonymized comparison prompt; systems appear only as labels."""
    if set(system_results) != set(permutation):
        raise EvaluationError("permutation must cover exactly the systems under comparison")
    by_label = {label: system for system, label in permutation.items()}
    if len(by_label) != len(permutation):
        raise EvaluationError("permutation must be a bijection")
    sections = [JUDGE_PROMPT_HEADER.format(query=query)]
    for label in sorted(by_label):
        entries = list(system_results[by_label[label]])[:top_n]
        lines = [f"System {label}:"]
        if entries:
            lines.extend(format_result_block(entry, i + 1) for i, entry in enumerate(entries))
        else:
            lines.append(NO_RESULTS_MARKER)
        sections.append("\n".join(lines))
    sections.append(JUDGE_PROMPT_FOOTER.format(labels=", ".join(sorted(by_label))))
    return "\n\n".join(sections)


def parse_judge_response(text: str, labels: Sequence[str] = JUDGE_LABELS) -> tuple[str, ...]:
    """Extract the ranking after stripping code fences; reject any non-permutation."""
    try:
        doc = parse_json_document(text)
    except Exception as exc:
        raise EvaluationError(f"unparseable judge response: {exc}") from exc
    ranking = doc.get("ranking") if isinstance(doc, dict) else None
    if not isinstance(ranking, list):
        raise EvaluationError("judge response has no ranking field")
    ranking = [str(label) for label in ranking]
    if sorted(ranking) != sorted(labels):
        raise EvaluationError(f"ranking {ranking!r} is not a permutation of {list(labels)!r}")
    return tuple(ranking)


def _spearman(rank_a: Sequence[int], rank_b: Sequence[int]) -> float:
    n = len(rank_a)
    if n < 2:
        raise EvaluationError("rank correlation requires at least two systems")
    d2 = sum((a - b) ** 2 for a, b in zip(rank_a, rank_b))
    return 1.0 - (6.0 * d2) / (n * (n * n - 1))


def judge_report(judgments: Sequence[JudgeJudgment]) -> dict[str, Any]:
    """Mean ranks, position-conditioned means, per-round means, cross-round agreement.

    The position table conditions each system's mean rank on the label position it
    was randomly assigned, which makes primacy bias visible.  Cross-round
    agreement is the mean pairwise Spearman correlation between per-query rank
    vectors; the statistic choice is recorded in the metadata.
    """
    if not judgments:
        raise EvaluationError("no judgments to report on")
    systems = sorted({system for j in judgments for system in j.permutation})
    labels = sorted({label for j in judgments for label in j.permutation.values()})

    ranks: dict[str, list[int]] = {s: [] for s in systems}
    by_position: dict[str, dict[str, list[int]]] = {s: {l: [] for l in labels} for s in systems}
    by_round: dict[int, dict[str, list[int]]] = {}
    by_query_round: dict[str, dict[int, dict[str, int]]] = {}

    for judgment in judgments:
        for system in judgment.permutation:
            rank = judgment.rank_of(system)
            ranks[system].append(rank)
            by_position[system][judgment.permutation[system]].append(rank)
            by_round.setdefault(judgment.round, {s: [] for s in systems})[system].append(rank)
            by_query_round.setdefault(judgment.query_id, {}).setdefault(judgment.round, {})[
                system
            ] = rank

    correlations: list[float] = []
    for rounds_for_query in by_query_round.values():
        round_ids = sorted(rounds_for_query)
        for i, j in itertools.combinations(round_ids, 2):
            vec_i = [rounds_for_query[i][s] for s in systems if s in rounds_for_query[i]]
            vec_j = [rounds_for_query[j][s] for s in systems if s in rounds_for_query[j]]
            if len(vec_i) == len(systems) and len(vec_j) == len(systems):
                correlations.append(_spearman(vec_i, vec_j))

    def mean(values: Sequence[int | float]) -> float | None:
        return sum(values) / len(values) if values else None

    return {
        "judgment_count": len(judgments),
        "mean_rank": {s: mean(ranks[s]) for s in systems},
        "position_bias": {
            s: {l: mean(by_position[s][l]) for l in labels} for s in systems
        },
        "position_counts": {
            s: {l: len(by_position[s][l]) for l in labels} for s in systems
        },
        "per_round_mean_rank": {
            str(r): {s: mean(values[s]) for s in systems} for r, values in sorted(by_round.items())
        },
        "cross_round_rank_correlation": mean(correlations),
        "metadata": {
            "rank_correlation": "mean pairwise Spearman over per-query rank vectors",
            "rank_range": [1, len(systems)],
        },
    }


@dataclass(frozen=True)
class JudgeProtocolResult:
    judgments: tuple[JudgeJudgment, ...]
    missing: tuple[tuple[str, int], ...]  # (query_id, round) excluded after retries
    report: dict[str, Any]


def run_judge_protocol(
    queries: Mapping[str, str],
    system_results: Mapping[str, Mapping[str, Sequence[JudgeEntry]]],
    provider: TextProvider,
    global_seed: int,
    rounds: int = 3,
    parse_retries: int = 2,
    log: CallLog | None = None,
) -> JudgeProtocolResult:
    """Run the full anonymized-comparison protocol over a query set.

    A judgment whose response stays malformed after `parse_retries` re-requests
    is recorded as missing and excluded from the means.
    """
    systems = sorted(system_results)
    if not 2 <= len(systems) <= len(JUDGE_LABELS):
        raise EvaluationError("the protocol compares 2 to 4 systems")
    labels = JUDGE_LABELS[: len(systems)]
    judgments: list[JudgeJudgment] = []
    missing: list[tuple[str, int]] = []
    for query_id in sorted(queries):
        permutations = sample_permutations(query_id, global_seed, rounds=rounds, systems=systems)
        for round_no, permutation in enumerate(permutations):
            prompt = build_judge_prompt(
                queries[query_id],
                {s: system_results[s].get(query_id, ()) for s in systems},
                permutation,
            )
            ranking: tuple[str, ...] | None = None
            for _ in range(parse_retries + 1):
                if log is not None:
                    log.record("judge_protocol", "judge", f"{query_id}#{round_no}")
                try:
                    ranking = parse_judge_response(provider.generate(prompt), labels=labels)
                    break
                except (EvaluationError, ProviderError):
                    continue
            if ranking is None:
                missing.append((query_id, round_no))
                continue
            judgments.append(
                JudgeJudgment(
                    query_id=query_id,
                    round=round_no,
                    permutation=permutation,
                    ranking=ranking,
                )
            )
    if judgments:
        report = judge_report(judgments)
    else:
        report = {"judgment_count": 0, "mean_rank": {s: None for s in systems}}
    report["missing_judgments"] = len(missing)
    return JudgeProtocolResult(
        judgments=tuple(judgments), missing=tuple(missing), report=report
    )


# ---------------------------------------------------------------------------
# Benchmark-level reports


def evaluate_qr(
    runs: Mapping[str, RankedList],
    items: Sequence[QRItem],
    ks: Sequence[int] = (1, 5, 10, 20, 30, 50, 100),
) -> dict[str, Any]:
    """nDCG@k / Recall@k over query rows, with difficulty and style slices."""
    rows: list[tuple[QRItem, QRQuery, RankedList]] = []
    for item in items:
        for query in item.queries:
            ranked = runs.get(item.query_id(query.style))
            if ranked is not None:
                rows.append((item, query, ranked))
    if not rows:
        raise EvaluationError("no run rows match the benchmark")

    def table(selected: Sequence[tuple[QRItem, QRQuery, RankedList]]) -> dict[str, Any]:
        return {
            "n": len(selected),
            "ndcg": {
                str(k): macro_average(
                    ndcg_at_k(ranked, item.decl_name, k) for item, _, ranked in selected
                )
                for k in ks
            },
            "recall": {
                str(k): macro_average(
                    recall_at_k(ranked, item.decl_name, k) for item, _, ranked in selected
                )
                for k in ks
            },
        }

    report: dict[str, Any] = {"overall": table(rows)}
    for difficulty in DIFFICULTIES:
        selected = [row for row in rows if row[0].difficulty == difficulty]
        if selected:
            report.setdefault("by_difficulty", {})[difficulty] = table(selected)
    for style in QUERY_STYLES:
        selected = [row for row in rows if row[1].style == style]
        if selected:
            report.setdefault("by_style", {})[style] = table(selected)
    report["metadata"] = {"averaging": "macro", "k": list(ks)}
    return report


def evaluate_mpr(
    runs: Mapping[str, RankedList],
    items: Sequence[MPRItem],
    ks: Sequence[int] = (5, 10, 20, 30, 50),
    scope: str = "original_groups",
) -> dict[str, Any]:
    """Group recall and both Covered variants over a set-valued benchmark."""
    rows = [(item, runs[item.id]) for item in items if item.id in runs]
    if not rows:
        raise EvaluationError("no run rows match the benchmark")
    report: dict[str, Any] = {
        "n": len(rows),
        "group_recall": {
            str(k): macro_average(
                group_recall_at_k(ranked, item, k, scope=scope) for item, ranked in rows
            )
            for k in ks
        },
        "covered_main_only": {
            str(k): macro_average(
                covered_at_k(ranked, item, k, variant="main_only") for item, ranked in rows
            )
            for k in ks
        },
        "covered_main_or_alt": {
            str(k): macro_average(
                covered_at_k(ranked, item, k, variant="main_or_alt") for item, ranked in rows
            )
            for k in ks
        },
        "metadata": {
            "averaging": "macro",
            "group_recall_scope": scope,
            "group_recall_scope_note": (
                "whether group recall counts only the original routing's groups is "
                "ambiguous in the task definition; both scopes are supported"
            ),
            "k": list(ks),
        },
    }
    return report
