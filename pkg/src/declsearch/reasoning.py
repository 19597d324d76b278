"""Global premise retrieval: the sketch-retrieve-filter-judge-revise loop.

A run launches `budget` branches concurrently.  Each branch drafts a proof
sketch, retrieves candidates for every step through the standard-mode search
callable, filters them (the empty set is a legitimate, informative outcome),
and asks a binary feasibility judge whether the sketch as a whole is
supportable.  Rejections carry structured feedback and trigger a revision, up
to `max_revisions` past the initial sketch.  The first branch to win acceptance
cancels its siblings; if every branch exhausts the cap, all branches' filtered
lists are pooled.  Per-step lists are merged into one ranking by a positional
rank discount, never by raw scores.
"""
from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .corpus import DeclarationRecord
from .jsonio import parse_json_document
from .providers import CallLog, ProviderError, TextProvider
from .retrieval import Hit, RankedList, STAGE_FILTERED

STATUS_GOOD = "good"
STATUS_EARLY_STOP = "early_stop"
STATUS_FAIL = "fail"

TRACE_EVENTS = ("sketch", "retrieve", "filter", "judge", "revise", "cancel", "done")


class ReasoningError(Exception):
    pass


class SketchParseError(ReasoningError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class Target:
    informal: str
    formal: str


@dataclass(frozen=True)
class SketchStep:
    description: str
    query: str
    context: str | None = None


@dataclass(frozen=True)
class Sketch:
    steps: tuple[SketchStep, ...]
    revision: int = 0

    def __post_init__(self) -> None:
        if not self.steps:
            raise ReasoningError("a sketch must contain at least one step")
        for idx, step in enumerate(self.steps):
            if not step.query.strip():
                raise ReasoningError(f"step {idx}: empty retrieval query")


@dataclass(frozen=True)
class FeedbackItem:
    step_index: int
    reason: str


@dataclass(frozen=True)
class JudgeVerdict:
    accepted: bool
    feedback: tuple[FeedbackItem, ...] = ()

    def __post_init__(self) -> None:
        if self.accepted and self.feedback:
            raise ReasoningError("an accepting verdict carries no feedback")
        if not self.accepted and not self.feedback:
            raise ReasoningError("a rejecting verdict requires feedback")


@dataclass(frozen=True)
class BranchResult:
    branch_id: int
    status: str
    final_sketch: Sketch | None
    filtered: tuple[RankedList, ...]
    judge_trace: tuple[JudgeVerdict, ...]
    error: str | None = None


@dataclass(frozen=True)
class AggregateEntry:
    decl_name: str
    score: float


@dataclass(frozen=True)
class AggregatedRanking:
    entries: tuple[AggregateEntry, ...]
    sources: Mapping[str, tuple[tuple[int, int], ...]]

    def names(self) -> list[str]:
        return [entry.decl_name for entry in self.entries]

    def to_ranked_list(self, query: str = "") -> RankedList:
        hits = tuple(
            Hit(decl_name=e.decl_name, score=e.score, rank=i)
            for i, e in enumerate(self.entries)
        )
        return RankedList(query=query, hits=hits, stage="aggregated")


def aggregate(lists: Sequence[RankedList]) -> AggregatedRanking:
    """Pool per-step filtered lists by rank position only.

    A document at 0-indexed rank i of a list contributes 1/log2(i+2); the same
    document's contributions are summed across every list it appears in.  The
    output has variable length (no padding) and is sorted by aggregate score
    descending, name ascending.
    """
    sources: dict[str, list[tuple[int, int]]] = {}
    for j, ranked in enumerate(lists):
        for hit in ranked.hits:
            sources.setdefault(hit.decl_name, []).append((j, hit.rank))
    scores = {
        name: sum(1.0 / math.log2(rank + 2) for _, rank in positions)
        for name, positions in sources.items()
    }
    ordered = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return AggregatedRanking(
        entries=tuple(AggregateEntry(decl_name=n, score=s) for n, s in ordered),
        sources={name: tuple(positions) for name, positions in sources.items()},
    )


# ---------------------------------------------------------------------------
# Prompts (implementation constants) and provider-output parsing

SKETCH_PROMPT = """You are planning a formal proof. Write a step-by-step proof outline for the target below.
Do not write proof-assistant code and do not name specific library lemmas; describe which kinds of
results should exist and how each contributes.

Target (informal): {informal}
Target (formal): {formal}
{extra}
Answer with a JSON object: {{"steps": [{{"description": "...", "context": "...", "query": "..."}}]}}.
Each step needs a natural-language retrieval query phrased like a library search."""

FILTER_PROMPT = """Step query: {query}
Step description: {description}

Candidate declaration:
kind: {kind}
name: {name}
signature: {signature}
value: {value}
statement: {informal}

Is this candidate genuinely useful for the planned step? Answer with JSON: {{"relevant": true_or_false}}."""

JUDGE_PROMPT = """Decide whether the proof outline below is supportable by the library, given the
filtered retrieval results for each step. Steps marked [no usable results] found nothing useful.

Target (informal): {informal}
Target (formal): {formal}

{step_blocks}

Answer with JSON: {{"accepted": true_or_false, "feedback": [{{"step_index": 0, "reason": "..."}}]}}.
Feedback is required when rejecting and must identify which steps failed and why."""

REVISE_PROMPT_EXTRA = """The previous outline (revision {revision}) was rejected.
Previous outline: {prior}
Judge feedback: {feedback}
Produce a revised outline that addresses the feedback."""


def _parse_sketch_text(text: str, revision: int) -> Sketch:
    try:
        doc = parse_json_document(text)
    except (json.JSONDecodeError, ValueError) as exc:
        raise SketchParseError(f"unparseable sketch output: {exc}", raw=text) from exc
    steps_raw = doc.get("steps") if isinstance(doc, dict) else None
    if not isinstance(steps_raw, list) or not steps_raw:
        raise SketchParseError("sketch output contains no steps", raw=text)
    steps: list[SketchStep] = []
    for idx, raw in enumerate(steps_raw):
        if not isinstance(raw, dict):
            raise SketchParseError(f"step {idx}: not an object", raw=text)
        query = str(raw.get("query") or "").strip()
        if not query:
            raise SketchParseError(f"step {idx}: missing retrieval query", raw=text)
        context = raw.get("context")
        steps.append(
            SketchStep(
                description=str(raw.get("description") or "").strip(),
                query=query,
                context=None if context in (None, "") else str(context),
            )
        )
    return Sketch(steps=tuple(steps), revision=revision)


def _generate_parsed_sketch(
    prompt: str, provider: TextProvider, revision: int, parse_retries: int
) -> Sketch:
    last_error: SketchParseError | None = None
    for _ in range(parse_retries + 1):
        text = provider.generate(prompt)
        try:
            return _parse_sketch_text(text, revision)
        except SketchParseError as exc:
            last_error = exc
    assert last_error is not None
    raise last_error


def generate_sketch(
    target: Target,
    provider: TextProvider,
    parse_retries: int = 2,
) -> Sketch:
    """Ask the sketch generator for an initial outline (revision 0)."""
    if not target.formal.strip():
        raise ReasoningError("target formal statement must be non-empty")
    prompt = SKETCH_PROMPT.format(informal=target.informal, formal=target.formal, extra="")
    return _generate_parsed_sketch(prompt, provider, revision=0, parse_retries=parse_retries)


def revise_sketch(
    target: Target,
    prior: Sketch,
    verdict: JudgeVerdict,
    provider: TextProvider,
    max_revisions: int = 3,
    parse_retries: int = 2,
) -> Sketch:
    """Produce the next revision from the rejected sketch and the judge's feedback."""
    if verdict.accepted:
        raise ReasoningError("revise_sketch requires a rejecting verdict")
    if prior.revision >= max_revisions:
        raise ReasoningError(f"revision cap reached ({max_revisions})")
    prior_doc = {
        "steps": [
            {"description": s.description, "context": s.context, "query": s.query}
            for s in prior.steps
        ]
    }
    feedback_doc = [{"step_index": f.step_index, "reason": f.reason} for f in verdict.feedback]
    extra = REVISE_PROMPT_EXTRA.format(
        revision=prior.revision,
        prior=json.dumps(prior_doc, ensure_ascii=False),
        feedback=json.dumps(feedback_doc, ensure_ascii=False),
    )
    prompt = SKETCH_PROMPT.format(informal=target.informal, formal=target.formal, extra=extra)
    return _generate_parsed_sketch(
        prompt, provider, revision=prior.revision + 1, parse_retries=parse_retries
    )


def _parse_filter_response(text: str) -> bool:
    try:
        doc = parse_json_document(text)
        if isinstance(doc, dict) and isinstance(doc.get("relevant"), bool):
            return doc["relevant"]
    except (json.JSONDecodeError, ValueError):
        pass
    lowered = text.strip().lower()
    if lowered.startswith("yes"):
        return True
    if lowered.startswith("no"):
        return False
    raise ProviderError(f"unparseable filter response: {text[:120]!r}")


def filter_candidates(
    step: SketchStep,
    hits: RankedList,
    provider: TextProvider,
    records: Mapping[str, DeclarationRecord],
    parse_retries: int = 2,
    log: CallLog | None = None,
    cancel: threading.Event | None = None,
) -> RankedList:
    """Keep only candidates the filter judges useful for this step.

    Each candidate is judged independently with its kind, signature, value and
    informal statement in the prompt.  Order is preserved; an empty result is a
    valid signal, not an error.  A candidate whose judgment fails after retries
    is dropped (absence is informative) and logged.
    """
    kept: list[Hit] = []
    for hit in hits.hits:
        if cancel is not None and cancel.is_set():
            raise BranchCancelled()
        record = records.get(hit.decl_name)
        prompt = FILTER_PROMPT.format(
            query=step.query,
            description=step.description,
            kind=record.kind.label if record else "unknown",
            name=hit.decl_name,
            signature=record.signature if record else "",
            value=(record.value or "") if record else "",
            informal=(record.informal or "") if record else "",
        )
        relevant: bool | None = None
        failure: str | None = None
        for _ in range(parse_retries + 1):
            try:
                relevant = _parse_filter_response(provider.generate(prompt))
                break
            except ProviderError as exc:
                failure = str(exc)
        if relevant is None:
            if log is not None:
                log.record("filter", "dropped", f"{hit.decl_name}: {failure}")
            continue
        if relevant:
            kept.append(hit)
    hits_out = tuple(
        Hit(decl_name=h.decl_name, score=h.score, rank=rank, degraded=h.degraded)
        for rank, h in enumerate(kept)
    )
    return RankedList(query=step.query, hits=hits_out, stage=STAGE_FILTERED)


EMPTY_STEP_MARKER = "[no usable results]"


def _judge_step_blocks(sketch: Sketch, filtered: Sequence[RankedList]) -> str:
    blocks: list[str] = []
    for idx, (step, ranked) in enumerate(zip(sketch.steps, filtered)):
        lines = [f"Step {idx}: {step.description}", f"  query: {step.query}"]
        if ranked.hits:
            for hit in ranked.hits:
                lines.append(f"  [{hit.rank}] {hit.decl_name}")
        else:
            lines.append(f"  {EMPTY_STEP_MARKER}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def judge_sketch(
    target: Target,
    sketch: Sketch,
    filtered: Sequence[RankedList],
    provider: TextProvider,
    parse_retries: int = 2,
) -> JudgeVerdict:
    """Binary feasibility decision over the sketch and its per-step filtered lists.

    Unparseable output after retries counts as a rejection (fail-safe toward
    another revision); a rejection without feedback is repaired with generic
    feedback for every step whose filtered list is empty.
    """
    if len(filtered) != len(sketch.steps):
        raise ReasoningError("one filtered list per step is required")
    prompt = JUDGE_PROMPT.format(
        informal=target.informal,
        formal=target.formal,
        step_blocks=_judge_step_blocks(sketch, filtered),
    )
    doc: Any = None
    for _ in range(parse_retries + 1):
        try:
            text = provider.generate(prompt)
        except ProviderError:
            continue
        try:
            candidate = parse_json_document(text)
        except (json.JSONDecodeError, ValueError):
            continue
        if isinstance(candidate, dict) and isinstance(candidate.get("accepted"), bool):
            doc = candidate
            break
    if doc is None:
        return JudgeVerdict(
            accepted=False,
            feedback=(FeedbackItem(step_index=0, reason="judge unparseable"),),
        )
    if doc["accepted"]:
        return JudgeVerdict(accepted=True)
    feedback: list[FeedbackItem] = []
    for raw in doc.get("feedback") or []:
        if isinstance(raw, dict) and "step_index" in raw:
            try:
                idx = int(raw["step_index"])
            except (TypeError, ValueError):
                continue
            feedback.append(FeedbackItem(step_index=idx, reason=str(raw.get("reason") or "")))
    if not feedback:
        empties = [i for i, ranked in enumerate(filtered) if not ranked.hits]
        targets = empties if empties else [0]
        feedback = [
            FeedbackItem(step_index=i, reason="no usable retrieval support for this step")
            for i in targets
        ]
    return JudgeVerdict(accepted=False, feedback=tuple(feedback))


# ---------------------------------------------------------------------------
# Branch orchestration


class BranchCancelled(Exception):
    """Raised inside a branch when the cancellation signal fires between calls."""


@dataclass
class ReasoningProviders:
    sketcher: TextProvider
    filterer: TextProvider
    judge: TextProvider
    reviser: TextProvider


@dataclass(frozen=True)
class ReasoningConfig:
    budget: int = 2
    max_revisions: int = 3
    reflection_enabled: bool = True
    per_step_k: int = 10
    parse_retries: int = 2


SearchFn = Callable[[str, int], RankedList]
ProviderFactory = Callable[[int], ReasoningProviders]


@dataclass
class ReasoningEnv:
    """Everything a reasoning run needs from the outside world.

    `search` is standard mode as a black box: (query, k) -> reranked RankedList.
    `providers` may be a single bundle shared by all branches, or a factory
    keyed by branch id (used by tests to script divergent branch behaviour).
    """

    search: SearchFn
    records: Mapping[str, DeclarationRecord]
    providers: ReasoningProviders | ProviderFactory
    log: CallLog | None = None

    def providers_for(self, branch_id: int) -> ReasoningProviders:
        if isinstance(self.providers, ReasoningProviders):
            return self.providers
        return self.providers(branch_id)


class TraceLog:
    """Per-branch append-only event buffers, merged branch-major after the join.

    The merged sequence is deterministic for scripted providers: branch id
    ascending, then emission order within the branch.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._buffers: dict[int, list[dict]] = {}

    def emit(self, branch_id: int, event: str, payload: dict | None = None) -> None:
        if event not in TRACE_EVENTS:
            raise ReasoningError(f"unknown trace event {event!r}")
        record = {"branch": branch_id, "event": event, "payload": payload or {}}
        with self._lock:
            self._buffers.setdefault(branch_id, []).append(record)

    def merged(self) -> list[dict]:
        with self._lock:
            return [
                record
                for branch_id in sorted(self._buffers)
                for record in list(self._buffers[branch_id])
            ]

    def lines(self) -> list[str]:
        return [json.dumps(record, ensure_ascii=False, sort_keys=True) for record in self.merged()]

    def write(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n", encoding="utf-8")


def _noop_trace() -> TraceLog:
    return TraceLog()


def run_branch(
    target: Target,
    env: ReasoningEnv,
    config: ReasoningConfig = ReasoningConfig(),
    branch_id: int = 0,
    cancel: threading.Event | None = None,
    trace: TraceLog | None = None,
    on_accept: Callable[[int], None] | None = None,
) -> BranchResult:
    """Run one branch of the loop to a terminal status.

    Cancellation is checked between provider calls only; a branch that has
    already reached a verdict is never retroactively cancelled.
    """
    trace = trace or _noop_trace()
    providers = env.providers_for(branch_id)
    sketch: Sketch | None = None
    filtered: tuple[RankedList, ...] = ()
    judge_trace: list[JudgeVerdict] = []

    def check_cancel() -> None:
        if cancel is not None and cancel.is_set():
            raise BranchCancelled()

    try:
        try:
            check_cancel()
            sketch = generate_sketch(target, providers.sketcher, parse_retries=config.parse_retries)
            trace.emit(
                branch_id,
                "sketch",
                {
                    "revision": sketch.revision,
                    "steps": [{"description": s.description, "query": s.query} for s in sketch.steps],
                },
            )
            while True:
                step_lists: list[RankedList] = []
                for idx, step in enumerate(sketch.steps):
                    check_cancel()
                    hits = env.search(step.query, config.per_step_k)
                    trace.emit(
                        branch_id,
                        "retrieve",
                        {"step": idx, "query": step.query, "names": hits.names()},
                    )
                    check_cancel()
                    kept = filter_candidates(
                        step,
                        hits,
                        providers.filterer,
                        env.records,
                        parse_retries=config.parse_retries,
                        log=env.log,
                        cancel=cancel,
                    )
                    trace.emit(
                        branch_id,
                        "filter",
                        {"step": idx, "kept": kept.names(), "empty": not kept.hits},
                    )
                    step_lists.append(kept)
                filtered = tuple(step_lists)
                if not config.reflection_enabled:
                    trace.emit(branch_id, "done", {"status": STATUS_GOOD})
                    return BranchResult(
                        branch_id=branch_id,
                        status=STATUS_GOOD,
                        final_sketch=sketch,
                        filtered=filtered,
                        judge_trace=(),
                    )
                check_cancel()
                verdict = judge_sketch(
                    target, sketch, filtered, providers.judge, parse_retries=config.parse_retries
                )
                judge_trace.append(verdict)
                trace.emit(
                    branch_id,
                    "judge",
                    {
                        "accepted": verdict.accepted,
                        "feedback": [
                            {"step_index": f.step_index, "reason": f.reason}
                            for f in verdict.feedback
                        ],
                    },
                )
                if verdict.accepted:
                    if on_accept is not None:
                        on_accept(branch_id)
                    trace.emit(branch_id, "done", {"status": STATUS_GOOD})
                    return BranchResult(
                        branch_id=branch_id,
                        status=STATUS_GOOD,
                        final_sketch=sketch,
                        filtered=filtered,
                        judge_trace=tuple(judge_trace),
                    )
                if sketch.revision >= config.max_revisions:
                    trace.emit(branch_id, "done", {"status": STATUS_FAIL})
                    return BranchResult(
                        branch_id=branch_id,
                        status=STATUS_FAIL,
                        final_sketch=sketch,
                        filtered=filtered,
                        judge_trace=tuple(judge_trace),
                    )
                check_cancel()
                sketch = revise_sketch(
                    target,
                    sketch,
                    verdict,
                    providers.reviser,
                    max_revisions=config.max_revisions,
                    parse_retries=config.parse_retries,
                )
                trace.emit(branch_id, "revise", {"revision": sketch.revision})
        except BranchCancelled:
            trace.emit(branch_id, "cancel", {})
            trace.emit(branch_id, "done", {"status": STATUS_EARLY_STOP})
            return BranchResult(
                branch_id=branch_id,
                status=STATUS_EARLY_STOP,
                final_sketch=sketch,
                filtered=filtered,
                judge_trace=tuple(judge_trace),
            )
    except (ProviderError, SketchParseError) as exc:
        trace.emit(branch_id, "done", {"status": STATUS_FAIL, "error": str(exc)})
        return BranchResult(
            branch_id=branch_id,
            status=STATUS_FAIL,
            final_sketch=sketch,
            filtered=filtered,
            judge_trace=tuple(judge_trace),
            error=str(exc),
        )


@dataclass(frozen=True)
class ReasoningResult:
    status: str
    ranking: AggregatedRanking
    branches: tuple[BranchResult, ...]
    winner: int | None


def run_reasoning(
    target: Target,
    env: ReasoningEnv,
    config: ReasoningConfig = ReasoningConfig(),
    trace: TraceLog | None = None,
) -> ReasoningResult:
    """Run `budget` branches concurrently and aggregate one final ranking.

    The first branch to win acceptance (launch order breaks ties) cancels its
    siblings and its filtered lists alone are aggregated.  If no branch wins,
    the filtered lists of all (non-errored) branches are pooled.  With
    reflection disabled no judging or cancellation happens and every branch's
    initial-sketch lists are pooled.
    """
    if config.budget < 1:
        raise ReasoningError("budget must be >= 1")
    trace = trace or _noop_trace()
    cancel = threading.Event()
    accept_lock = threading.Lock()
    acceptance_order: list[int] = []

    def on_accept(branch_id: int) -> None:
        with accept_lock:
            acceptance_order.append(branch_id)
            cancel.set()

    results: list[BranchResult | None] = [None] * config.budget

    def run_one(branch_id: int) -> None:
        results[branch_id] = run_branch(
            target,
            env,
            config,
            branch_id=branch_id,
            cancel=cancel if config.reflection_enabled else None,
            trace=trace,
            on_accept=on_accept if config.reflection_enabled else None,
        )

    threads = [
        threading.Thread(target=run_one, args=(branch_id,), name=f"reasoning-branch-{branch_id}")
        for branch_id in range(config.budget)
    ]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()
    branches = tuple(result for result in results if result is not None)
    assert len(branches) == config.budget

    if all(branch.error is not None for branch in branches):
        notes = "; ".join(f"branch {b.branch_id}: {b.error}" for b in branches)
        raise ReasoningError(f"all branches errored: {notes}")

    if not config.reflection_enabled:
        pooled = [lst for branch in branches if branch.error is None for lst in branch.filtered]
        return ReasoningResult(
            status=STATUS_GOOD, ranking=aggregate(pooled), branches=branches, winner=None
        )

    winner: int | None = acceptance_order[0] if acceptance_order else None
    if winner is not None:
        ranking = aggregate(list(branches[winner].filtered))
        return ReasoningResult(status=STATUS_GOOD, ranking=ranking, branches=branches, winner=winner)

    pooled = [lst for branch in branches if branch.error is None for lst in branch.filtered]
    return ReasoningResult(status=STATUS_FAIL, ranking=aggregate(pooled), branches=branches, winner=None)
