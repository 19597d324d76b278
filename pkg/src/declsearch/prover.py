"""Downstream prover harness: the simple reflection loop.

A single prover model attempts the goal; every compile failure routes the
verifier trace (and, depending on the retrieval mode, fresh retrieval hints)
into the next attempt.  A proof counts as solved iff the verifier accepts it
and the source contains no live `sorry` once comments are stripped.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

from .evaluation import JudgeEntry, format_result_block
from .providers import CallLog, ProviderError, TextProvider, call_with_retries

logger = logging.getLogger(__name__)

RETRIEVAL_MODES = (
    "none",
    "standard_reflect",
    "finder_like_reflect",
    "state_based",
    "statement_based",
    "reasoning_sketch",
)

HINTS_PER_ROUND = 10  # retrieved items rendered into a prompt


class ProverError(Exception):
    pass


@dataclass(frozen=True)
class ProveProblem:
    id: str
    informal: str
    formal_statement: str

    def __post_init__(self) -> None:
        if not self.formal_statement.strip():
            raise ProverError(f"{self.id}: formal statement must be non-empty")


@dataclass(frozen=True)
class LoopConfig:
    reflection_rounds: int = 8
    prover_max_retries: int = 3
    verifier_max_retries: int = 3
    verifier_wait_seconds: float = 30.0
    retrieval_mode: str = "none"

    def __post_init__(self) -> None:
        if self.retrieval_mode not in RETRIEVAL_MODES:
            raise ProverError(f"unknown retrieval mode {self.retrieval_mode!r}")
        if min(self.reflection_rounds, self.prover_max_retries, self.verifier_max_retries) < 0:
            raise ProverError("loop counters must be >= 0")
        if self.verifier_wait_seconds < 0:
            raise ProverError("verifier_wait_seconds must be >= 0")


@dataclass(frozen=True)
class VerifierResult:
    ok: bool
    diagnostics: tuple[str, ...] = ()
    sorry_goals: tuple[str, ...] = ()


class VerifierClient(Protocol):
    def check(self, source: str) -> VerifierResult: ...


@dataclass
class HttpVerifierClient:
    """Proof checking over a JSON-POST endpoint.

    Request: {"source": ...}; response: {"ok": bool, "diagnostics": [...],
    "sorry_goals": [...]}.
    """

    url: str
    auth_env: str | None = None
    timeout: float = 300.0
    role: str = "verifier"
    log: CallLog | None = None

    def check(self, source: str) -> VerifierResult:
        from .providers import _auth_token, _post_json, fingerprint

        if self.log is not None:
            self.log.record(self.role, "verify", fingerprint(source))
        doc = _post_json(
            self.url,
            {"source": source},
            token=_auth_token(self.auth_env),
            timeout=self.timeout,
        )
        return VerifierResult(
            ok=bool(doc.get("ok")),
            diagnostics=tuple(str(d) for d in doc.get("diagnostics") or ()),
            sorry_goals=tuple(str(g) for g in doc.get("sorry_goals") or ()),
        )


@dataclass(frozen=True)
class Attempt:
    source: str
    verifier_ok: bool
    diagnostics: tuple[str, ...]
    hints_used: tuple[str, ...]


@dataclass(frozen=True)
class LoopOutcome:
    problem_id: str
    solved: bool
    rounds_used: int
    attempts: tuple[Attempt, ...]
    error: str | None = None


# ---------------------------------------------------------------------------
# Solved criterion

# Identifier characters for the word-boundary check; includes ' because the
# proof language allows primed identifiers like sorry'.
_SORRY_RE = re.compile(r"(?<![A-Za-z0-9_'])sorry(?![A-Za-z0-9_'])")


def strip_comments(source: str) -> str:
    """Remove line comments and nestable block comments; string literals survive.

    An unterminated block comment extends to the end of input and is flagged
    with a warning.
    """
    out: list[str] = []
    i = 0
    n = len(source)
    depth = 0
    in_string = False
    while i < n:
        ch = source[i]
        two = source[i : i + 2]
        if depth > 0:
            if two == "/-":
                depth += 1
                i += 2
            elif two == "-/":
                depth -= 1
                i += 2
            else:
                i += 1
            continue
        if in_string:
            out.append(ch)
            if ch == "\\" and i + 1 < n:
                out.append(source[i + 1])
                i += 2
                continue
            if ch == '"':
                in_string = False
            i += 1
            continue
        if two == "--":
            while i < n and source[i] != "\n":
                i += 1
            continue
        if two == "/-":
            depth = 1
            i += 2
            continue
        if ch == '"':
            in_string = True
        out.append(ch)
        i += 1
    if depth > 0:
        logger.warning("unterminated block comment; treated as extending to end of input")
    return "".join(out)


def is_solved(verifier_ok: bool, source: str) -> bool:
    """Solved iff the verifier accepted and no live `sorry` token survives stripping."""
    if not verifier_ok:
        return False
    return _SORRY_RE.search(strip_comments(source)) is None


# ---------------------------------------------------------------------------
# Proof-state extraction

_SORRY_SUFFIX_RE = re.compile(r":=\s*(by\s+)?sorry\s*$")


def append_sorry(formal_statement: str) -> str:
    """Append `:= sorry` unless the statement already ends in a sorry body."""
    stripped = strip_comments(formal_statement).rstrip()
    if _SORRY_SUFFIX_RE.search(stripped):
        return formal_statement
    return formal_statement.rstrip() + " := sorry"


def extract_proof_state(formal_statement: str, verifier: VerifierClient) -> str:
    """Submit the statement with a sorry body and read back the goal context."""
    result = verifier.check(append_sorry(formal_statement))
    if not result.sorry_goals:
        raise ProverError(
            "verifier reported no sorry goal; diagnostics: " + "; ".join(result.diagnostics)
        )
    return result.sorry_goals[0]


# ---------------------------------------------------------------------------
# Reflection loop

Retriever = Callable[[str], Sequence[JudgeEntry]]
ReasoningRunner = Callable[[str, str], tuple[str, Sequence[JudgeEntry]]]


@dataclass
class ProveProviders:
    """Everything the loop may call, wired per retrieval mode.

    `retrievers` maps slot names (standard, finder, state, statement) to
    callables from a query string to hydrated hit entries.  `run_reasoning`
    produces (sketch text, aggregated premise entries) from (informal, formal).
    """

    prover: TextProvider
    verifier: VerifierClient
    query_rewriter: TextProvider | None = None
    retrievers: Mapping[str, Retriever] = field(default_factory=dict)
    run_reasoning: ReasoningRunner | None = None
    log: CallLog | None = None


PROVE_PROMPT = """Prove the following statement in the proof assistant. Output only the complete source.

Informal statement: {informal}
Formal statement: {formal}
{hints}{reflection}"""

REFLECTION_BLOCK = """
Previous attempt:
{source}

Verifier feedback:
{feedback}

Fix the proof and output the complete corrected source."""

QUERY_REWRITE_PROMPT = """Rewrite the state of this proof attempt as one short natural-language library search query.

Current attempt:
{source}

Verifier feedback:
{feedback}

Output only the query text."""


def _render_hints(hints: Sequence[JudgeEntry]) -> str:
    if not hints:
        return ""
    blocks = [format_result_block(entry, i + 1) for i, entry in enumerate(hints[:HINTS_PER_ROUND])]
    return "\nPotentially useful library results:\n" + "\n".join(blocks) + "\n"


def _verify(source: str, providers: ProveProviders, config: LoopConfig) -> VerifierResult:
    def check() -> VerifierResult:
        try:
            return providers.verifier.check(source)
        except ProviderError:
            raise
        except Exception as exc:  # transport-level failure
            raise ProviderError(str(exc)) from exc

    return call_with_retries(
        check, max_retries=config.verifier_max_retries, wait_seconds=config.verifier_wait_seconds
    )


def _hint_entries(
    providers: ProveProviders, slot: str, query: str, log_key: str
) -> Sequence[JudgeEntry]:
    retriever = providers.retrievers.get(slot)
    if retriever is None:
        raise ProverError(f"retrieval mode requires a {slot!r} retriever")
    if providers.log is not None:
        providers.log.record(f"retriever:{slot}", "retrieve", log_key)
    return list(retriever(query))[:HINTS_PER_ROUND]


def _rewrite_query(
    providers: ProveProviders, source: str, feedback: str, config: LoopConfig
) -> str:
    if providers.query_rewriter is None:
        raise ProverError("reflection retrieval requires a query rewriter")
    prompt = QUERY_REWRITE_PROMPT.format(source=source, feedback=feedback)
    return call_with_retries(
        lambda: providers.query_rewriter.generate(prompt), max_retries=config.prover_max_retries
    ).strip()


def run_reflection_loop(
    problem: ProveProblem,
    config: LoopConfig,
    providers: ProveProviders,
) -> LoopOutcome:
    """Drive prove-verify-retrieve-retry until solved or the reflection budget ends.

    Round-1 hints depend on the retrieval mode: reflection-only modes send no
    hints up front; statement-conditioned modes retrieve immediately; the
    sketch mode runs the reasoning pipeline exactly once and reuses its output
    as a frozen round-1 context, falling back to the standard reflection path
    afterwards.
    """
    mode = config.retrieval_mode
    attempts: list[Attempt] = []
    sketch_context = ""

    def hints_for_round(
        round_no: int, last_source: str | None, last_feedback: str
    ) -> Sequence[JudgeEntry]:
        if mode == "none":
            return ()
        if mode in ("standard_reflect", "finder_like_reflect"):
            if round_no == 0:
                return ()
            slot = "standard" if mode == "standard_reflect" else "finder"
            query = _rewrite_query(providers, last_source or "", last_feedback, config)
            return _hint_entries(providers, slot, query, f"{problem.id}#r{round_no}")
        if mode == "state_based":
            source = problem.formal_statement if round_no == 0 else (last_source or "")
            state = extract_proof_state(source, providers.verifier)
            return _hint_entries(providers, "state", state, f"{problem.id}#r{round_no}")
        if mode == "statement_based":
            if round_no == 0:
                query = f"{problem.informal}\n{problem.formal_statement}"
            else:
                query = f"{last_source}\n{last_feedback}"
            return _hint_entries(providers, "statement", query, f"{problem.id}#r{round_no}")
        if mode == "reasoning_sketch":
            nonlocal sketch_context
            if round_no == 0:
                if providers.run_reasoning is None:
                    raise ProverError("reasoning_sketch mode requires a reasoning runner")
                if providers.log is not None:
                    providers.log.record("reasoning", "run", problem.id)
                sketch_text, premises = providers.run_reasoning(
                    problem.informal, problem.formal_statement
                )
                sketch_context = f"\nProof outline:\n{sketch_text}\n"
                return list(premises)[:HINTS_PER_ROUND]
            query = _rewrite_query(providers, last_source or "", last_feedback, config)
            return _hint_entries(providers, "standard", query, f"{problem.id}#r{round_no}")
        raise ProverError(f"unknown retrieval mode {mode!r}")

    last_source: str | None = None
    last_feedback = ""
    try:
        for round_no in range(config.reflection_rounds + 1):
            hints = hints_for_round(round_no, last_source, last_feedback)
            reflection = (
                REFLECTION_BLOCK.format(source=last_source, feedback=last_feedback or "(none)")
                if round_no > 0
                else ""
            )
            prompt = PROVE_PROMPT.format(
                informal=problem.informal,
                formal=problem.formal_statement,
                hints=sketch_context + _render_hints(hints),
                reflection=reflection,
            )
            source = call_with_retries(
                lambda p=prompt: providers.prover.generate(p),
                max_retries=config.prover_max_retries,
            )
            result = _verify(source, providers, config)
            attempts.append(
                Attempt(
                    source=source,
                    verifier_ok=result.ok,
                    diagnostics=result.diagnostics,
                    hints_used=tuple(entry.name for entry in hints),
                )
            )
            if is_solved(result.ok, source):
                return LoopOutcome(
                    problem_id=problem.id,
                    solved=True,
                    rounds_used=round_no,
                    attempts=tuple(attempts),
                )
            last_source = source
            last_feedback = "; ".join(result.diagnostics) or "proof not accepted"
    except (ProviderError, ProverError) as exc:
        return LoopOutcome(
            problem_id=problem.id,
            solved=False,
            rounds_used=max(0, len(attempts) - 1),
            attempts=tuple(attempts),
            error=str(exc),
        )
    return LoopOutcome(
        problem_id=problem.id,
        solved=False,
        rounds_used=config.reflection_rounds,
        attempts=tuple(attempts),
    )


def load_problems(path: str | Path) -> list[ProveProblem]:
    from .jsonio import read_jsonl

    problems = []
    for line_no, doc in read_jsonl(path):
        try:
            problems.append(
                ProveProblem(
                    id=str(doc["id"]),
                    informal=str(doc.get("informal", "")),
                    formal_statement=str(doc["formal_statement"]),
                )
            )
        except (KeyError, TypeError) as exc:
            raise ProverError(f"line {line_no}: malformed problem row: {exc}") from exc
    return problems


def outcome_to_doc(outcome: LoopOutcome) -> dict:
    return {
        "problem_id": outcome.problem_id,
        "solved": outcome.solved,
        "rounds_used": outcome.rounds_used,
        "error": outcome.error,
        "attempts": [
            {
                "source": attempt.source,
                "verifier_ok": attempt.verifier_ok,
                "diagnostics": list(attempt.diagnostics),
                "hints_used": list(attempt.hints_used),
            }
            for attempt in outcome.attempts
        ],
    }
