"""Deterministic offline providers for every pipeline role.

These let the whole system run end-to-end with no network and no keys: outputs
are pure functions of the prompt (plus fixed knobs), so repeated runs produce
byte-identical artifacts.  Tests script finer-grained behaviour directly with
`ScriptedTextProvider`; these mocks exist for the CLI, the service's mock mode,
and the demos.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Callable

from .prover import VerifierResult, _SORRY_RE, strip_comments
from .providers import CallLog, fingerprint
from .reasoning import EMPTY_STEP_MARKER


def _field_from_prompt(prompt: str, key: str) -> str:
    match = re.search(rf"^{re.escape(key)}: (.*)$", prompt, re.MULTILINE)
    return match.group(1).strip() if match else ""


def _keywords(text: str, limit: int = 4) -> list[str]:
    words = [w for w in re.findall(r"[A-Za-z][A-Za-z0-9_.']*", text) if len(w) > 2]
    seen: list[str] = []
    for word in words:
        lowered = word.lower()
        if lowered not in seen:
            seen.append(lowered)
        if len(seen) >= limit:
            break
    return seen


@dataclass
class MockInformalizer:
    """Writes a deterministic one-line description from the prompt's record fields."""

    role: str = "informalizer"
    log: CallLog | None = None
    calls: list[str] = field(default_factory=list)

    def generate(self, prompt: str, **params: Any) -> str:
        self.calls.append(prompt)
        if self.log is not None:
            self.log.record(self.role, "text", fingerprint(prompt))
        name = _field_from_prompt(prompt, "name")
        kind = _field_from_prompt(prompt, "kind")
        signature = _field_from_prompt(prompt, "signature")
        dep_count = prompt.count("\n- ")
        suffix = f" It builds on {dep_count} prerequisite results." if dep_count else ""
        return f"The {kind} {name} states {signature}.{suffix}"


@dataclass
class MockSketcher:
    """Decomposes the formal statement into a fixed number of keyword-driven steps."""

    n_steps: int = 3
    role: str = "sketcher"
    log: CallLog | None = None

    def generate(self, prompt: str, **params: Any) -> str:
        if self.log is not None:
            self.log.record(self.role, "text", fingerprint(prompt))
        formal = _field_from_prompt(prompt, "Target (formal)")
        informal = _field_from_prompt(prompt, "Target (informal)")
        keywords = _keywords(f"{formal} {informal}", limit=self.n_steps * 2) or ["lemma"]
        steps = []
        for i in range(self.n_steps):
            topic = keywords[i % len(keywords)]
            steps.append(
                {
                    "description": f"Establish the {topic} part of the argument",
                    "context": None,
                    "query": f"result about {topic}",
                }
            )
        import json

        return json.dumps({"steps": steps})


@dataclass
class MockFilter:
    """Accepts a candidate when it shares a token with the step query (or always)."""

    accept_all: bool = False
    role: str = "filter"
    log: CallLog | None = None

    def generate(self, prompt: str, **params: Any) -> str:
        if self.log is not None:
            self.log.record(self.role, "text", fingerprint(prompt))
        if self.accept_all:
            return '{"relevant": true}'
        query_tokens = set(_keywords(_field_from_prompt(prompt, "Step query"), limit=8))
        candidate = " ".join(
            _field_from_prompt(prompt, key) for key in ("name", "signature", "statement")
        )
        candidate_tokens = set(_keywords(candidate, limit=32))
        relevant = bool(query_tokens & candidate_tokens)
        return '{"relevant": true}' if relevant else '{"relevant": false}'


@dataclass
class MockJudge:
    """Accepts unless some step block carries the empty-result marker."""

    role: str = "judge"
    log: CallLog | None = None

    def generate(self, prompt: str, **params: Any) -> str:
        import json

        if self.log is not None:
            self.log.record(self.role, "text", fingerprint(prompt))
        feedback = []
        for match in re.finditer(r"Step (\d+):.*?(?=\n\nStep \d+:|\Z)", prompt, re.DOTALL):
            if EMPTY_STEP_MARKER in match.group(0):
                feedback.append(
                    {"step_index": int(match.group(1)), "reason": "no usable results for this step"}
                )
        if not feedback:
            return '{"accepted": true}'
        return json.dumps({"accepted": False, "feedback": feedback})


@dataclass
class MockReviser:
    """Re-plans by broadening the query of every step the judge flagged."""

    role: str = "reviser"
    log: CallLog | None = None

    def generate(self, prompt: str, **params: Any) -> str:
        import json

        if self.log is not None:
            self.log.record(self.role, "text", fingerprint(prompt))
        prior_match = re.search(r"^Previous outline: (.*)$", prompt, re.MULTILINE)
        steps = []
        if prior_match:
            try:
                steps = json.loads(prior_match.group(1)).get("steps", [])
            except json.JSONDecodeError:
                steps = []
        if not steps:
            steps = [{"description": "retry", "context": None, "query": "general lemma"}]
        flagged: set[int] = set()
        feedback_match = re.search(r"^Judge feedback: (.*)$", prompt, re.MULTILINE)
        if feedback_match:
            try:
                flagged = {int(f["step_index"]) for f in json.loads(feedback_match.group(1))}
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                flagged = set()
        for idx, step in enumerate(steps):
            if idx in flagged:
                step["query"] = f"{step.get('query', 'lemma')} alternative formulation"
        return json.dumps({"steps": steps})


@dataclass
class MockProver:
    """Emits a fixed proof skeleton; `always_sorry=True` simulates a stuck prover."""

    always_sorry: bool = False
    role: str = "prover"
    log: CallLog | None = None

    def generate(self, prompt: str, **params: Any) -> str:
        if self.log is not None:
            self.log.record(self.role, "text", fingerprint(prompt))
        formal = _field_from_prompt(prompt, "Formal statement")
        body = "sorry" if self.always_sorry else "simp"
        return f"{formal} := by {body}"


@dataclass
class MockQueryRewriter:
    role: str = "query_rewriter"
    log: CallLog | None = None

    def generate(self, prompt: str, **params: Any) -> str:
        if self.log is not None:
            self.log.record(self.role, "text", fingerprint(prompt))
        keywords = _keywords(prompt, limit=5)
        return "lemma about " + " ".join(keywords[:3])


@dataclass
class MockJudgeRanker:
    """Deterministic comparison judge for the anonymized ranking protocol.

    Scores each system block by result count, then query-token overlap, with a
    seeded hash as the final tie-break, and emits a strict total order.
    """

    seed: int = 0
    role: str = "judge_ranker"
    log: CallLog | None = None

    def generate(self, prompt: str, **params: Any) -> str:
        import json

        if self.log is not None:
            self.log.record(self.role, "text", fingerprint(prompt))
        query = _field_from_prompt(prompt, "Query")
        query_tokens = set(_keywords(query, limit=12))
        sections = re.split(r"^System ([A-D]):$", prompt, flags=re.MULTILINE)
        scores: dict[str, tuple[int, int, str]] = {}
        for label, body in zip(sections[1::2], sections[2::2]):
            n_results = len(re.findall(r"^\s*\[\d+\] name:", body, re.MULTILINE))
            overlap = len(query_tokens & set(_keywords(body, limit=64)))
            tie = fingerprint(f"{self.seed}:{label}:{prompt}")
            scores[label] = (n_results, overlap, tie)
        ranking = sorted(scores, key=lambda l: (-scores[l][0], -scores[l][1], scores[l][2]))
        return json.dumps({"ranking": ranking})


@dataclass
class MockVerifier:
    """Scripted proof checker.

    Default behaviour: every source elaborates (ok) unless it contains the
    literal token ERROR; a live `sorry` yields a sorry goal whose text is
    derived from the submitted source.  `check_fn` overrides everything.
    """

    check_fn: Callable[[str], VerifierResult] | None = None
    role: str = "verifier"
    log: CallLog | None = None
    calls: list[str] = field(default_factory=list)

    def check(self, source: str) -> VerifierResult:
        self.calls.append(source)
        if self.log is not None:
            self.log.record(self.role, "verify", fingerprint(source))
        if self.check_fn is not None:
            return self.check_fn(source)
        if "ERROR" in source:
            return VerifierResult(ok=False, diagnostics=("error: scripted elaboration failure",))
        stripped = strip_comments(source)
        if _SORRY_RE.search(stripped):
            head = stripped.split(":=")[0].strip()
            return VerifierResult(ok=True, sorry_goals=(f"⊢ {head}",))
        return VerifierResult(ok=True)
