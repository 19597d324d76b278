"""Declaration corpus: loading, dependency ordering, informalization, passage templating.

A corpus is a line-delimited file of declaration records (one JSON document per
line).  The internal dependency relation must be acyclic; enrichment walks it
bottom-up so each description can quote the already-written descriptions of its
dependencies.
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

from .providers import CallLog, ProviderError, TextProvider, call_with_retries

KNOWN_KINDS = ("theorem", "def", "instance", "class", "structure", "abbrev")
VALUE_KINDS = frozenset({"def", "instance", "class", "structure", "abbrev"})


class CorpusError(Exception):
    """Malformed corpus input (bad line, duplicate name, unresolved invariant)."""


class CycleError(CorpusError):
    """The internal dependency relation contains a cycle."""

    def __init__(self, members: list[str]):
        self.members = members
        super().__init__("dependency cycle: " + " -> ".join(members))


@dataclass(frozen=True)
class DeclKind:
    """Declaration kind; unrecognized tags are preserved under the `other` bucket."""

    name: str
    tag: str | None = None

    @classmethod
    def parse(cls, raw: str) -> "DeclKind":
        raw = raw.strip()
        if raw in KNOWN_KINDS:
            return cls(raw)
        return cls("other", raw)

    @property
    def label(self) -> str:
        return self.tag if (self.name == "other" and self.tag) else self.name

    @property
    def includes_value(self) -> bool:
        return self.name in VALUE_KINDS


@dataclass(frozen=True)
class SourceLocation:
    file: str
    line: int

    def __post_init__(self) -> None:
        if self.line < 1:
            raise CorpusError(f"source line must be >= 1, got {self.line}")


@dataclass(frozen=True)
class DeclarationRecord:
    name: str
    kind: DeclKind
    signature: str
    value: str | None
    source: SourceLocation
    deps: tuple[str, ...]
    informal: str | None = None

    def __post_init__(self) -> None:
        if not self.name:
            raise CorpusError("declaration name must be non-empty")


@dataclass(frozen=True)
class CorpusSnapshot:
    records: dict[str, DeclarationRecord]
    version_tag: str = ""

    def __contains__(self, name: str) -> bool:
        return name in self.records

    def __len__(self) -> int:
        return len(self.records)

    def get(self, name: str) -> DeclarationRecord | None:
        return self.records.get(name)

    def internal_deps(self, name: str) -> tuple[str, ...]:
        """Dependencies resolvable inside this snapshot; external names are skipped."""
        record = self.records[name]
        return tuple(dep for dep in record.deps if dep in self.records)

    def external_deps(self, name: str) -> tuple[str, ...]:
        record = self.records[name]
        return tuple(dep for dep in record.deps if dep not in self.records)


def _parse_record(doc: Mapping, line_no: int) -> DeclarationRecord:
    try:
        name = str(doc["name"]).strip()
        kind = DeclKind.parse(str(doc["kind"]))
        signature = str(doc["signature"])
        value = doc.get("value")
        value = None if value is None else str(value)
        source_doc = doc["source"]
        source = SourceLocation(file=str(source_doc["file"]), line=int(source_doc["line"]))
        deps = tuple(str(dep).strip() for dep in doc.get("deps", []))
        informal = doc.get("informal")
        informal = None if informal is None else str(informal)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusError(f"line {line_no}: malformed record: {exc}") from exc
    if not name:
        raise CorpusError(f"line {line_no}: empty declaration name")
    return DeclarationRecord(
        name=name,
        kind=kind,
        signature=signature,
        value=value,
        source=source,
        deps=deps,
        informal=informal,
    )


def load_corpus(path: str | Path, version_tag: str = "") -> CorpusSnapshot:
    """Parse a line-delimited corpus file into a snapshot.

    Raises CorpusError on an unreadable file, a malformed line (with its line
    number), or a duplicate declaration name.
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read corpus file {path}: {exc}") from exc

    records: dict[str, DeclarationRecord] = {}
    for line_no, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"line {line_no}: invalid JSON: {exc}") from exc
        record = _parse_record(doc, line_no)
        if record.name in records:
            raise CorpusError(f"line {line_no}: duplicate declaration name {record.name!r}")
        records[record.name] = record
    return CorpusSnapshot(records=records, version_tag=version_tag or path.stem)


def save_corpus(snapshot: CorpusSnapshot, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for name in sorted(snapshot.records):
            record = snapshot.records[name]
            doc = {
                "name": record.name,
                "kind": record.kind.label,
                "signature": record.signature,
                "value": record.value,
                "source": {"file": record.source.file, "line": record.source.line},
                "deps": list(record.deps),
                "informal": record.informal,
            }
            handle.write(json.dumps(doc, ensure_ascii=False) + "\n")


def _find_cycle(snapshot: CorpusSnapshot, candidates: Iterable[str]) -> list[str]:
    """Locate one concrete cycle among `candidates` (all known to sit on cycles)."""
    candidates = set(candidates)
    state: dict[str, int] = {}  # 0 visiting, 1 done
    stack: list[str] = []

    def visit(node: str) -> list[str] | None:
        state[node] = 0
        stack.append(node)
        for dep in snapshot.internal_deps(node):
            if dep not in candidates:
                continue
            if state.get(dep) == 0:
                return stack[stack.index(dep) :]
            if dep not in state:
                found = visit(dep)
                if found:
                    return found
        stack.pop()
        state[node] = 1
        return None

    for start in sorted(candidates):
        if start not in state:
            found = visit(start)
            if found:
                return found
    raise AssertionError("no cycle found among candidates")


def topological_order(snapshot: CorpusSnapshot) -> list[str]:
    """Dependency-first ordering of all records.

    Incomparable records are ordered lexicographically by name so the result is
    reproducible.  Raises CycleError listing one cycle's members if the internal
    dependency relation is not acyclic.
    """
    indegree = {name: 0 for name in snapshot.records}
    dependents: dict[str, list[str]] = {name: [] for name in snapshot.records}
    for name in snapshot.records:
        for dep in snapshot.internal_deps(name):
            indegree[name] += 1
            dependents[dep].append(name)

    ready = [name for name, deg in indegree.items() if deg == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        name = heapq.heappop(ready)
        order.append(name)
        for dependent in dependents[name]:
            indegree[dependent] -= 1
            if indegree[dependent] == 0:
                heapq.heappush(ready, dependent)
    if len(order) != len(snapshot.records):
        remaining = [name for name in snapshot.records if name not in set(order)]
        raise CycleError(_find_cycle(snapshot, remaining))
    return order


# ---------------------------------------------------------------------------
# Informalization


@dataclass(frozen=True)
class InformalizeConfig:
    primary_retries: int = 2          # retries after the first attempt, before falling back
    max_dep_context: int = 20         # dependency descriptions included per prompt
    dep_snippet_chars: int = 600      # truncation applied to each included description
    skip_existing: bool = True        # records that already carry a description are kept


@dataclass(frozen=True)
class InformalizeFailure:
    name: str
    error: str


@dataclass(frozen=True)
class InformalizeResult:
    snapshot: CorpusSnapshot
    failures: tuple[InformalizeFailure, ...]


def _dependency_context(
    snapshot: CorpusSnapshot,
    informal: Mapping[str, str],
    name: str,
    config: InformalizeConfig,
) -> list[tuple[str, str]]:
    """Nearest-first (BFS) walk of internal dependencies with written descriptions."""
    seen: set[str] = set()
    queue = list(snapshot.internal_deps(name))
    context: list[tuple[str, str]] = []
    while queue and len(context) < config.max_dep_context:
        dep = queue.pop(0)
        if dep in seen:
            continue
        seen.add(dep)
        description = informal.get(dep)
        if description:
            context.append((dep, description[: config.dep_snippet_chars]))
        queue.extend(snapshot.internal_deps(dep))
    return context


def informalization_prompt(
    record: DeclarationRecord, context: list[tuple[str, str]]
) -> str:
    lines = [
        "Write one concise natural-language description of the mathematical meaning "
        "of this library declaration.",
        "",
        f"kind: {record.kind.label}",
        f"name: {record.name}",
        f"signature: {record.signature}",
    ]
    if record.value is not None and record.kind.includes_value:
        lines.append(f"value: {record.value}")
    if context:
        lines.append("")
        lines.append("Descriptions of its dependencies:")
        for dep_name, dep_text in context:
            lines.append(f"- {dep_name}: {dep_text}")
    return "\n".join(lines)


def informalize(
    snapshot: CorpusSnapshot,
    primary: TextProvider,
    fallback: TextProvider,
    config: InformalizeConfig = InformalizeConfig(),
    log: CallLog | None = None,
) -> InformalizeResult:
    """Generate descriptions bottom-up along the dependency DAG.

    Each prompt carries the already-produced descriptions of the record's
    internal dependencies (nearest-first, bounded by the config).  A record
    whose primary calls fail (errors or empty output) is handed to the fallback
    provider once; if that also fails the record is returned without a
    description and listed in the failure report.
    """
    order = topological_order(snapshot)
    informal: dict[str, str] = {
        name: rec.informal for name, rec in snapshot.records.items() if rec.informal
    }
    failures: list[InformalizeFailure] = []
    updated: dict[str, DeclarationRecord] = dict(snapshot.records)

    for name in order:
        record = updated[name]
        if config.skip_existing and record.informal:
            continue
        context = _dependency_context(snapshot, informal, name, config)
        prompt = informalization_prompt(record, context)
        if log is not None:
            log.record("informalizer", "visit", name)

        def attempt(provider: TextProvider) -> str:
            text = provider.generate(prompt)
            if not text or not text.strip():
                raise ProviderError("empty informalization output")
            return text.strip()

        text: str | None = None
        try:
            text = call_with_retries(
                lambda: attempt(primary), max_retries=config.primary_retries
            )
        except ProviderError as primary_error:
            try:
                text = attempt(fallback)
            except ProviderError as fallback_error:
                failures.append(
                    InformalizeFailure(
                        name=name,
                        error=f"primary: {primary_error}; fallback: {fallback_error}",
                    )
                )
        if text is not None:
            informal[name] = text
            updated[name] = replace(record, informal=text)

    return InformalizeResult(
        snapshot=CorpusSnapshot(records=updated, version_tag=snapshot.version_tag),
        failures=tuple(failures),
    )


# ---------------------------------------------------------------------------
# Passage templating

PASSAGE_INSTRUCTIONS = {
    "theorem": "Passage for retrieval: a library theorem, searched by the statement it proves.",
    "def": "Passage for retrieval: a library definition; its value is part of its meaning.",
    "instance": "Passage for retrieval: a typeclass instance; its value is part of its meaning.",
    "class": "Passage for retrieval: a typeclass; its value is part of its meaning.",
    "structure": "Passage for retrieval: a structure; its value is part of its meaning.",
    "abbrev": "Passage for retrieval: an abbreviation; its value is part of its meaning.",
    "other": "Passage for retrieval: a library declaration.",
}

QUERY_INSTRUCTION = "Query for retrieval: find the library declaration this text describes."

RERANK_INSTRUCTIONS = {
    "theorem": "Judge whether this theorem is what the query asks for; answer by relevance probability.",
    "value": (
        "Judge whether this definition-like declaration is what the query asks for; "
        "weigh its value field; answer by relevance probability."
    ),
    "other": "Judge whether this declaration is what the query asks for; answer by relevance probability.",
}


@dataclass(frozen=True)
class TemplateConfig:
    """Passage/query templating knobs; `kind_aware=False` renders everything as a theorem."""

    version: str = "passage-v1"
    kind_aware: bool = True


@dataclass(frozen=True)
class Passage:
    decl_name: str
    text: str
    kind: DeclKind


def compose_passage(record: DeclarationRecord, template: TemplateConfig = TemplateConfig()) -> Passage:
    """Render one record into its indexable passage text (pure function)."""
    if template.kind_aware:
        label = record.kind.label
        instruction = PASSAGE_INSTRUCTIONS.get(record.kind.name, PASSAGE_INSTRUCTIONS["other"])
        include_value = record.kind.includes_value
    else:
        label = "theorem"
        instruction = PASSAGE_INSTRUCTIONS["theorem"]
        include_value = False

    lines = [instruction, f"kind: {label}", f"name: {record.name}", f"signature: {record.signature}"]
    if include_value and record.value is not None:
        lines.append(f"value: {record.value}")
    lines.append(f"description: {record.informal or ''}")
    return Passage(decl_name=record.name, text="\n".join(lines), kind=record.kind)


def compose_query(query: str, template: TemplateConfig = TemplateConfig()) -> str:
    """Query-side text handed to the embedder; mirrors the passage instruction style."""
    return f"{QUERY_INSTRUCTION}\n{query}"


def rerank_instruction(kind: DeclKind, template: TemplateConfig = TemplateConfig()) -> str:
    if not template.kind_aware:
        return RERANK_INSTRUCTIONS["other"]
    if kind.name == "theorem":
        return RERANK_INSTRUCTIONS["theorem"]
    if kind.includes_value:
        return RERANK_INSTRUCTIONS["value"]
    return RERANK_INSTRUCTIONS["other"]


def compose_passages(
    snapshot: CorpusSnapshot, template: TemplateConfig = TemplateConfig()
) -> list[Passage]:
    return [compose_passage(snapshot.records[name], template) for name in sorted(snapshot.records)]
