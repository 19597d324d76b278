from __future__ import annotations

import json
from pathlib import Path

import pytest

from declsearch.corpus import (
    CorpusSnapshot,
    DeclarationRecord,
    DeclKind,
    SourceLocation,
)


def make_record(
    name: str,
    kind: str = "theorem",
    signature: str | None = None,
    value: str | None = None,
    deps: tuple[str, ...] = (),
    informal: str | None = None,
) -> DeclarationRecord:
    return DeclarationRecord(
        name=name,
        kind=DeclKind.parse(kind),
        signature=signature if signature is not None else f"sig_of {name}",
        value=value,
        source=SourceLocation(file=f"Lib/{name}.lean", line=1),
        deps=deps,
        informal=informal,
    )


def make_snapshot(*records: DeclarationRecord, version_tag: str = "test") -> CorpusSnapshot:
    return CorpusSnapshot(records={r.name: r for r in records}, version_tag=version_tag)


@pytest.fixture
def corpus_file(tmp_path: Path) -> Path:
    rows = [
        {
            "name": "Alg.mul_comm",
            "kind": "theorem",
            "signature": "a * b = b * a",
            "value": "proof_term",
            "source": {"file": "Alg/Basic.lean", "line": 10},
            "deps": ["Alg.mul"],
            "informal": None,
        },
        {
            "name": "Alg.mul",
            "kind": "def",
            "signature": "G -> G -> G",
            "value": "fun a b => op a b",
            "source": {"file": "Alg/Defs.lean", "line": 3},
            "deps": [],
            "informal": None,
        },
        {
            "name": "Alg.Group",
            "kind": "opaque",
            "signature": "Type u",
            "value": None,
            "source": {"file": "Alg/Defs.lean", "line": 1},
            "deps": ["External.thing"],
            "informal": "A group structure.",
        },
    ]
    path = tmp_path / "corpus.jsonl"
    path.write_text("\n".join(json.dumps(row) for row in rows) + "\n", encoding="utf-8")
    return path
