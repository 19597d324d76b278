"""Small JSON helpers shared across modules: fence stripping and JSONL files."""
from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Any, Iterable, Iterator

_FENCE_RE = re.compile(r"^\s*```[a-zA-Z0-9_-]*\s*\n(.*?)\n?\s*```\s*$", re.DOTALL)


def strip_code_fences(text: str) -> str:
    """Remove a single surrounding markdown code fence, if present."""
    match = _FENCE_RE.match(text.strip())
    if match:
        return match.group(1).strip()
    return text.strip()


def parse_json_document(text: str) -> Any:
    """Parse JSON after stripping code fences; falls back to the first {...} span."""
    cleaned = strip_code_fences(text)
    try:
        return json.loads(cleaned)
    except json.JSONDecodeError:
        start = cleaned.find("{")
        end = cleaned.rfind("}")
        if start != -1 and end > start:
            return json.loads(cleaned[start : end + 1])
        raise


def read_jsonl(path: str | Path) -> Iterator[tuple[int, Any]]:
    """Yield (line number, parsed document) for every non-blank line."""
    raw = Path(path).read_text(encoding="utf-8")
    for line_no, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        yield line_no, json.loads(line)


def write_jsonl(path: str | Path, docs: Iterable[Any]) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for doc in docs:
            handle.write(json.dumps(doc, ensure_ascii=False, sort_keys=True) + "\n")


def dumps_stable(doc: Any) -> str:
    """Canonical JSON rendering for golden-file comparison."""
    return json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=2) + "\n"
