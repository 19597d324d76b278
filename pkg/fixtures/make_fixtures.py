#!/usr/bin/env python3
"""Regenerate the synthetic fixture files (deterministic; safe to re-run).

The corpus is a fabricated 50-declaration library slice with a valid dependency
DAG; benchmarks and run files reference only names from it.
"""
from __future__ import annotations

import json
import random
from pathlib import Path

HERE = Path(__file__).parent

KINDS_PLAN = [
    ("def", 10),
    ("structure", 3),
    ("class", 3),
    ("instance", 4),
    ("abbrev", 2),
    ("theorem", 26),
    ("opaque", 2),  # exercises the other(tag) bucket
]

TOPICS = [
    ("Nat", ["add", "mul", "succ", "zero", "le", "lt"]),
    ("List", ["append", "length", "map", "reverse", "mem"]),
    ("Group", ["mul", "inv", "one", "comm", "hom"]),
    ("Topo", ["open", "closed", "compact", "continuous"]),
    ("Order", ["sup", "inf", "mono", "bound"]),
]


def build_corpus(rng: random.Random) -> list[dict]:
    records: list[dict] = []
    names: list[str] = []
    counter = 0
    for kind, count in KINDS_PLAN:
        for _ in range(count):
            namespace, stems = TOPICS[counter % len(TOPICS)]
            stem = stems[counter % len(stems)]
            name = f"{namespace}.{stem}_{kind}_{counter:02d}"
            n_deps = rng.randint(0, min(3, len(names)))
            deps = sorted(rng.sample(names, n_deps)) if n_deps else []
            if rng.random() < 0.1:
                deps.append(f"External.{stem}")
            value = None
            if kind in ("def", "structure", "class", "instance", "abbrev"):
                value = f"fun x => {stem} x {counter}"
            elif kind == "theorem":
                value = f"proof_term_{counter}"
            records.append(
                {
                    "name": name,
                    "kind": kind,
                    "signature": f"∀ x : {namespace}, {stem} x = {stem} x  -- v{counter}",
                    "value": value,
                    "source": {"file": f"{namespace}/{stem.title()}.lean", "line": counter + 1},
                    "deps": deps,
                    "informal": None,
                }
            )
            names.append(name)
            counter += 1
    return records


def build_qr_bench(records: list[dict], rng: random.Random) -> list[dict]:
    theorems = [r for r in records if r["kind"] == "theorem"][:6]
    styles = ["lean", "latex", "natural", "slogan"]
    items = []
    for i, record in enumerate(theorems):
        stem = record["name"].split(".")[1].split("_")[0]
        queries = []
        for style in styles[: 2 + (i % 3)]:
            queries.append(
                {"style": style, "text": f"{style} phrasing of the {stem} result {record['name']}"}
            )
        items.append(
            {
                "decl_name": record["name"],
                "difficulty": "easy" if i % 2 == 0 else "hard",
                "queries": queries,
            }
        )
    return items


def build_mpr_bench(records: list[dict], rng: random.Random) -> list[dict]:
    theorem_names = [r["name"] for r in records if r["kind"] == "theorem"]
    items = []
    for i in range(4):
        pool = theorem_names[i * 5 : i * 5 + 5]
        groups = [
            {"group_id": "g1", "members": pool[:2]},
            {"group_id": "g2", "members": pool[2:3]},
        ]
        routings = [{"routing_id": "r0", "kind": "original", "group_ids": ["g1", "g2"]}]
        if i % 2 == 0:
            groups.append({"group_id": "g3", "members": pool[3:5]})
            routings.append({"routing_id": "r1", "kind": "alternative", "group_ids": ["g3"]})
        items.append(
            {
                "id": f"mpr_{i:02d}",
                "informal": f"Combined statement {i} about {pool[0]}",
                "formal": f"theorem combined_{i} : P{i} := by sorry",
                "groups": groups,
                "routings": routings,
            }
        )
    return items


def build_runs(qr_items: list[dict], records: list[dict], rng: random.Random) -> dict[str, list[dict]]:
    """Four synthetic systems of decreasing quality over the QR benchmark."""
    all_names = [r["name"] for r in records]
    quality = {"system_one": 0, "system_two": 1, "system_three": 3, "system_four": 6}
    runs: dict[str, list[dict]] = {name: [] for name in quality}
    for item in qr_items:
        for query in item["queries"]:
            qid = f"{item['decl_name']}::{query['style']}"
            for system, gt_rank in quality.items():
                others = [n for n in all_names if n != item["decl_name"]]
                rng.shuffle(others)
                names = others[:10]
                if gt_rank < 10:
                    names.insert(gt_rank, item["decl_name"])
                    names = names[:10]
                runs[system].append(
                    {
                        "query_id": qid,
                        "hits": [
                            {"decl_name": n, "score": round(1.0 - 0.05 * i, 4)}
                            for i, n in enumerate(names)
                        ],
                    }
                )
    return runs


def build_mpr_runs(mpr_items: list[dict], records: list[dict], rng: random.Random) -> list[dict]:
    """One synthetic system over the premise benchmark: hits most original groups."""
    all_names = [r["name"] for r in records]
    rows = []
    for item in mpr_items:
        members = [m for g in item["groups"] for m in g["members"]]
        noise = [n for n in all_names if n not in members]
        rng.shuffle(noise)
        names = members[: max(1, len(members) - 1)] + noise[:6]
        rows.append(
            {
                "query_id": item["id"],
                "hits": [
                    {"decl_name": n, "score": round(1.0 - 0.05 * i, 4)}
                    for i, n in enumerate(names)
                ],
            }
        )
    return rows


def build_problems(records: list[dict]) -> list[dict]:
    theorems = [r for r in records if r["kind"] == "theorem"][:3]
    return [
        {
            "id": f"prove_{i:02d}",
            "informal": f"Show the statement of {r['name']}",
            "formal_statement": f"theorem goal_{i} : {r['signature'].split('--')[0].strip()}",
        }
        for i, r in enumerate(theorems)
    ]


def write_jsonl(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(json.dumps(r, ensure_ascii=False) for r in rows) + "\n", "utf-8")


def informalize_records(records: list[dict]) -> list[dict]:
    """Apply the package's deterministic mock informalizer, bottom-up."""
    import sys

    sys.path.insert(0, str(HERE.parent / "src"))
    from declsearch.corpus import informalize, load_corpus, save_corpus
    from declsearch.mocks import MockInformalizer

    raw_path = HERE / "corpus_raw.jsonl"
    write_jsonl(raw_path, records)
    snapshot = load_corpus(raw_path)
    result = informalize(snapshot, MockInformalizer(), MockInformalizer())
    save_corpus(result.snapshot, HERE / "corpus_informal.jsonl")
    return records


def main() -> None:
    rng = random.Random(20260808)
    records = build_corpus(rng)
    qr_items = build_qr_bench(records, rng)
    mpr_items = build_mpr_bench(records, rng)
    write_jsonl(HERE / "corpus_raw.jsonl", records)
    informalize_records(records)
    write_jsonl(HERE / "bench_qr.jsonl", qr_items)
    write_jsonl(HERE / "bench_mpr.jsonl", mpr_items)
    write_jsonl(HERE / "runs" / "mpr_system.jsonl", build_mpr_runs(mpr_items, records, rng))
    write_jsonl(HERE / "problems.jsonl", build_problems(records))
    for system, rows in build_runs(qr_items, records, rng).items():
        write_jsonl(HERE / "runs" / f"{system}.jsonl", rows)
    config = {
        "corpus_path": "fixtures/corpus_informal.jsonl",
        "rerank_pool": 50,
        "reasoning_budget": 2,
        "max_revisions": 3,
        "providers": {role: {"mock": True} for role in
                      ["embedder", "reranker", "informalizer", "sketcher", "filter",
                       "judge", "reviser", "prover", "query_rewriter"]},
    }
    (HERE / "service_config.json").write_text(json.dumps(config, indent=2) + "\n", "utf-8")
    print(f"wrote fixtures under {HERE}")


if __name__ == "__main__":
    main()
