"""Command-line entry points: corpus/index lifecycle, search, reasoning runs,
evaluation jobs, the judge protocol, prove jobs, and the HTTP service.

Every command runs end-to-end against the deterministic mock providers when no
provider config is supplied, so the whole pipeline works offline.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Any, Sequence

from . import mocks
from .corpus import (
    CorpusError,
    CorpusSnapshot,
    InformalizeConfig,
    TemplateConfig,
    compose_passages,
    informalize,
    load_corpus,
    save_corpus,
    topological_order,
)
from .evaluation import (
    EvaluationError,
    JudgeEntry,
    evaluate_mpr,
    evaluate_qr,
    fair_subset,
    load_mpr_benchmark,
    load_qr_benchmark,
    load_run_file,
    run_judge_protocol,
)
from .jsonio import dumps_stable, write_jsonl
from .prover import (
    RETRIEVAL_MODES,
    LoopConfig,
    ProveProviders,
    load_problems,
    outcome_to_doc,
    run_reflection_loop,
)
from .providers import CallLog, HashEmbeddingProvider, OverlapRerankProvider
from .reasoning import (
    ReasoningConfig,
    ReasoningEnv,
    ReasoningProviders,
    Target,
    TraceLog,
    run_reasoning,
)
from .retrieval import SearchEngine, build_index, load_index, save_index
from .service import ServiceConfig, build_app_state, make_server

DEFAULT_KS = (1, 5, 10, 20, 30, 50, 100)


def _parse_ks(raw: str | None, default: Sequence[int]) -> list[int]:
    if not raw:
        return list(default)
    try:
        ks = [int(part) for part in raw.split(",") if part.strip()]
    except ValueError as exc:
        raise ValueError(f"invalid --k list {raw!r}: {exc}") from exc
    if not ks or min(ks) < 1:
        raise ValueError("--k must list positive integers")
    return ks


def _write_or_print(doc: Any, out: str | None) -> None:
    rendered = dumps_stable(doc)
    if out:
        Path(out).write_text(rendered, encoding="utf-8")
    else:
        sys.stdout.write(rendered)


def _first_sentence(text: str | None) -> str:
    if not text:
        return ""
    head = text.split(".")[0].strip()
    return head


def _judge_entry(snapshot: CorpusSnapshot, name: str) -> JudgeEntry:
    record = snapshot.get(name)
    if record is None:
        return JudgeEntry(
            name=name, kind="unknown", informal_name="", signature="", value="", informal_statement=""
        )
    return JudgeEntry(
        name=record.name,
        kind=record.kind.label,
        informal_name=_first_sentence(record.informal) or record.name,
        signature=record.signature,
        value=record.value or "",
        informal_statement=record.informal or "",
    )


def _engine_from_args(args: argparse.Namespace, log: CallLog) -> tuple[CorpusSnapshot, SearchEngine]:
    snapshot = load_corpus(args.corpus)
    template = TemplateConfig(kind_aware=not getattr(args, "kind_blind", False))
    passages = compose_passages(snapshot, template)
    embedder = HashEmbeddingProvider(dim=args.embed_dim, log=log)
    if getattr(args, "index", None) and Path(args.index).exists():
        index = load_index(args.index)
    else:
        index = build_index(passages, embedder)
    engine = SearchEngine(
        index=index,
        passages={p.decl_name: p for p in passages},
        embedder=embedder,
        reranker=OverlapRerankProvider(log=log),
        template=template,
        log=log,
    )
    return snapshot, engine


# ---------------------------------------------------------------------------
# Subcommands


def cmd_ingest(args: argparse.Namespace) -> int:
    snapshot = load_corpus(args.corpus)
    order = topological_order(snapshot)
    kinds: dict[str, int] = {}
    for record in snapshot.records.values():
        kinds[record.kind.label] = kinds.get(record.kind.label, 0) + 1
    informal = sum(1 for r in snapshot.records.values() if r.informal)
    _write_or_print(
        {
            "records": len(snapshot),
            "kinds": dict(sorted(kinds.items())),
            "with_informal": informal,
            "acyclic": True,
            "first_in_order": order[: min(5, len(order))],
        },
        args.out,
    )
    return 0


def cmd_informalize(args: argparse.Namespace) -> int:
    snapshot = load_corpus(args.corpus)
    log = CallLog()
    primary = mocks.MockInformalizer(log=log)
    fallback = mocks.MockInformalizer(role="informalizer_fallback", log=log)
    result = informalize(snapshot, primary, fallback, InformalizeConfig())
    save_corpus(result.snapshot, args.out)
    for failure in result.failures:
        print(f"failed: {failure.name}: {failure.error}", file=sys.stderr)
    print(f"informalized {len(result.snapshot)} records -> {args.out}")
    return 0 if not result.failures else 1


def cmd_index(args: argparse.Namespace) -> int:
    snapshot = load_corpus(args.corpus)
    template = TemplateConfig(kind_aware=not args.kind_blind)
    passages = compose_passages(snapshot, template)
    embedder = HashEmbeddingProvider(dim=args.embed_dim)
    index = build_index(passages, embedder)
    save_index(index, args.out)
    print(f"indexed {len(index)} passages (dim {index.dim}) -> {args.out}")
    return 0


def cmd_search(args: argparse.Namespace) -> int:
    log = CallLog()
    snapshot, engine = _engine_from_args(args, log)
    result = engine.search(args.query, args.k, rerank_enabled=not args.no_rerank)
    for hit in result.hits:
        record = snapshot.get(hit.decl_name)
        kind = record.kind.label if record else "?"
        print(f"{hit.rank:>3}  {hit.score:8.4f}  [{kind}] {hit.decl_name}")
    return 0


def cmd_reason(args: argparse.Namespace) -> int:
    log = CallLog()
    snapshot, engine = _engine_from_args(args, log)
    env = ReasoningEnv(
        search=lambda query, k: engine.search(query, k),
        records=snapshot.records,
        providers=ReasoningProviders(
            sketcher=mocks.MockSketcher(log=log),
            filterer=mocks.MockFilter(accept_all=args.filter_accept_all, log=log),
            judge=mocks.MockJudge(log=log),
            reviser=mocks.MockReviser(log=log),
        ),
        log=log,
    )
    config = ReasoningConfig(
        budget=args.budget,
        max_revisions=args.max_revisions,
        reflection_enabled=not args.no_reflection,
        per_step_k=args.per_step_k,
    )
    trace = TraceLog()
    result = run_reasoning(
        Target(informal=args.informal, formal=args.formal), env, config, trace=trace
    )
    if args.trace_out:
        trace.write(args.trace_out)
    _write_or_print(
        {
            "status": result.status,
            "winner": result.winner,
            "branches": [
                {"branch_id": b.branch_id, "status": b.status, "judge_calls": len(b.judge_trace)}
                for b in result.branches
            ],
            "ranking": [
                {"decl_name": e.decl_name, "score": round(e.score, 6)}
                for e in result.ranking.entries
            ],
        },
        args.out,
    )
    return 0


def cmd_eval_qr(args: argparse.Namespace) -> int:
    runs = load_run_file(args.runs)
    items = load_qr_benchmark(args.bench)
    if args.snapshots:
        snapshots = [
            {line.strip() for line in Path(p).read_text().splitlines() if line.strip()}
            for p in args.snapshots.split(",")
        ]
        items = fair_subset(items, snapshots, mode=args.subset_mode)
    report = evaluate_qr(runs, items, ks=_parse_ks(args.k, DEFAULT_KS))
    _write_or_print(report, args.out)
    return 0


def cmd_eval_mpr(args: argparse.Namespace) -> int:
    runs = load_run_file(args.runs)
    items = load_mpr_benchmark(args.bench)
    report = evaluate_mpr(
        runs, items, ks=_parse_ks(args.k, (5, 10, 20, 30, 50)), scope=args.scope
    )
    _write_or_print(report, args.out)
    return 0


def cmd_judge(args: argparse.Namespace) -> int:
    if not 2 <= len(args.runs) <= 4:
        print("judge compares 2 to 4 run files", file=sys.stderr)
        return 2
    snapshot = load_corpus(args.corpus)
    items = load_qr_benchmark(args.bench)
    queries: dict[str, str] = {}
    for item in items:
        for query in item.queries:
            queries[item.query_id(query.style)] = query.text
    system_results: dict[str, dict[str, list[JudgeEntry]]] = {}
    for path in args.runs:
        system = Path(path).stem
        runs = load_run_file(path)
        system_results[system] = {
            query_id: [_judge_entry(snapshot, name) for name in ranked.names()[:5]]
            for query_id, ranked in runs.items()
            if query_id in queries
        }
    shared = set(queries)
    for results in system_results.values():
        shared &= set(results)
    if not shared:
        print("no query ids shared by every run file", file=sys.stderr)
        return 1
    provider = mocks.MockJudgeRanker(seed=args.seed)
    result = run_judge_protocol(
        {qid: queries[qid] for qid in shared},
        system_results,
        provider,
        global_seed=args.seed,
        rounds=args.rounds,
    )
    report = dict(result.report)
    report["assignments"] = [
        {
            "query_id": j.query_id,
            "round": j.round,
            "permutation": dict(sorted(j.permutation.items())),
            "ranking": list(j.ranking),
        }
        for j in result.judgments
    ]
    _write_or_print(report, args.out)
    return 0


def cmd_prove(args: argparse.Namespace) -> int:
    problems = load_problems(args.problems)
    log = CallLog()
    snapshot, engine = _engine_from_args(args, log)

    def standard_retriever(query: str) -> list[JudgeEntry]:
        ranked = engine.search(query, 10)
        return [_judge_entry(snapshot, name) for name in ranked.names()]

    def reasoning_runner(informal: str, formal: str):
        env = ReasoningEnv(
            search=lambda query, k: engine.search(query, k),
            records=snapshot.records,
            providers=ReasoningProviders(
                sketcher=mocks.MockSketcher(log=log),
                filterer=mocks.MockFilter(accept_all=True, log=log),
                judge=mocks.MockJudge(log=log),
                reviser=mocks.MockReviser(log=log),
            ),
            log=log,
        )
        result = run_reasoning(Target(informal=informal, formal=formal), env)
        sketch_lines = []
        winner = result.branches[result.winner] if result.winner is not None else result.branches[0]
        if winner.final_sketch:
            sketch_lines = [
                f"{i}. {step.description}" for i, step in enumerate(winner.final_sketch.steps)
            ]
        entries = [_judge_entry(snapshot, name) for name in result.ranking.names()]
        return "\n".join(sketch_lines), entries

    providers = ProveProviders(
        prover=mocks.MockProver(always_sorry=args.always_sorry, log=log),
        verifier=mocks.MockVerifier(log=log),
        query_rewriter=mocks.MockQueryRewriter(log=log),
        retrievers={
            "standard": standard_retriever,
            "finder": standard_retriever,
            "state": standard_retriever,
            "statement": standard_retriever,
        },
        run_reasoning=reasoning_runner,
        log=log,
    )
    config = LoopConfig(
        reflection_rounds=args.rounds,
        retrieval_mode=args.mode,
        verifier_wait_seconds=args.verifier_wait,
    )
    outcomes = [run_reflection_loop(problem, config, providers) for problem in problems]
    write_jsonl(args.out, [outcome_to_doc(outcome) for outcome in outcomes])
    solved = sum(1 for outcome in outcomes if outcome.solved)
    print(f"solved {solved}/{len(outcomes)} -> {args.out}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    config = ServiceConfig.load(args.config) if args.config else ServiceConfig()
    if args.corpus:
        config.corpus_path = args.corpus
    if args.ui_dir:
        config.ui_dir = args.ui_dir
    if not config.corpus_path:
        print("error: no corpus configured (use --corpus or a config file)", file=sys.stderr)
        return 1
    state = build_app_state(config)
    server = make_server(state, host=args.host, port=args.port)
    print(f"listening on {server.server_address[0]}:{server.server_address[1]}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="declsearch", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for all randomized steps")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_corpus_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--corpus", required=True, help="line-delimited corpus file")
        p.add_argument("--index", help="prebuilt index file (otherwise built in memory)")
        p.add_argument("--embed-dim", type=int, default=64)
        p.add_argument("--kind-blind", action="store_true", help="render every record with the theorem template")

    p = sub.add_parser("ingest", parents=[common], help="load and validate a corpus file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("informalize", parents=[common], help="generate descriptions bottom-up (mock providers)")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_informalize)

    p = sub.add_parser("index", parents=[common], help="build and save a vector index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--embed-dim", type=int, default=64)
    p.add_argument("--kind-blind", action="store_true")
    p.set_defaults(fn=cmd_index)

    p = sub.add_parser("search", parents=[common], help="standard-mode search")
    add_corpus_args(p)
    p.add_argument("--query", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--no-rerank", action="store_true")
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("reason", parents=[common], help="run the sketch-retrieve-filter-judge loop")
    add_corpus_args(p)
    p.add_argument("--informal", default="")
    p.add_argument("--formal", required=True)
    p.add_argument("--budget", type=int, default=2)
    p.add_argument("--max-revisions", type=int, default=3)
    p.add_argument("--per-step-k", type=int, default=10)
    p.add_argument("--no-reflection", action="store_true")
    p.add_argument("--filter-accept-all", action="store_true")
    p.add_argument("--trace-out")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_reason)

    p = sub.add_parser("eval", help="score run files against benchmarks")
    eval_sub = p.add_subparsers(dest="eval_kind", required=True)

    pq = eval_sub.add_parser("qr", parents=[common], help="single-target retrieval metrics")
    pq.add_argument("--runs", required=True)
    pq.add_argument("--bench", required=True)
    pq.add_argument("--k", help="comma-separated cutoffs")
    pq.add_argument("--snapshots", help="comma-separated name-list files")
    pq.add_argument("--subset-mode", default="fair", choices=["fair", "at_least_one", "full"])
    pq.add_argument("--out")
    pq.set_defaults(fn=cmd_eval_qr)

    pm = eval_sub.add_parser("mpr", parents=[common], help="premise-group metrics")
    pm.add_argument("--runs", required=True)
    pm.add_argument("--bench", required=True)
    pm.add_argument("--k", help="comma-separated cutoffs")
    pm.add_argument("--scope", default="original_groups", choices=["original_groups", "all_groups"])
    pm.add_argument("--out")
    pm.set_defaults(fn=cmd_eval_mpr)

    p = sub.add_parser("judge", parents=[common], help="anonymized system-comparison protocol")
    p.add_argument("--runs", nargs="+", required=True, help="2-4 run files (stem = system name)")
    p.add_argument("--bench", required=True, help="benchmark file supplying query text")
    p.add_argument("--corpus", required=True, help="corpus for result hydration")
    p.add_argument("--rounds", type=int, default=3)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_judge)

    p = sub.add_parser("prove", parents=[common], help="reflection-loop prover harness")
    add_corpus_args(p)
    p.add_argument("--problems", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default="none", choices=list(RETRIEVAL_MODES))
    p.add_argument("--rounds", type=int, default=8)
    p.add_argument("--verifier-wait", type=float, default=0.0)
    p.add_argument("--always-sorry", action="store_true", help="force the mock prover to keep failing")
    p.set_defaults(fn=cmd_prove)

    p = sub.add_parser("serve", parents=[common], help="run the HTTP service")
    p.add_argument("--config", help="service config file")
    p.add_argument("--corpus", help="corpus path override")
    p.add_argument("--ui-dir", help="static UI assets directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.fn(args)
    except (CorpusError, EvaluationError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
