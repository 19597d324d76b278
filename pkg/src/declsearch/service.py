"""Long-running HTTP service over the search and reasoning pipelines.

Search is synchronous and stateless; reasoning runs are asynchronous jobs whose
append-only trace logs can be replayed while the run is live.  Everything can
be wired to deterministic mock providers (`mock: true` per role) so the whole
service works with no network and no keys.
"""
from __future__ import annotations

import json
import os
import threading
import uuid
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Mapping

from . import mocks
from .corpus import CorpusSnapshot, TemplateConfig, compose_passages, load_corpus
from .providers import (
    CallLog,
    HashEmbeddingProvider,
    HttpEmbeddingProvider,
    HttpRerankProvider,
    HttpTextProvider,
    OverlapRerankProvider,
)
from .reasoning import (
    ReasoningConfig,
    ReasoningEnv,
    ReasoningProviders,
    ReasoningResult,
    Target,
    TraceLog,
    run_reasoning,
)
from .retrieval import SearchEngine, VectorIndex, build_index, load_index

TEXT_ROLES = ("informalizer", "sketcher", "filter", "judge", "reviser", "prover", "query_rewriter")


class ServiceError(Exception):
    pass


@dataclass
class ProviderSpec:
    mock: bool = True
    url: str = ""
    model: str = ""
    auth_env: str = ""

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any] | None) -> "ProviderSpec":
        doc = doc or {}
        return cls(
            mock=bool(doc.get("mock", not doc.get("url"))),
            url=str(doc.get("url", "")),
            model=str(doc.get("model", "")),
            auth_env=str(doc.get("auth_env", "")),
        )


@dataclass
class ServiceConfig:
    corpus_path: str = ""
    index_path: str = ""
    ui_dir: str = ""
    bearer_token_env: str = ""
    rerank_pool: int = 50
    reasoning_budget: int = 2
    max_revisions: int = 3
    per_step_k: int = 10
    kind_aware: bool = True
    embed_dim: int = 64  # mock embedder dimension
    providers: dict[str, ProviderSpec] = field(default_factory=dict)

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "ServiceConfig":
        providers = {
            role: ProviderSpec.from_doc(spec)
            for role, spec in (doc.get("providers") or {}).items()
        }
        known = {"corpus_path", "index_path", "ui_dir", "bearer_token_env", "rerank_pool",
                 "reasoning_budget", "max_revisions", "per_step_k", "kind_aware", "embed_dim"}
        fields = {key: doc[key] for key in known if key in doc}
        return cls(providers=providers, **fields)

    @classmethod
    def load(cls, path: str | Path) -> "ServiceConfig":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        config = cls.from_doc(doc)
        return config.with_env_overrides()

    def with_env_overrides(self) -> "ServiceConfig":
        """DECLSEARCH_* environment variables override the scalar path fields."""
        overrides = {
            "corpus_path": os.environ.get("DECLSEARCH_CORPUS_PATH"),
            "index_path": os.environ.get("DECLSEARCH_INDEX_PATH"),
            "ui_dir": os.environ.get("DECLSEARCH_UI_DIR"),
            "bearer_token_env": os.environ.get("DECLSEARCH_BEARER_TOKEN_ENV"),
        }
        for key, value in overrides.items():
            if value:
                setattr(self, key, value)
        return self

    def spec(self, role: str) -> ProviderSpec:
        return self.providers.get(role, ProviderSpec(mock=True))


def _text_provider(role: str, spec: ProviderSpec, log: CallLog):
    if not spec.mock:
        return HttpTextProvider(
            url=spec.url, model=spec.model, auth_env=spec.auth_env or None, role=role, log=log
        )
    return {
        "informalizer": mocks.MockInformalizer,
        "sketcher": mocks.MockSketcher,
        "filter": mocks.MockFilter,
        "judge": mocks.MockJudge,
        "reviser": mocks.MockReviser,
        "prover": mocks.MockProver,
        "query_rewriter": mocks.MockQueryRewriter,
    }[role](role=role, log=log)


@dataclass
class AppState:
    """Shared runtime: snapshot + index are immutable, jobs are mutex-guarded."""

    snapshot: CorpusSnapshot
    engine: SearchEngine
    config: ServiceConfig
    log: CallLog
    jobs: dict[str, "ReasonJob"] = field(default_factory=dict)
    jobs_lock: threading.Lock = field(default_factory=threading.Lock)

    def reasoning_env(self) -> ReasoningEnv:
        providers = ReasoningProviders(
            sketcher=_text_provider("sketcher", self.config.spec("sketcher"), self.log),
            filterer=_text_provider("filter", self.config.spec("filter"), self.log),
            judge=_text_provider("judge", self.config.spec("judge"), self.log),
            reviser=_text_provider("reviser", self.config.spec("reviser"), self.log),
        )
        return ReasoningEnv(
            search=lambda query, k: self.engine.search(query, k),
            records=self.snapshot.records,
            providers=providers,
            log=self.log,
        )


@dataclass
class ReasonJob:
    run_id: str
    status: str  # running | done | error
    trace: TraceLog
    result: ReasoningResult | None = None
    error: str | None = None


def build_app_state(config: ServiceConfig, *, snapshot: CorpusSnapshot | None = None,
                    index: VectorIndex | None = None) -> AppState:
    log = CallLog()
    if snapshot is None:
        if not config.corpus_path:
            raise ServiceError("config has no corpus_path")
        snapshot = load_corpus(config.corpus_path)
    template = TemplateConfig(kind_aware=config.kind_aware)
    passages = compose_passages(snapshot, template)
    embed_spec = config.spec("embedder")
    if embed_spec.mock:
        embedder = HashEmbeddingProvider(dim=config.embed_dim, log=log)
    else:
        embedder = HttpEmbeddingProvider(
            url=embed_spec.url, model=embed_spec.model, auth_env=embed_spec.auth_env or None, log=log
        )
    if index is None:
        if config.index_path and Path(config.index_path).exists():
            index = load_index(config.index_path)
        else:
            index = build_index(passages, embedder)
    rerank_spec = config.spec("reranker")
    if rerank_spec.mock:
        reranker = OverlapRerankProvider(log=log)
    else:
        reranker = HttpRerankProvider(
            url=rerank_spec.url, model=rerank_spec.model, auth_env=rerank_spec.auth_env or None, log=log
        )
    engine = SearchEngine(
        index=index,
        passages={p.decl_name: p for p in passages},
        embedder=embedder,
        reranker=reranker,
        template=template,
        rerank_pool=config.rerank_pool,
        log=log,
    )
    return AppState(snapshot=snapshot, engine=engine, config=config, log=log)


def _hydrate_hit(state: AppState, hit) -> dict[str, Any]:
    record = state.snapshot.get(hit.decl_name)
    return {
        "name": hit.decl_name,
        "kind": record.kind.label if record else "unknown",
        "signature": record.signature if record else "",
        "informal": (record.informal or "") if record else "",
        "score": hit.score,
        "rank": hit.rank,
    }


SEARCH_FIELDS = {"query", "k", "rerank", "kind_aware"}
REASON_FIELDS = {"informal", "formal", "budget", "max_revisions", "reflection_enabled"}


def handle_search(state: AppState, body: Mapping[str, Any]) -> dict[str, Any]:
    unknown = set(body) - SEARCH_FIELDS
    if unknown:
        raise ValueError(
            f"unknown fields {sorted(unknown)}; accepted fields: {sorted(SEARCH_FIELDS)}"
        )
    query = body.get("query")
    if not isinstance(query, str) or not query.strip():
        raise ValueError("query must be a non-empty string")
    k = body.get("k", 10)
    if isinstance(k, bool) or not isinstance(k, int) or k < 1:
        raise ValueError("k must be a positive integer")
    rerank_enabled = bool(body.get("rerank", True))
    kind_aware = body.get("kind_aware")
    if kind_aware is not None and not isinstance(kind_aware, bool):
        raise ValueError("kind_aware must be a boolean")
    result = state.engine.search(query, k, rerank_enabled=rerank_enabled, kind_aware=kind_aware)
    return {
        "query": query,
        "stage": result.stage,
        "hits": [_hydrate_hit(state, hit) for hit in result.hits],
    }


def start_reason_job(state: AppState, body: Mapping[str, Any]) -> dict[str, Any]:
    unknown = set(body) - REASON_FIELDS
    if unknown:
        raise ValueError(
            f"unknown fields {sorted(unknown)}; accepted fields: {sorted(REASON_FIELDS)}"
        )
    informal = str(body.get("informal", ""))
    formal = body.get("formal")
    if not isinstance(formal, str) or not formal.strip():
        raise ValueError("formal must be a non-empty string")
    config = ReasoningConfig(
        budget=int(body.get("budget", state.config.reasoning_budget)),
        max_revisions=int(body.get("max_revisions", state.config.max_revisions)),
        reflection_enabled=bool(body.get("reflection_enabled", True)),
        per_step_k=state.config.per_step_k,
    )
    run_id = uuid.uuid4().hex[:12]
    job = ReasonJob(run_id=run_id, status="running", trace=TraceLog())
    with state.jobs_lock:
        state.jobs[run_id] = job

    def work() -> None:
        try:
            job.result = run_reasoning(
                Target(informal=informal, formal=formal),
                state.reasoning_env(),
                config,
                trace=job.trace,
            )
            job.status = "done"
        except Exception as exc:
            job.error = str(exc)
            job.status = "error"

    threading.Thread(target=work, name=f"reason-{run_id}", daemon=True).start()
    return {"run_id": run_id}


def job_status(state: AppState, run_id: str) -> dict[str, Any]:
    with state.jobs_lock:
        job = state.jobs.get(run_id)
    if job is None:
        raise KeyError(run_id)
    doc: dict[str, Any] = {"run_id": run_id, "status": job.status}
    if job.status == "error":
        doc["error"] = job.error
    if job.result is not None:
        doc["result"] = {
            "status": job.result.status,
            "winner": job.result.winner,
            "branches": [
                {
                    "branch_id": b.branch_id,
                    "status": b.status,
                    "revision": b.final_sketch.revision if b.final_sketch else None,
                    "judge_calls": len(b.judge_trace),
                }
                for b in job.result.branches
            ],
            "ranking": [
                {"decl_name": e.decl_name, "score": e.score} for e in job.result.ranking.entries
            ],
        }
    return doc


def job_trace(state: AppState, run_id: str) -> list[str]:
    with state.jobs_lock:
        job = state.jobs.get(run_id)
    if job is None:
        raise KeyError(run_id)
    return job.trace.lines()


def decl_detail(state: AppState, name: str) -> dict[str, Any]:
    record = state.snapshot.get(name)
    if record is None:
        raise KeyError(name)
    return {
        "name": record.name,
        "kind": record.kind.label,
        "signature": record.signature,
        "value": record.value,
        "source": {"file": record.source.file, "line": record.source.line},
        "deps": list(record.deps),
        "informal": record.informal,
    }


class _Handler(BaseHTTPRequestHandler):
    state: AppState  # injected by make_server

    def log_message(self, *args) -> None:  # keep test output quiet
        pass

    def _send(self, code: int, payload: Any, content_type: str = "application/json") -> None:
        if content_type == "application/json":
            body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        elif isinstance(payload, bytes):
            body = payload
        else:
            body = str(payload).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _authorized(self) -> bool:
        env_var = self.state.config.bearer_token_env
        if not env_var:
            return True
        expected = os.environ.get(env_var, "")
        return self.headers.get("Authorization", "") == f"Bearer {expected}" and bool(expected)

    def _read_body(self) -> Any:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b"{}"
        try:
            return json.loads(raw.decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise ValueError(f"request body is not valid JSON: {exc}") from exc

    def do_GET(self) -> None:  # noqa: N802 (http.server casing)
        if not self._authorized():
            self._send(401, {"error": "unauthorized"})
            return
        path = self.path.rstrip("/") or "/"
        try:
            if path == "/health":
                self._send(200, {"status": "ok", "corpus_size": len(self.state.snapshot)})
            elif path.startswith("/v1/reason/") and path.endswith("/trace"):
                run_id = path[len("/v1/reason/") : -len("/trace")]
                lines = job_trace(self.state, run_id)
                self._send(200, "\n".join(lines) + ("\n" if lines else ""), "application/x-ndjson")
            elif path.startswith("/v1/reason/"):
                self._send(200, job_status(self.state, path[len("/v1/reason/") :]))
            elif path.startswith("/v1/decl/"):
                self._send(200, decl_detail(self.state, path[len("/v1/decl/") :]))
            elif path == "/ui" or path.startswith("/ui/"):
                self._serve_ui(path)
            else:
                self._send(404, {"error": f"no route {path}"})
        except KeyError as exc:
            self._send(404, {"error": f"not found: {exc}"})
        except Exception as exc:
            self._send(500, {"error": str(exc)})

    def do_POST(self) -> None:  # noqa: N802
        if not self._authorized():
            self._send(401, {"error": "unauthorized"})
            return
        path = self.path.rstrip("/")
        try:
            body = self._read_body()
            if not isinstance(body, dict):
                raise ValueError("request body must be a JSON object")
            if path == "/v1/search":
                self._send(200, handle_search(self.state, body))
            elif path == "/v1/reason":
                self._send(200, start_reason_job(self.state, body))
            else:
                self._send(404, {"error": f"no route {path}"})
        except ValueError as exc:
            self._send(400, {"error": str(exc)})
        except Exception as exc:
            self._send(500, {"error": str(exc)})

    def _serve_ui(self, path: str) -> None:
        ui_dir = self.state.config.ui_dir
        if not ui_dir:
            self._send(404, {"error": "no UI assets configured"})
            return
        rel = path[len("/ui") :].lstrip("/") or "index.html"
        target = (Path(ui_dir) / rel).resolve()
        if not str(target).startswith(str(Path(ui_dir).resolve())) or not target.is_file():
            self._send(404, {"error": "asset not found"})
            return
        suffix = target.suffix.lower()
        content_type = {
            ".html": "text/html; charset=utf-8",
            ".js": "application/javascript",
            ".css": "text/css",
            ".map": "application/json",
        }.get(suffix, "application/octet-stream")
        self._send(200, target.read_bytes(), content_type)


def make_server(state: AppState, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """Bind a threading HTTP server; port 0 lets the OS pick a free port."""
    handler = type("BoundHandler", (_Handler,), {"state": state})
    return ThreadingHTTPServer((host, port), handler)
