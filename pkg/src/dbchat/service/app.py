"""FastAPI application binding knowledge bases, chat, text-to-SQL, the
serving gateway, and the agent loop behind one HTTP surface.

Handlers that do blocking work (disk, SQLite, model completion through the
gateway's synchronous client) are plain functions so they run on the
threadpool; streaming endpoints hand an async generator to the event loop.
"""

import json
import threading
import uuid
from dataclasses import dataclass, field, replace
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, StreamingResponse

from .. import __version__
from .. import ingest as ingest_mod
from .. import kb as kb_mod
from .. import retrieval as retrieval_mod
from .. import text2sql as t2s
from ..agents import RuleAgentBackend, builtin_tools, load_role_specs, run_agent
from ..config import AppConfig
from ..encoder import HashEmbedder, load_embedder
from ..errors import (
    DbChatError,
    DuplicateChunkError,
    DuplicateWorkerError,
    MissingDatabaseError,
    OfflineViolationError,
    UnknownModelError,
    UnknownToolError,
    UnknownWorkerError,
)
from ..promptgen import default_registry, load_mask_rules, mask_pii, render_prompt, select_contexts
from ..smmf import (
    ChatMessage,
    ChatRequest,
    EchoBackend,
    Gateway,
    MockBackend,
    ModelController,
    StaticBackend,
    format_bench_table,
    run_bench_async,
)
from ..smmf.gateway import GatewayCompletionClient
from ..textnorm import detect_language
from . import schemas as s

_ERROR_STATUS = {
    UnknownModelError: 404,
    UnknownWorkerError: 404,
    MissingDatabaseError: 404,
    UnknownToolError: 404,
    DuplicateWorkerError: 409,
    DuplicateChunkError: 409,
    OfflineViolationError: 403,
}


@dataclass
class ChatSession:
    session_id: str
    mode: str
    kb_name: str | None = None
    db_id: str | None = None
    model: str = "mock-echo"
    sql_model: str | None = None
    role_name: str | None = None
    history: list[tuple[str, str]] = field(default_factory=list)
    enabled_tools: set[str] | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)


class ServiceState:
    def __init__(self, config: AppConfig):
        config.validate()
        self.config = config
        self.controller = ModelController()
        self.gateway = Gateway(self.controller)
        self.embedder = (
            load_embedder(config.encoder_weights_path)
            if config.encoder_weights_path
            else HashEmbedder()
        )
        self.templates = default_registry()
        self.mask_rules = load_mask_rules(config.mask_rules_path)
        self.roles = load_role_specs()
        self.kbs: dict[str, kb_mod.KnowledgeBase] = {}
        self.sessions: dict[str, ChatSession] = {}
        self._lock = threading.Lock()
        if config.mock_workers:
            self.gateway.add_local_worker("mock-echo", EchoBackend())
            self.gateway.add_local_worker("mock-timed", MockBackend(50, 10, 256))
            self.gateway.add_local_worker("mock-sql", StaticBackend("select count(*) from singer"))
            self.gateway.add_local_worker("mock-agent", RuleAgentBackend())

    def kb_path(self, name: str) -> Path:
        return Path(self.config.kb_root) / f"{name}.kb"

    def get_kb(self, name: str) -> kb_mod.KnowledgeBase:
        with self._lock:
            loaded = self.kbs.get(name)
        if loaded is not None:
            return loaded
        path = self.kb_path(name)
        if not path.exists():
            raise HTTPException(404, f"unknown knowledge base: {name}")
        loaded = kb_mod.load(path)
        with self._lock:
            self.kbs[name] = loaded
        return loaded

    def get_or_create_kb(self, name: str) -> kb_mod.KnowledgeBase:
        try:
            return self.get_kb(name)
        except HTTPException:
            fresh = kb_mod.KnowledgeBase(name, self.embedder.dimension)
            with self._lock:
                self.kbs[name] = fresh
            return fresh

    def get_session(self, session_id: str) -> ChatSession:
        session = self.sessions.get(session_id)
        if session is None:
            raise HTTPException(404, f"unknown session: {session_id}")
        return session

    def resolve_db(self, db_id: str) -> Path:
        root = Path(self.config.db_root)
        for candidate in (
            root / f"{db_id}.db",
            root / f"{db_id}.sqlite",
            root / db_id / f"{db_id}.sqlite",
            root / db_id / f"{db_id}.db",
        ):
            if candidate.exists():
                return candidate
        raise MissingDatabaseError(f"no database for db_id {db_id!r} under {root}")

    def completion_client(self, model: str) -> GatewayCompletionClient:
        return GatewayCompletionClient(self.gateway, model)

    def ensure_model(self, model: str) -> None:
        """Fail fast (before any stream starts) when no healthy worker serves a model."""
        self.gateway.touch_local_workers(model)
        if not self.controller.healthy_workers(model, "chat"):
            raise UnknownModelError(f"no healthy worker serves model {model!r}")

    def session_registry(self, session: ChatSession):
        db_path = self.resolve_db(session.db_id) if session.db_id else None
        kb = self.get_kb(session.kb_name) if session.kb_name else None
        sql_backend = self.completion_client(session.sql_model or session.model)
        return builtin_tools(
            db_path=db_path,
            kb=kb,
            embedder=self.embedder,
            retrieval_k=self.config.retrieval_k,
            sql_backend=sql_backend,
            web_fixtures_path=self.config.web_search_fixtures,
            offline=self.config.offline,
            live_search_url=self.config.web_search_live_url,
        )


def _citations(contexts) -> list[s.Citation]:
    return [
        s.Citation(
            doc_id=c.chunk_key.doc_id,
            chunk_index=c.chunk_key.chunk_index,
            text=c.text,
            score=c.score,
            retriever_kind=c.retriever_kind,
        )
        for c in contexts
    ]


def _sse(payload: dict) -> str:
    return f"data: {json.dumps(payload, ensure_ascii=False)}\n\n"


def _json_cell(value):
    return value.hex() if isinstance(value, bytes) else value


def create_app(config: AppConfig | None = None) -> FastAPI:
    import asyncio
    from contextlib import asynccontextmanager

    state = ServiceState(config or AppConfig())

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        # keep in-process workers healthy in the registry while the service runs
        async def beat():
            while True:
                state.gateway.touch_local_workers()
                await asyncio.sleep(state.controller.heartbeat_window_s / 4)

        task = asyncio.create_task(beat())
        try:
            yield
        finally:
            task.cancel()

    app = FastAPI(title="dbchat", version=__version__, lifespan=lifespan)
    app.state.service = state

    @app.exception_handler(DbChatError)
    async def dbchat_error_handler(_request: Request, exc: DbChatError):
        status = next(
            (code for klass, code in _ERROR_STATUS.items() if isinstance(exc, klass)), 400
        )
        body = s.ErrorBody(error=str(exc), kind=type(exc).__name__)
        return JSONResponse(status_code=status, content=body.model_dump())

    @app.get("/api/health", response_model=s.Health)
    def health():
        return s.Health(version=__version__)

    # --- knowledge base ---

    @app.get("/api/kb", response_model=s.KbListResponse)
    def list_kbs():
        infos: dict[str, s.KbInfo] = {}
        root = Path(state.config.kb_root)
        if root.exists():
            for path in sorted(root.glob("*.kb")):
                header = kb_mod.read_header(path)
                infos[header.name] = s.KbInfo(
                    name=header.name, chunks=header.chunk_count, dimension=header.dimension
                )
        with state._lock:
            loaded = dict(state.kbs)
        for name, kb in loaded.items():
            infos[name] = s.KbInfo(
                name=name, chunks=len(kb), dimension=kb.dimension, terms=kb.term_count
            )
        return s.KbListResponse(kbs=[infos[k] for k in sorted(infos)])

    @app.post("/api/kb/{name}/ingest", response_model=s.IngestResponse)
    def ingest_kb(name: str, body: s.IngestRequest):
        window = body.window or state.config.window
        overlap = body.overlap if body.overlap is not None else state.config.overlap
        documents = []
        for doc in body.documents:
            if doc.body is not None:
                documents.append(
                    ingest_mod.document_from_text(
                        doc.body,
                        doc.media_kind,
                        source_uri=doc.uri or f"inline:{uuid.uuid4().hex[:8]}",
                        doc_id=doc.doc_id,
                    )
                )
            elif doc.uri is not None:
                documents.append(ingest_mod.load_document(doc.uri, doc.media_kind, doc_id=doc.doc_id))
            else:
                raise HTTPException(422, "each document needs a uri or an inline body")
        kb = state.get_or_create_kb(name)
        chunks = []
        for doc in documents:
            chunks.extend(
                ingest_mod.split_document(
                    doc, window, overlap, snap_to_whitespace=state.config.snap_to_whitespace
                )
            )
        kb_mod.index_chunks(kb, chunks, state.embedder)
        state.kb_path(name).parent.mkdir(parents=True, exist_ok=True)
        kb_mod.save(kb, state.kb_path(name))
        return s.IngestResponse(kb=name, documents=len(documents), chunks=len(chunks))

    @app.post("/api/query", response_model=s.QueryResponse)
    def query_kb(body: s.QueryRequest):
        kb = state.get_kb(body.kb)
        contexts = retrieval_mod.retrieve(
            kb,
            body.query,
            body.k or state.config.retrieval_k,
            body.retriever,
            embedder=state.embedder,
        )
        return s.QueryResponse(contexts=_citations(contexts))

    # --- sessions ---

    @app.post("/api/sessions", response_model=s.SessionCreateResponse)
    def create_session(body: s.SessionCreateRequest):
        session = ChatSession(
            session_id=uuid.uuid4().hex,
            mode=body.mode,
            kb_name=body.kb,
            db_id=body.db_id,
            model=body.model or state.config.default_model,
            sql_model=body.sql_model,
            role_name=body.role,
        )
        with state._lock:
            state.sessions[session.session_id] = session
        return s.SessionCreateResponse(
            session_id=session.session_id, mode=session.mode, model=session.model
        )

    @app.get("/api/sessions/{session_id}/tools", response_model=s.ToolsResponse)
    def list_session_tools(session_id: str):
        session = state.get_session(session_id)
        registry = state.session_registry(session)
        enabled = session.enabled_tools
        return s.ToolsResponse(
            session_id=session_id,
            tools=[
                s.ToolView(
                    tool_id=t.tool_id,
                    description=t.description,
                    enabled=enabled is None or t.tool_id in enabled,
                )
                for t in registry.list_tools()
            ],
        )

    @app.post("/api/sessions/{session_id}/tools", response_model=s.ToolsResponse)
    def toggle_session_tools(session_id: str, body: s.ToolToggleRequest):
        session = state.get_session(session_id)
        registry = state.session_registry(session)
        known = {t.tool_id for t in registry.list_tools()}
        unknown = set(body.enabled) - known
        if unknown:
            raise UnknownToolError(f"unknown tools: {sorted(unknown)}")
        with session.lock:
            session.enabled_tools = set(body.enabled)
        return list_session_tools(session_id)

    # --- chat ---

    def _rag_prompt(session: ChatSession, question: str):
        kb = state.get_kb(session.kb_name) if session.kb_name else None
        if kb is None:
            raise HTTPException(409, "rag_qa session has no knowledge base bound")
        contexts = retrieval_mod.embedding_retrieve(
            kb, question, state.config.retrieval_k, state.embedder
        )
        selected = select_contexts(contexts, state.config.prompt_j)
        masked_contexts = [
            replace(c, text=mask_pii(c.text, state.mask_rules).text) for c in selected
        ]
        masked_question = mask_pii(question, state.mask_rules).text
        template = state.templates.get(detect_language(question), "rag_qa")
        prompt = render_prompt(template, masked_contexts, masked_question)
        return prompt, selected

    def _agent_answer(session: ChatSession, question: str) -> tuple[str, bool, list]:
        role = state.roles.get(session.role_name or "data_analyst")
        if role is None:
            raise HTTPException(404, f"unknown role: {session.role_name}")
        registry = state.session_registry(session)
        if session.enabled_tools is not None:
            role = replace(
                role,
                allowed_tools=tuple(
                    t for t in role.allowed_tools if t in session.enabled_tools
                ),
            )
        backend = state.completion_client(session.model)
        episode = run_agent(
            question,
            role,
            backend,
            registry,
            step_budget=state.config.agent_step_budget,
            masking=state.config.agent_masking,
            mask_rules=state.mask_rules,
        )
        return episode.answer, episode.complete, episode.steps

    @app.post("/api/chat")
    def chat(body: s.ChatRequestBody):
        session = state.get_session(body.session_id)
        question = body.question
        if session.mode == "rag_qa":
            state.ensure_model(session.model)
            prompt, selected = _rag_prompt(session, question)
            request = ChatRequest(
                session.model, [ChatMessage("user", prompt)], max_tokens=1024
            )
            if body.stream:
                async def sse_stream():
                    answer_parts: list[str] = []
                    failed = False
                    async for chunk in state.gateway.route_chat(request):
                        if chunk.error:
                            yield _sse({"type": "error", "message": chunk.error})
                            failed = True
                            break
                        answer_parts.append(chunk.text)
                        yield _sse({"type": "token", "seq": chunk.seq, "content": chunk.text})
                    if not failed:
                        yield _sse(
                            {
                                "type": "citations",
                                "citations": [c.model_dump() for c in _citations(selected)],
                            }
                        )
                        yield _sse({"type": "done"})
                        with session.lock:
                            session.history.append(("user", question))
                            session.history.append(("assistant", "".join(answer_parts)))
                    yield "data: [DONE]\n\n"

                return StreamingResponse(sse_stream(), media_type="text/event-stream")
            answer = state.completion_client(session.model).complete(prompt)
            with session.lock:
                session.history.append(("user", question))
                session.history.append(("assistant", answer))
            return s.ChatResponseBody(
                session_id=session.session_id, answer=answer, citations=_citations(selected)
            )
        if session.mode == "agent":
            answer, _complete, _steps = _agent_answer(session, question)
            with session.lock:
                session.history.append(("user", question))
                session.history.append(("assistant", answer))
            return s.ChatResponseBody(session_id=session.session_id, answer=answer)
        # text2sql chat: answer is the SQL plus a rendered result
        response = _text2sql_response(session, question)
        answer = f"{response.sql}\n\n" + json.dumps(response.rows, ensure_ascii=False)
        with session.lock:
            session.history.append(("user", question))
            session.history.append(("assistant", answer))
        return s.ChatResponseBody(session_id=session.session_id, answer=answer)

    # --- text-to-SQL ---

    def _text2sql_response(session: ChatSession, question: str) -> s.Text2SqlResponse:
        if not session.db_id:
            raise HTTPException(409, "text2sql session has no database bound")
        db_path = state.resolve_db(session.db_id)
        conn = t2s.open_readonly(db_path)
        try:
            sd = t2s.analyze_schema(conn, db_id=session.db_id)
            masked_question = mask_pii(question, state.mask_rules).text
            sql = t2s.generate_sql(
                sd, masked_question, state.completion_client(session.sql_model or session.model)
            )
            result = t2s.execute_sql(conn, sql)
        finally:
            conn.close()
        return s.Text2SqlResponse(
            session_id=session.session_id,
            sql=sql,
            columns=result.columns,
            rows=[[_json_cell(c) for c in row] for row in result.rows],
            row_count=len(result.rows),
            truncated=result.truncated,
        )

    @app.post("/api/text2sql", response_model=s.Text2SqlResponse)
    def text2sql_endpoint(body: s.Text2SqlRequest):
        session = state.get_session(body.session_id)
        response = _text2sql_response(session, body.question)
        with session.lock:
            session.history.append(("user", body.question))
            session.history.append(("assistant", response.sql))
        return response

    # --- agent ---

    @app.post("/api/agent", response_model=s.AgentRunResponse)
    def agent_run(body: s.AgentRunRequest):
        session = state.get_session(body.session_id)
        answer, complete, steps = _agent_answer(session, body.question)
        with session.lock:
            session.history.append(("user", body.question))
            session.history.append(("assistant", answer))
        return s.AgentRunResponse(
            session_id=session.session_id,
            answer=answer,
            complete=complete,
            transcript=[
                s.AgentStepView(
                    index=st.index,
                    thought=st.thought,
                    action=st.action,
                    action_input=st.action_input,
                    observation=st.observation,
                )
                for st in steps
            ],
        )

    # --- serving gateway ---

    @app.get("/api/models", response_model=s.ModelsResponse)
    def list_models():
        return s.ModelsResponse(
            models=[
                s.ModelView(
                    model_name=v.model_name,
                    worker_address=v.worker_address,
                    capabilities=list(v.capabilities),
                    status=v.status,
                )
                for v in state.controller.list_models()
            ]
        )

    @app.post("/api/workers/register", response_model=s.AckResponse)
    def register_worker(body: s.RegisterWorkerRequest):
        state.gateway.add_remote_worker(
            body.model_name,
            body.worker_address,
            capabilities=tuple(body.capabilities),
            offline=state.config.offline,
        )
        return s.AckResponse()

    @app.post("/api/workers/heartbeat", response_model=s.AckResponse)
    def worker_heartbeat(body: s.HeartbeatRequest):
        state.controller.heartbeat(body.model_name, body.worker_address)
        return s.AckResponse()

    @app.post("/v1/chat/completions")
    async def chat_completions(body: s.ChatCompletionRequest):
        state.ensure_model(body.model)
        request = ChatRequest(
            body.model,
            [ChatMessage(m.role, m.content) for m in body.messages],
            max_tokens=body.max_tokens,
        )
        if body.stream:
            async def sse_stream():
                async for chunk in state.gateway.route_chat(request):
                    if chunk.error:
                        yield _sse({"v": 1, "id": request.request_id, "error": chunk.error})
                        break
                    yield _sse(
                        {
                            "v": 1,
                            "id": request.request_id,
                            "object": "chat.completion.chunk",
                            "model": body.model,
                            "seq": chunk.seq,
                            "choices": [
                                {
                                    "index": 0,
                                    "delta": {"content": chunk.text},
                                    "finish_reason": "stop" if chunk.is_last else None,
                                }
                            ],
                        }
                    )
                yield "data: [DONE]\n\n"

            return StreamingResponse(sse_stream(), media_type="text/event-stream")
        answer, chunks = await state.gateway.collect_answer(request)
        return {
            "v": 1,
            "id": request.request_id,
            "object": "chat.completion",
            "model": body.model,
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": answer},
                    "finish_reason": "stop",
                }
            ],
            "usage": {"completion_tokens": len(chunks)},
        }

    @app.post("/api/bench", response_model=s.BenchResponse)
    async def bench(body: s.BenchRequest):
        report = await run_bench_async(
            state.gateway,
            body.model,
            body.concurrency,
            body.requests_per_worker,
            prompt_tokens=body.prompt_tokens,
            output_tokens=body.output_tokens,
        )
        return s.BenchResponse(report=report.to_json(), table=format_bench_table(report))

    return app


def serve(config: AppConfig) -> None:
    """Run the service with uvicorn on the configured bind address."""
    import uvicorn

    app = create_app(config)
    host, port = config.gateway_bind.rsplit(":", 1)
    uvicorn.run(app, host=host, port=int(port), log_level="info")
