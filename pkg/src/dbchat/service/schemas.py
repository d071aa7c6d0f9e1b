"""Pydantic request/response models for the HTTP surface.

Every response carries a top-level `v` schema version field.
"""

from typing import Any, Literal

from pydantic import BaseModel, Field

SCHEMA_VERSION = 1


class Health(BaseModel):
    v: int = SCHEMA_VERSION
    status: str = "ok"
    version: str


class ErrorBody(BaseModel):
    v: int = SCHEMA_VERSION
    error: str
    kind: str


# --- knowledge base ---

class KbInfo(BaseModel):
    name: str
    chunks: int
    dimension: int
    terms: int | None = None


class KbListResponse(BaseModel):
    v: int = SCHEMA_VERSION
    kbs: list[KbInfo]


class IngestDocument(BaseModel):
    media_kind: Literal["plain", "markdown", "html", "pdf_text"]
    uri: str | None = None
    body: str | None = None
    doc_id: str | None = None


class IngestRequest(BaseModel):
    v: int = SCHEMA_VERSION
    documents: list[IngestDocument]
    window: int | None = None
    overlap: int | None = None


class IngestResponse(BaseModel):
    v: int = SCHEMA_VERSION
    kb: str
    documents: int
    chunks: int


# --- sessions and chat ---

class SessionCreateRequest(BaseModel):
    v: int = SCHEMA_VERSION
    mode: Literal["rag_qa", "text2sql", "agent"]
    kb: str | None = None
    db_id: str | None = None
    model: str | None = None
    sql_model: str | None = None
    role: str | None = None


class SessionCreateResponse(BaseModel):
    v: int = SCHEMA_VERSION
    session_id: str
    mode: str
    model: str


class ChatRequestBody(BaseModel):
    v: int = SCHEMA_VERSION
    session_id: str
    question: str
    stream: bool = False


class Citation(BaseModel):
    doc_id: str
    chunk_index: int
    text: str
    score: float
    retriever_kind: str


class ChatResponseBody(BaseModel):
    v: int = SCHEMA_VERSION
    session_id: str
    answer: str
    citations: list[Citation] = Field(default_factory=list)


class QueryRequest(BaseModel):
    v: int = SCHEMA_VERSION
    kb: str
    query: str
    retriever: Literal["embedding", "keyword", "graph"] = "embedding"
    k: int | None = None


class QueryResponse(BaseModel):
    v: int = SCHEMA_VERSION
    contexts: list[Citation]


# --- text-to-SQL ---

class Text2SqlRequest(BaseModel):
    v: int = SCHEMA_VERSION
    session_id: str
    question: str


class Text2SqlResponse(BaseModel):
    v: int = SCHEMA_VERSION
    session_id: str
    sql: str
    columns: list[str]
    rows: list[list[Any]]
    row_count: int
    truncated: bool = False


# --- agent ---

class AgentRunRequest(BaseModel):
    v: int = SCHEMA_VERSION
    session_id: str
    question: str


class AgentStepView(BaseModel):
    index: int
    thought: str
    action: str
    action_input: str
    observation: str


class AgentRunResponse(BaseModel):
    v: int = SCHEMA_VERSION
    session_id: str
    answer: str
    complete: bool
    transcript: list[AgentStepView]


class ToolView(BaseModel):
    tool_id: str
    description: str
    enabled: bool


class ToolsResponse(BaseModel):
    v: int = SCHEMA_VERSION
    session_id: str
    tools: list[ToolView]


class ToolToggleRequest(BaseModel):
    v: int = SCHEMA_VERSION
    enabled: list[str]


# --- serving gateway ---

class WireChatMessage(BaseModel):
    role: str
    content: str


class ChatCompletionRequest(BaseModel):
    model: str
    messages: list[WireChatMessage]
    max_tokens: int = 256
    stream: bool = False


class ModelView(BaseModel):
    model_name: str
    worker_address: str
    capabilities: list[str]
    status: str


class ModelsResponse(BaseModel):
    v: int = SCHEMA_VERSION
    models: list[ModelView]


class RegisterWorkerRequest(BaseModel):
    v: int = SCHEMA_VERSION
    model_name: str
    worker_address: str
    capabilities: list[Literal["chat", "embedding"]] = Field(default_factory=lambda: ["chat"])


class HeartbeatRequest(BaseModel):
    v: int = SCHEMA_VERSION
    model_name: str
    worker_address: str


class AckResponse(BaseModel):
    v: int = SCHEMA_VERSION
    ok: bool = True


class BenchRequest(BaseModel):
    v: int = SCHEMA_VERSION
    model: str
    concurrency: int = 1
    requests_per_worker: int = 1
    prompt_tokens: int = 8
    output_tokens: int = 256


class BenchResponse(BaseModel):
    v: int = SCHEMA_VERSION
    report: dict
    table: str
