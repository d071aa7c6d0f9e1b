// Typed client for the dbchat HTTP API. The UI never touches knowledge-base
// files or databases directly; every number it shows came over this wire.

import { readSseStream } from "./sse.js";
import type {
  AgentRunResponse,
  ChatResponse,
  ModelView,
  SessionMode,
  StreamEvent,
  Text2SqlResponse,
  ToolView,
} from "./types.js";

export class ApiClient {
  constructor(readonly baseUrl: string) {}

  private async post<T>(path: string, body: unknown): Promise<T> {
    const response = await fetch(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!response.ok) {
      const detail = await response.text().catch(() => "");
      throw new Error(`HTTP ${response.status}: ${detail}`);
    }
    return (await response.json()) as T;
  }

  private async get<T>(path: string): Promise<T> {
    const response = await fetch(`${this.baseUrl}${path}`);
    if (!response.ok) {
      throw new Error(`HTTP ${response.status}`);
    }
    return (await response.json()) as T;
  }

  async health(): Promise<{ status: string; version: string }> {
    return this.get("/api/health");
  }

  async listKbs(): Promise<{ name: string; chunks: number }[]> {
    const body = await this.get<{ kbs: { name: string; chunks: number }[] }>("/api/kb");
    return body.kbs;
  }

  async listModels(): Promise<ModelView[]> {
    const body = await this.get<{ models: ModelView[] }>("/api/models");
    return body.models;
  }

  async createSession(options: {
    mode: SessionMode;
    kb?: string;
    db_id?: string;
    model?: string;
    sql_model?: string;
    role?: string;
  }): Promise<string> {
    const body = await this.post<{ session_id: string }>("/api/sessions", options);
    return body.session_id;
  }

  async chat(sessionId: string, question: string): Promise<ChatResponse> {
    return this.post("/api/chat", {
      session_id: sessionId,
      question,
      stream: false,
    });
  }

  async chatStream(
    sessionId: string,
    question: string,
    onEvent: (event: StreamEvent) => void,
  ): Promise<void> {
    const response = await fetch(`${this.baseUrl}/api/chat`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ session_id: sessionId, question, stream: true }),
    });
    await readSseStream(response, (payload) => onEvent(payload as StreamEvent));
  }

  async text2sql(sessionId: string, question: string): Promise<Text2SqlResponse> {
    return this.post("/api/text2sql", { session_id: sessionId, question });
  }

  async agentRun(sessionId: string, question: string): Promise<AgentRunResponse> {
    return this.post("/api/agent", { session_id: sessionId, question });
  }

  async listTools(sessionId: string): Promise<ToolView[]> {
    const body = await this.get<{ tools: ToolView[] }>(`/api/sessions/${sessionId}/tools`);
    return body.tools;
  }

  async setEnabledTools(sessionId: string, enabled: string[]): Promise<ToolView[]> {
    const body = await this.post<{ tools: ToolView[] }>(
      `/api/sessions/${sessionId}/tools`,
      { enabled },
    );
    return body.tools;
  }

  async ingest(
    kb: string,
    documents: { media_kind: string; body?: string; uri?: string; doc_id?: string }[],
  ): Promise<{ documents: number; chunks: number }> {
    return this.post(`/api/kb/${kb}/ingest`, { documents });
  }
}
