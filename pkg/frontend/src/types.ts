export interface Citation {
  doc_id: string;
  chunk_index: number;
  text: string;
  score: number;
  retriever_kind: string;
}

export type StreamEvent =
  | { type: "token"; seq: number; content: string }
  | { type: "citations"; citations: Citation[] }
  | { type: "done" }
  | { type: "error"; message: string };

export interface ChatResponse {
  v: number;
  session_id: string;
  answer: string;
  citations: Citation[];
}

export interface Text2SqlResponse {
  v: number;
  session_id: string;
  sql: string;
  columns: string[];
  rows: (string | number | null)[][];
  row_count: number;
  truncated: boolean;
}

export interface ModelView {
  model_name: string;
  worker_address: string;
  capabilities: string[];
  status: string;
}

export interface ToolView {
  tool_id: string;
  description: string;
  enabled: boolean;
}

export interface AgentStepView {
  index: number;
  thought: string;
  action: string;
  action_input: string;
  observation: string;
}

export interface AgentRunResponse {
  v: number;
  session_id: string;
  answer: string;
  complete: boolean;
  transcript: AgentStepView[];
}

export type SessionMode = "rag_qa" | "text2sql" | "agent";
