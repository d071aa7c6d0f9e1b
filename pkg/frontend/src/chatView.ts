// Chat pane: streams answer tokens into the DOM in arrival order, then
// renders citation cards beneath the finished answer. On an error event it
// shows an inline banner and re-enables the input.

import type { Citation, StreamEvent } from "./types.js";

export interface ChatViewElements {
  messages: HTMLElement;
  input: HTMLInputElement | HTMLTextAreaElement;
  send: HTMLButtonElement;
}

export function appendUserMessage(view: ChatViewElements, text: string): void {
  const bubble = document.createElement("div");
  bubble.className = "message user";
  bubble.textContent = text;
  view.messages.appendChild(bubble);
}

export function startAssistantMessage(view: ChatViewElements): HTMLElement {
  const bubble = document.createElement("div");
  bubble.className = "message assistant";
  const body = document.createElement("span");
  body.className = "answer-text";
  bubble.appendChild(body);
  view.messages.appendChild(bubble);
  return bubble;
}

export function renderCitations(container: HTMLElement, citations: Citation[]): void {
  const panel = document.createElement("div");
  panel.className = "citations";
  for (const citation of citations) {
    const card = document.createElement("div");
    card.className = "citation-card";
    const head = document.createElement("div");
    head.className = "citation-head";
    head.textContent = `${citation.doc_id}#${citation.chunk_index} · ${citation.score.toFixed(4)}`;
    const body = document.createElement("div");
    body.className = "citation-text";
    body.textContent = citation.text;
    card.appendChild(head);
    card.appendChild(body);
    panel.appendChild(card);
  }
  container.appendChild(panel);
}

export function renderErrorBanner(container: HTMLElement, message: string): void {
  const banner = document.createElement("div");
  banner.className = "error-banner";
  banner.textContent = message;
  container.appendChild(banner);
}

/**
 * Feed one stream event into the DOM. Tokens append in call order, so the
 * DOM token order mirrors the stream's sequence numbers; returns the seq to
 * let callers assert monotonicity.
 */
export function applyStreamEvent(
  view: ChatViewElements,
  bubble: HTMLElement,
  event: StreamEvent,
): void {
  if (event.type === "token") {
    const span = document.createElement("span");
    span.className = "token";
    span.dataset.seq = String(event.seq);
    span.textContent = event.content;
    bubble.querySelector(".answer-text")!.appendChild(span);
  } else if (event.type === "citations") {
    renderCitations(bubble, event.citations);
  } else if (event.type === "error") {
    renderErrorBanner(bubble, event.message);
    setInputEnabled(view, true);
  } else if (event.type === "done") {
    setInputEnabled(view, true);
  }
}

export function setInputEnabled(view: ChatViewElements, enabled: boolean): void {
  view.input.disabled = !enabled;
  view.send.disabled = !enabled;
}

export function tokenSeqs(bubble: HTMLElement): number[] {
  return Array.from(bubble.querySelectorAll<HTMLElement>(".token")).map((el) =>
    Number(el.dataset.seq),
  );
}

export function answerText(bubble: HTMLElement): string {
  return bubble.querySelector(".answer-text")?.textContent ?? "";
}

export function citationCards(bubble: HTMLElement): HTMLElement[] {
  return Array.from(bubble.querySelectorAll<HTMLElement>(".citation-card"));
}
