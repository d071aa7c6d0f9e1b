// @vitest-environment jsdom
import { describe, expect, it } from "vitest";

import {
  answerText,
  appendUserMessage,
  applyStreamEvent,
  ChatViewElements,
  citationCards,
  setInputEnabled,
  startAssistantMessage,
  tokenSeqs,
} from "../src/chatView.js";
import type { Citation, StreamEvent } from "../src/types.js";

function makeView(): ChatViewElements {
  const messages = document.createElement("div");
  const input = document.createElement("input");
  const send = document.createElement("button");
  document.body.append(messages, input, send);
  return { messages, input, send };
}

function citation(i: number): Citation {
  return {
    doc_id: `doc${i}`,
    chunk_index: 0,
    text: `context text ${i}`,
    score: 1 - i / 10,
    retriever_kind: "embedding",
  };
}

describe("chat view", () => {
  it("appends tokens in stream order; DOM order matches sequence numbers", () => {
    const view = makeView();
    const bubble = startAssistantMessage(view);
    const events: StreamEvent[] = [
      { type: "token", seq: 1, content: "Hello " },
      { type: "token", seq: 2, content: "from " },
      { type: "token", seq: 3, content: "the stream" },
      { type: "done" },
    ];
    for (const event of events) applyStreamEvent(view, bubble, event);
    expect(tokenSeqs(bubble)).toEqual([1, 2, 3]);
    expect(answerText(bubble)).toBe("Hello from the stream");
  });

  it("renders one citation card per citation after the answer", () => {
    const view = makeView();
    const bubble = startAssistantMessage(view);
    applyStreamEvent(view, bubble, { type: "token", seq: 1, content: "answer" });
    applyStreamEvent(view, bubble, {
      type: "citations",
      citations: [citation(1), citation(2), citation(3), citation(4)],
    });
    const cards = citationCards(bubble);
    expect(cards.length).toBe(4);
    // citations appear after the answer text in document order
    const answer = bubble.querySelector(".answer-text")!;
    expect(answer.compareDocumentPosition(cards[0]) & Node.DOCUMENT_POSITION_FOLLOWING).toBeTruthy();
    expect(cards[0].textContent).toContain("context text 1");
    expect(cards[0].textContent).toContain("doc1#0");
  });

  it("shows an inline error banner and re-enables input", () => {
    const view = makeView();
    const bubble = startAssistantMessage(view);
    setInputEnabled(view, false);
    expect(view.input.disabled).toBe(true);
    applyStreamEvent(view, bubble, { type: "error", message: "backend exploded" });
    const banner = bubble.querySelector(".error-banner")!;
    expect(banner.textContent).toBe("backend exploded");
    expect(view.input.disabled).toBe(false);
    expect(view.send.disabled).toBe(false);
  });

  it("user messages render verbatim", () => {
    const view = makeView();
    appendUserMessage(view, "what about <script>alert(1)</script>?");
    const bubble = view.messages.querySelector(".message.user")!;
    expect(bubble.textContent).toBe("what about <script>alert(1)</script>?");
    expect(bubble.querySelector("script")).toBeNull(); // textContent, not innerHTML
  });

  it("done event re-enables input", () => {
    const view = makeView();
    const bubble = startAssistantMessage(view);
    setInputEnabled(view, false);
    applyStreamEvent(view, bubble, { type: "done" });
    expect(view.input.disabled).toBe(false);
  });
});
