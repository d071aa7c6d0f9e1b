// Client-side session state: one in-flight stream per session; further
// questions queue until the active stream settles.

import type { SessionMode } from "./types.js";

export interface UiSession {
  sessionId: string;
  mode: SessionMode;
  streaming: boolean;
  queue: string[];
  citationsPanelOpen: boolean;
}

export function newUiSession(sessionId: string, mode: SessionMode): UiSession {
  return { sessionId, mode, streaming: false, queue: [], citationsPanelOpen: true };
}

/** Ask to start a stream; returns true when the caller may proceed now. */
export function beginStream(session: UiSession, question: string): boolean {
  if (session.streaming) {
    session.queue.push(question);
    return false;
  }
  session.streaming = true;
  return true;
}

/** Settle the active stream; returns the next queued question, if any. */
export function endStream(session: UiSession): string | undefined {
  session.streaming = false;
  return session.queue.shift();
}
