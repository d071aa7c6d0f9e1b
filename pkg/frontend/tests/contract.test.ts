// @vitest-environment jsdom
//
// Contract tests against recorded service fixtures: the UI shows exactly the
// values the service sent: every displayed number/string must originate
// from the response body, with no client-side computation beyond
// presentation (ordering/windowing).

import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { citationCards, renderCitations } from "../src/chatView.js";
import { cellText, initialState, renderResultView, toggleSort } from "../src/resultTable.js";
import type { ChatResponse, Text2SqlResponse } from "../src/types.js";

function loadFixture<T>(name: string): T {
  const raw = readFileSync(join(__dirname, "fixtures", name), "utf-8");
  return JSON.parse(raw) as T;
}

describe("recorded text2sql responses", () => {
  it("single-cell count: cell content equals the service value byte for byte", () => {
    const fixture = loadFixture<Text2SqlResponse>("text2sql_count.json");
    const container = document.createElement("div");
    document.body.appendChild(container);
    renderResultView(container, fixture.sql, initialState(fixture.columns, fixture.rows));
    expect(container.querySelector(".generated-sql")!.textContent).toBe(fixture.sql);
    const cells = Array.from(container.querySelectorAll("tbody td"));
    expect(cells.length).toBe(fixture.rows.length * fixture.columns.length);
    expect(cells[0].textContent).toBe(cellText(fixture.rows[0][0]));
    expect(cells[0].textContent).toBe("30");
  });

  it("wide result: every DOM cell comes verbatim from the response", () => {
    const fixture = loadFixture<Text2SqlResponse>("text2sql_wide.json");
    const container = document.createElement("div");
    document.body.appendChild(container);
    renderResultView(container, fixture.sql, initialState(fixture.columns, fixture.rows));

    const headers = Array.from(container.querySelectorAll("th")).map((th) => th.textContent);
    expect(headers).toEqual(fixture.columns);

    const rows = Array.from(container.querySelectorAll("tbody tr"));
    expect(rows.length).toBe(fixture.rows.length); // 30 rows, single page
    rows.forEach((tr, r) => {
      const cells = Array.from(tr.querySelectorAll("td"));
      cells.forEach((td, c) => {
        expect(td.textContent).toBe(cellText(fixture.rows[r][c]));
      });
    });
  });

  it("sorting shows only values present in the response", () => {
    const fixture = loadFixture<Text2SqlResponse>("text2sql_wide.json");
    const container = document.createElement("div");
    document.body.appendChild(container);
    const sorted = toggleSort(initialState(fixture.columns, fixture.rows), 1);
    renderResultView(container, fixture.sql, sorted);
    const shown = Array.from(container.querySelectorAll("tbody td")).map(
      (td) => td.textContent,
    );
    const allowed = new Set(fixture.rows.flat().map(cellText));
    for (const value of shown) {
      expect(allowed.has(value!)).toBe(true);
    }
  });
});

describe("recorded chat response", () => {
  it("citation cards mirror the service citations exactly", () => {
    const fixture = loadFixture<ChatResponse>("chat_response.json");
    expect(fixture.citations.length).toBe(4); // J = 4 in the recording config
    const container = document.createElement("div");
    document.body.appendChild(container);
    renderCitations(container, fixture.citations);
    const cards = citationCards(container);
    expect(cards.length).toBe(fixture.citations.length);
    cards.forEach((card, i) => {
      const citation = fixture.citations[i];
      expect(card.querySelector(".citation-text")!.textContent).toBe(citation.text);
      expect(card.querySelector(".citation-head")!.textContent).toContain(citation.doc_id);
      expect(card.querySelector(".citation-head")!.textContent).toContain(
        citation.score.toFixed(4),
      );
    });
  });
});
