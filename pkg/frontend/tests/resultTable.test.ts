// @vitest-environment jsdom
import { describe, expect, it } from "vitest";

import {
  PAGE_SIZE,
  cellText,
  initialState,
  pageCount,
  renderResultView,
  setPage,
  toggleSort,
  visibleRows,
} from "../src/resultTable.js";

function mount(): HTMLElement {
  const container = document.createElement("div");
  document.body.appendChild(container);
  return container;
}

describe("renderResultView", () => {
  it("renders a single-cell count result", () => {
    const container = mount();
    renderResultView(container, "select count(*) from singer", initialState(["count(*)"], [[30]]));
    expect(container.querySelector(".generated-sql")!.textContent).toBe(
      "select count(*) from singer",
    );
    const cells = container.querySelectorAll("tbody td");
    expect(cells.length).toBe(1);
    expect(cells[0].textContent).toBe("30");
  });

  it("shows the no-rows state", () => {
    const container = mount();
    renderResultView(container, "select * from singer where 1=0", initialState(["name"], []));
    expect(container.querySelector(".no-rows")!.textContent).toBe("no rows");
    expect(container.querySelector("table")).toBeNull();
  });

  it("paginates 1000 rows at 50 per page", () => {
    const rows = Array.from({ length: 1000 }, (_, i) => [i, `row ${i}`]);
    const state = initialState(["id", "label"], rows);
    expect(pageCount(state)).toBe(20);
    const container = mount();
    renderResultView(container, "select *", state);
    expect(container.querySelectorAll("tbody tr").length).toBe(PAGE_SIZE);
    expect(container.querySelector(".page-label")!.textContent).toBe("page 1 / 20");
    expect(container.querySelector("tbody td")!.textContent).toBe("0");

    const page3 = setPage(state, 2);
    renderResultView(container, "select *", page3);
    expect(container.querySelector("tbody td")!.textContent).toBe("100");
  });

  it("pager buttons advance pages", () => {
    const rows = Array.from({ length: 120 }, (_, i) => [i]);
    const container = mount();
    renderResultView(container, "q", initialState(["n"], rows));
    const next = Array.from(container.querySelectorAll("button")).find(
      (b) => b.textContent === "next",
    )!;
    next.click();
    expect(container.querySelector(".page-label")!.textContent).toBe("page 2 / 3");
    expect(container.querySelector("tbody td")!.textContent).toBe("50");
  });

  it("sorts numerically and toggles direction on header click", () => {
    const rows = [
      ["b", 2],
      ["a", 10],
      ["c", 1],
    ];
    const container = mount();
    renderResultView(container, "q", initialState(["name", "n"], rows));
    const headers = container.querySelectorAll("th");
    (headers[1] as HTMLElement).click();
    let firstColumn = Array.from(container.querySelectorAll("tbody tr td:last-child")).map(
      (td) => td.textContent,
    );
    expect(firstColumn).toEqual(["1", "2", "10"]); // numeric, not lexicographic

    container.querySelectorAll("th")[1].dispatchEvent(new MouseEvent("click", { bubbles: true }));
    firstColumn = Array.from(container.querySelectorAll("tbody tr td:last-child")).map(
      (td) => td.textContent,
    );
    expect(firstColumn).toEqual(["10", "2", "1"]);
  });

  it("renders NULL for null cells", () => {
    expect(cellText(null)).toBe("NULL");
    const container = mount();
    renderResultView(container, "q", initialState(["x"], [[null]]));
    expect(container.querySelector("tbody td")!.textContent).toBe("NULL");
  });

  it("sorting is a permutation of the same cell values", () => {
    const rows = Array.from({ length: 30 }, (_, i) => [(i * 7) % 30, `v${i}`]);
    const state = initialState(["n", "v"], rows);
    const before = visibleRows(state).map((r) => r.join("|")).sort();
    const after = visibleRows(toggleSort(state, 0)).map((r) => r.join("|")).sort();
    expect(after).toEqual(before);
  });
});
