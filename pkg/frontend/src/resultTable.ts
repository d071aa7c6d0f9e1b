// SQL result view: the generated query alongside a sortable table paginated
// at 50 rows per page. Cells render exactly what the service sent; sorting
// and paging only reorder and window the same values.

export const PAGE_SIZE = 50;

export type Cell = string | number | null;

export interface ResultTableState {
  columns: string[];
  rows: Cell[][];
  page: number;
  sortColumn: number | null;
  sortAscending: boolean;
}

export function initialState(columns: string[], rows: Cell[][]): ResultTableState {
  return { columns, rows, page: 0, sortColumn: null, sortAscending: true };
}

export function cellText(cell: Cell): string {
  return cell === null ? "NULL" : String(cell);
}

function compareCells(a: Cell, b: Cell): number {
  if (a === null && b === null) return 0;
  if (a === null) return -1;
  if (b === null) return 1;
  if (typeof a === "number" && typeof b === "number") return a - b;
  return String(a) < String(b) ? -1 : String(a) > String(b) ? 1 : 0;
}

export function visibleRows(state: ResultTableState): Cell[][] {
  let rows = state.rows;
  if (state.sortColumn !== null) {
    const column = state.sortColumn;
    const direction = state.sortAscending ? 1 : -1;
    rows = [...rows].sort((x, y) => direction * compareCells(x[column], y[column]));
  }
  const start = state.page * PAGE_SIZE;
  return rows.slice(start, start + PAGE_SIZE);
}

export function pageCount(state: ResultTableState): number {
  return Math.max(1, Math.ceil(state.rows.length / PAGE_SIZE));
}

export function toggleSort(state: ResultTableState, column: number): ResultTableState {
  const ascending = state.sortColumn === column ? !state.sortAscending : true;
  return { ...state, sortColumn: column, sortAscending: ascending, page: 0 };
}

export function setPage(state: ResultTableState, page: number): ResultTableState {
  const clamped = Math.min(Math.max(0, page), pageCount(state) - 1);
  return { ...state, page: clamped };
}

export function renderResultView(
  container: HTMLElement,
  sql: string,
  state: ResultTableState,
  onStateChange?: (next: ResultTableState) => void,
): void {
  container.textContent = "";

  const sqlBlock = document.createElement("pre");
  sqlBlock.className = "generated-sql";
  sqlBlock.textContent = sql;
  container.appendChild(sqlBlock);

  if (state.rows.length === 0) {
    const empty = document.createElement("div");
    empty.className = "no-rows";
    empty.textContent = "no rows";
    container.appendChild(empty);
    return;
  }

  const table = document.createElement("table");
  table.className = "result-table";
  const thead = document.createElement("thead");
  const headRow = document.createElement("tr");
  state.columns.forEach((name, index) => {
    const th = document.createElement("th");
    th.textContent = name;
    if (state.sortColumn === index) {
      th.dataset.sorted = state.sortAscending ? "asc" : "desc";
    }
    th.addEventListener("click", () => {
      const next = toggleSort(state, index);
      onStateChange?.(next);
      renderResultView(container, sql, next, onStateChange);
    });
    headRow.appendChild(th);
  });
  thead.appendChild(headRow);
  table.appendChild(thead);

  const tbody = document.createElement("tbody");
  for (const row of visibleRows(state)) {
    const tr = document.createElement("tr");
    for (const cell of row) {
      const td = document.createElement("td");
      td.textContent = cellText(cell);
      tr.appendChild(td);
    }
    tbody.appendChild(tr);
  }
  table.appendChild(tbody);
  container.appendChild(table);

  const pages = pageCount(state);
  if (pages > 1) {
    const pager = document.createElement("div");
    pager.className = "pager";
    const prev = document.createElement("button");
    prev.textContent = "prev";
    prev.disabled = state.page === 0;
    const label = document.createElement("span");
    label.className = "page-label";
    label.textContent = `page ${state.page + 1} / ${pages}`;
    const next = document.createElement("button");
    next.textContent = "next";
    next.disabled = state.page >= pages - 1;
    prev.addEventListener("click", () => {
      const nextState = setPage(state, state.page - 1);
      onStateChange?.(nextState);
      renderResultView(container, sql, nextState, onStateChange);
    });
    next.addEventListener("click", () => {
      const nextState = setPage(state, state.page + 1);
      onStateChange?.(nextState);
      renderResultView(container, sql, nextState, onStateChange);
    });
    pager.appendChild(prev);
    pager.appendChild(label);
    pager.appendChild(next);
    container.appendChild(pager);
  }
}
