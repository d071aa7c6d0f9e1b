"""Schema-aware text-to-SQL: introspection, serialization, guarded execution,
execution-accuracy scoring, and fine-tuning corpus export.

The schema serializer emits the sentence grammar used throughout the
fine-tuning corpus: a tables sentence, per-table column and primary-key
sentences, then one sentence per foreign key. Execution accuracy compares
result multisets (order-sensitive only when the gold query has a top-level
ORDER BY) with numeric tolerance 1e-6 and trimmed text cells.
"""

import json
import re
import sqlite3
import time
import uuid
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

from .errors import (
    BackendError,
    EmptyCompletionError,
    MissingDatabaseError,
    MissingSchemaError,
    NonSelectError,
    QueryExecutionError,
    QueryTimeoutError,
    SchemaIntegrityError,
    SqlParseError,
)

DIFFICULTIES = ("easy", "medium", "hard", "extra")

# Reference per-difficulty sizes of the standard cross-domain dev split
# (easy/medium/hard/extra, 1034 questions overall).
SPIDER_DEV_BUCKET_COUNTS = {"easy": 248, "medium": 446, "hard": 174, "extra": 166}


@dataclass
class TableDescription:
    name: str
    columns: list[tuple[str, str]]  # (name, declared type)
    primary_key: list[str]


@dataclass
class ForeignKeyLink:
    table: str
    column: str
    ref_table: str
    ref_column: str


@dataclass
class SchemaDescription:
    db_id: str
    tables: list[TableDescription]
    foreign_keys: list[ForeignKeyLink] = field(default_factory=list)

    def validate(self) -> None:
        """Surface integrity violations: FK endpoints and PK columns must exist."""
        columns = {t.name: {c for c, _ in t.columns} for t in self.tables}
        for t in self.tables:
            for pk in t.primary_key:
                if pk not in columns[t.name]:
                    raise SchemaIntegrityError(
                        f"primary key {pk!r} is not a column of {t.name!r}"
                    )
        for fk in self.foreign_keys:
            for tbl, col in ((fk.table, fk.column), (fk.ref_table, fk.ref_column)):
                if tbl not in columns:
                    raise SchemaIntegrityError(f"foreign key references missing table {tbl!r}")
                if col not in columns[tbl]:
                    raise SchemaIntegrityError(
                        f"foreign key references missing column {tbl}.{col}"
                    )


def schema_to_json(sd: SchemaDescription) -> dict:
    return {
        "db_id": sd.db_id,
        "tables": [
            {"name": t.name, "columns": [list(c) for c in t.columns], "primary_key": t.primary_key}
            for t in sd.tables
        ],
        "foreign_keys": [
            {"table": f.table, "column": f.column, "ref_table": f.ref_table, "ref_column": f.ref_column}
            for f in sd.foreign_keys
        ],
    }


def schema_from_json(obj: dict) -> SchemaDescription:
    return SchemaDescription(
        db_id=obj["db_id"],
        tables=[
            TableDescription(t["name"], [tuple(c) for c in t["columns"]], list(t["primary_key"]))
            for t in obj["tables"]
        ],
        foreign_keys=[
            ForeignKeyLink(f["table"], f["column"], f["ref_table"], f["ref_column"])
            for f in obj.get("foreign_keys", [])
        ],
    )


def load_schema_file(path: str | Path) -> SchemaDescription:
    return schema_from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def analyze_schema(connection: sqlite3.Connection, db_id: str | None = None) -> SchemaDescription:
    """Introspect a live database in catalog (creation) order."""
    rows = connection.execute(
        "SELECT name FROM sqlite_master WHERE type='table' "
        "AND name NOT LIKE 'sqlite_%' ORDER BY rowid"
    ).fetchall()
    tables = []
    foreign_keys = []
    for (table_name,) in rows:
        info = connection.execute(f'PRAGMA table_info("{table_name}")').fetchall()
        columns = [(r[1], r[2]) for r in info]
        pk_cols = sorted((r[5], r[1]) for r in info if r[5] > 0)
        tables.append(TableDescription(table_name, columns, [name for _, name in pk_cols]))
        fks = connection.execute(f'PRAGMA foreign_key_list("{table_name}")').fetchall()
        for fk in sorted(fks, key=lambda r: (r[0], r[1])):
            ref_column = fk[4]
            if ref_column is None:
                # implicit reference to the parent primary key
                parent_info = connection.execute(f'PRAGMA table_info("{fk[2]}")').fetchall()
                parents = [r[1] for r in parent_info if r[5] > 0]
                ref_column = parents[0] if parents else ""
            foreign_keys.append(ForeignKeyLink(table_name, fk[3], fk[2], ref_column))
    return SchemaDescription(db_id or _database_name(connection), tables, foreign_keys)


def _database_name(connection: sqlite3.Connection) -> str:
    for _, name, filename in connection.execute("PRAGMA database_list"):
        if name == "main" and filename:
            return Path(filename).stem
    return "main"


def serialize_schema(sd: SchemaDescription) -> str:
    """Render the schema into the corpus instruction sentence grammar."""
    sentences = [f"{sd.db_id} contains tables such as "
                 f"{', '.join(t.name for t in sd.tables)}."]
    for t in sd.tables:
        sentences.append(
            f"Table {t.name} has columns such as {', '.join(name for name, _ in t.columns)}."
        )
        if t.primary_key:
            sentences.append(f"{', '.join(t.primary_key)} is the primary key.")
    for fk in sd.foreign_keys:
        sentences.append(
            f"The {fk.column} of {fk.table} is the foreign key of "
            f"{fk.ref_column} of {fk.ref_table}."
        )
    return " ".join(sentences)


# --- SQL generation via a model backend ---

_FENCE_RE = re.compile(r"```(?:sql)?\s*\n?(.*?)```", re.DOTALL | re.IGNORECASE)


def extract_sql(completion: str) -> str:
    """First fenced block if present, else the first statement up to ';' or end."""
    m = _FENCE_RE.search(completion)
    body = m.group(1) if m else completion
    statement = body.split(";", 1)[0].strip()
    return statement


def generate_sql(sd: SchemaDescription, question: str, backend) -> str:
    """Prompt a backend with the serialized schema followed by the question."""
    request_id = uuid.uuid4().hex
    prompt = f"{serialize_schema(sd)}\n\n{question}"
    try:
        completion = backend.complete(prompt)
    except Exception as exc:
        raise BackendError(f"backend failed: {exc}", request_id=request_id) from exc
    if not completion or not completion.strip():
        raise EmptyCompletionError("backend returned an empty completion", request_id=request_id)
    sql = extract_sql(completion)
    if not sql:
        raise EmptyCompletionError("no SQL statement in completion", request_id=request_id)
    return sql


# --- guarded execution ---

@dataclass(frozen=True)
class QueryLimits:
    max_rows: int = 10000
    timeout_s: float = 10.0


@dataclass
class ResultTable:
    columns: list[str]
    rows: list[tuple]
    truncated: bool = False


def _first_keyword(sql: str) -> str:
    i, n = 0, len(sql)
    while i < n:
        if sql[i].isspace():
            i += 1
        elif sql.startswith("--", i):
            nl = sql.find("\n", i)
            i = n if nl < 0 else nl + 1
        elif sql.startswith("/*", i):
            end = sql.find("*/", i + 2)
            i = n if end < 0 else end + 2
        else:
            break
    m = re.match(r"[A-Za-z_]+", sql[i:])
    return m.group(0).lower() if m else ""


_READ_ACTIONS = {
    sqlite3.SQLITE_SELECT,
    sqlite3.SQLITE_READ,
    getattr(sqlite3, "SQLITE_FUNCTION", 31),
    getattr(sqlite3, "SQLITE_RECURSIVE", 33),
}


def _read_only_authorizer(action, *_args):
    return sqlite3.SQLITE_OK if action in _READ_ACTIONS else sqlite3.SQLITE_DENY


def execute_sql(
    connection: sqlite3.Connection,
    sql: str,
    limits: QueryLimits = QueryLimits(),
) -> ResultTable:
    """Run a SELECT with a read-only authorizer, row cap, and wall-clock timeout."""
    if _first_keyword(sql) not in ("select", "with"):
        raise NonSelectError(f"read-only guard rejected statement: {sql[:80]!r}")
    deadline = time.monotonic() + limits.timeout_s
    connection.set_authorizer(_read_only_authorizer)
    connection.set_progress_handler(lambda: 1 if time.monotonic() > deadline else 0, 2000)
    try:
        cursor = connection.execute(sql)
        rows = cursor.fetchmany(limits.max_rows + 1)
        columns = [d[0] for d in cursor.description] if cursor.description else []
    except sqlite3.OperationalError as exc:
        message = str(exc)
        if "interrupted" in message:
            raise QueryTimeoutError(f"query exceeded {limits.timeout_s}s") from exc
        if "syntax error" in message or "unrecognized token" in message or "incomplete input" in message:
            raise SqlParseError(message) from exc
        raise QueryExecutionError(message) from exc
    except sqlite3.DatabaseError as exc:
        raise QueryExecutionError(str(exc)) from exc
    finally:
        connection.set_authorizer(None)
        connection.set_progress_handler(None, 0)
    truncated = len(rows) > limits.max_rows
    return ResultTable(columns, [tuple(r) for r in rows[:limits.max_rows]], truncated)


def open_readonly(db_path: str | Path) -> sqlite3.Connection:
    path = Path(db_path)
    if not path.exists():
        raise MissingDatabaseError(f"no database at {path}")
    return sqlite3.connect(f"file:{path}?mode=ro", uri=True)


def build_database(script: str, db_path: str | Path) -> None:
    """Materialize a fixture database from a DDL+INSERT script."""
    path = Path(db_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    conn = sqlite3.connect(path)
    try:
        conn.executescript(script)
        conn.commit()
    finally:
        conn.close()


def fixture_script(name: str) -> str:
    return resources.files("dbchat").joinpath(f"fixtures/{name}.sql").read_text(encoding="utf-8")


def build_fixture_db(name: str, db_path: str | Path) -> None:
    build_database(fixture_script(name), db_path)


# --- execution accuracy ---

@dataclass
class EvalRecord:
    db_id: str
    question: str
    gold_sql: str
    difficulty: str
    predicted_sql: str | None = None

    def __post_init__(self):
        if self.difficulty not in DIFFICULTIES:
            raise ValueError(f"difficulty must be one of {DIFFICULTIES}, got {self.difficulty!r}")


@dataclass
class BucketScore:
    correct: int = 0
    count: int = 0

    @property
    def ex(self) -> float:
        return self.correct / self.count if self.count else 0.0


@dataclass
class ExReport:
    buckets: dict[str, BucketScore]
    excluded: list[tuple[int, str, str]]  # (record index, db_id, diagnostic)

    @property
    def total_count(self) -> int:
        return sum(b.count for b in self.buckets.values())

    @property
    def total_correct(self) -> int:
        return sum(b.correct for b in self.buckets.values())

    @property
    def overall_ex(self) -> float:
        return self.total_correct / self.total_count if self.total_count else 0.0


def _normalize_cell(value):
    if value is None:
        return ("null",)
    if isinstance(value, (int, float)):
        return ("num", round(float(value), 6))
    if isinstance(value, bytes):
        return ("bytes", value.hex())
    return ("text", str(value).strip())


def _comparable(rows: list[tuple], ordered: bool):
    normalized = [tuple(_normalize_cell(c) for c in row) for row in rows]
    return normalized if ordered else sorted(normalized)


def has_top_level_order_by(sql: str) -> bool:
    """Detect ORDER BY outside any parenthesized subquery or string literal."""
    low = sql.lower()
    depth = 0
    i, n = 0, len(low)
    while i < n:
        ch = low[i]
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth = max(0, depth - 1)
        elif ch in ("'", '"'):
            quote = ch
            i += 1
            while i < n:
                if low[i] == quote:
                    if i + 1 < n and low[i + 1] == quote:
                        i += 2
                        continue
                    break
                i += 1
        elif depth == 0 and low.startswith("order", i):
            before_ok = i == 0 or not (low[i - 1].isalnum() or low[i - 1] == "_")
            j = i + 5
            while j < n and low[j].isspace():
                j += 1
            if before_ok and low.startswith("by", j):
                after = j + 2
                if after >= n or not (low[after].isalnum() or low[after] == "_"):
                    return True
        i += 1
    return False


def results_match(gold: ResultTable, predicted: ResultTable, gold_sql: str) -> bool:
    ordered = has_top_level_order_by(gold_sql)
    return _comparable(gold.rows, ordered) == _comparable(predicted.rows, ordered)


def ex_score(
    records: list[EvalRecord],
    connection_factory: Callable[[str], sqlite3.Connection],
    limits: QueryLimits = QueryLimits(),
) -> ExReport:
    """Score predictions by comparing execution results against the gold query.

    Gold execution failure excludes the record (with a diagnostic); a missing
    or failing prediction counts incorrect.
    """
    buckets = {d: BucketScore() for d in DIFFICULTIES}
    excluded: list[tuple[int, str, str]] = []
    for idx, record in enumerate(records):
        conn = connection_factory(record.db_id)
        try:
            try:
                gold_result = execute_sql(conn, record.gold_sql, limits)
            except Exception as exc:
                excluded.append((idx, record.db_id, f"gold execution failed: {exc}"))
                continue
            bucket = buckets[record.difficulty]
            bucket.count += 1
            if record.predicted_sql is None:
                continue
            try:
                predicted_result = execute_sql(conn, record.predicted_sql, limits)
            except Exception:
                continue
            if results_match(gold_result, predicted_result, record.gold_sql):
                bucket.correct += 1
        finally:
            conn.close()
    return ExReport(buckets, excluded)


def directory_connection_factory(db_dir: str | Path) -> Callable[[str], sqlite3.Connection]:
    """Resolve db_id -> <db_dir>/<db_id>.db (also <db_dir>/<db_id>/<db_id>.sqlite layouts)."""
    root = Path(db_dir)

    def factory(db_id: str) -> sqlite3.Connection:
        for candidate in (
            root / f"{db_id}.db",
            root / f"{db_id}.sqlite",
            root / db_id / f"{db_id}.sqlite",
            root / db_id / f"{db_id}.db",
        ):
            if candidate.exists():
                return open_readonly(candidate)
        raise MissingDatabaseError(f"no fixture database for db_id {db_id!r} under {root}")

    return factory


# --- dataset files and corpus export ---

def load_dataset(path: str | Path) -> list[EvalRecord]:
    """One JSON object per line with db_id / question / query / difficulty."""
    records = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        obj = json.loads(line)
        try:
            records.append(
                EvalRecord(
                    db_id=obj["db_id"],
                    question=obj["question"],
                    gold_sql=obj["query"],
                    difficulty=obj["difficulty"],
                    predicted_sql=obj.get("predicted_sql"),
                )
            )
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: bad dataset record: {exc}") from exc
    return records


def attach_predictions(records: list[EvalRecord], path: str | Path) -> None:
    """Pair a predictions file (plain SQL lines or JSONL with predicted_sql) with records."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if len(lines) != len(records):
        raise ValueError(f"{len(lines)} predictions for {len(records)} records")
    for record, line in zip(records, lines):
        if line.lstrip().startswith("{"):
            record.predicted_sql = json.loads(line)["predicted_sql"]
        else:
            record.predicted_sql = line.strip()


def bucket_counts(records: list[EvalRecord]) -> dict[str, int]:
    counts = {d: 0 for d in DIFFICULTIES}
    for r in records:
        counts[r.difficulty] += 1
    return counts


def finetune_line(record: EvalRecord, sd: SchemaDescription) -> str:
    return json.dumps(
        {
            "instruction": serialize_schema(sd),
            "input": record.question,
            "response": record.gold_sql,
        },
        ensure_ascii=False,
    )


def export_finetune_corpus(
    records: list[EvalRecord],
    schemas: dict[str, SchemaDescription],
    path: str | Path,
) -> int:
    """Write one instruction/input/response JSON object per record; returns the line count."""
    out = []
    for record in records:
        sd = schemas.get(record.db_id)
        if sd is None:
            raise MissingSchemaError(f"no schema for db_id {record.db_id!r}")
        out.append(finetune_line(record, sd))
    Path(path).write_text("".join(line + "\n" for line in out), encoding="utf-8")
    return len(out)


def write_spider_dev_stub(path: str | Path, db_id: str = "concert_singer") -> int:
    """Write a placeholder dev dataset with the reference bucket distribution.

    The real cross-domain dev set is not redistributable, so this stub keeps
    the per-difficulty accounting (248/446/174/166) testable offline.
    """
    lines = []
    serial = 0
    for difficulty in DIFFICULTIES:
        for _ in range(SPIDER_DEV_BUCKET_COUNTS[difficulty]):
            lines.append(
                json.dumps(
                    {
                        "db_id": db_id,
                        "question": f"placeholder question {serial}",
                        "query": "select count(*) from singer",
                        "difficulty": difficulty,
                    },
                    ensure_ascii=False,
                )
            )
            serial += 1
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return serial
