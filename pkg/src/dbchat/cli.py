"""Command-line interface.

Batch verbs (ingest, query, eval, export-corpus, train-encoder, kb inspect)
run against local files; chat is a thin HTTP client for a running service;
bench runs in-process against a deterministic mock by default or against a
live service with --server. `serve` starts the HTTP service itself.
"""

import json
import sys
from dataclasses import asdict
from pathlib import Path

import click
import httpx

from . import __version__
from . import encoder as enc
from . import ingest as ingest_mod
from . import kb as kb_mod
from . import retrieval as retrieval_mod
from . import text2sql as t2s
from .agents import (
    RuleAgentBackend,
    builtin_tools,
    load_role_specs,
    run_agent,
    transcript_jsonl,
)
from .config import AppConfig, load_config
from .smmf import (
    Gateway,
    MockBackend,
    ModelController,
    ScriptedBackend,
    StaticBackend,
    format_bench_table,
    run_bench,
)


def _config(path: str | None) -> AppConfig:
    return load_config(path)


def _server_url(server: str | None, config: AppConfig) -> str:
    if server:
        return server.rstrip("/")
    return f"http://{config.gateway_bind}"


@click.group()
@click.version_option(version=__version__, prog_name="dbchat")
def main():
    """Local-first natural-language database assistant."""


# --- serve ---

@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def serve(config_path):
    """Run the HTTP service."""
    from .service.app import serve as serve_app

    serve_app(_config(config_path))


# --- ingest ---

@main.command()
@click.option("--manifest", type=click.Path(exists=True), required=True,
              help="JSONL manifest: {uri, media_kind, kb_name} per line.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def ingest(manifest, config_path):
    """Load, split, and index every document named in a manifest."""
    config = _config(config_path)
    from .encoder import HashEmbedder, load_embedder

    embedder = (
        load_embedder(config.encoder_weights_path)
        if config.encoder_weights_path
        else HashEmbedder()
    )
    entries = ingest_mod.read_manifest(manifest)
    by_kb: dict[str, list] = {}
    for entry in entries:
        by_kb.setdefault(entry.kb_name, []).append(entry)
    config.kb_root.mkdir(parents=True, exist_ok=True)
    for kb_name, kb_entries in sorted(by_kb.items()):
        path = config.kb_root / f"{kb_name}.kb"
        kb = kb_mod.load(path) if path.exists() else kb_mod.KnowledgeBase(kb_name, embedder.dimension)
        chunks = []
        for entry in kb_entries:
            doc = ingest_mod.load_document(entry.uri, entry.media_kind)
            chunks.extend(
                ingest_mod.split_document(
                    doc, config.window, config.overlap,
                    snap_to_whitespace=config.snap_to_whitespace,
                )
            )
        kb_mod.index_chunks(kb, chunks, embedder)
        kb_mod.save(kb, path)
        click.echo(f"{kb_name}: +{len(chunks)} chunks ({len(kb)} total) -> {path}")


# --- retrieval query ---

def _query_impl(kb_name, query, retriever, k, config_path):
    config = _config(config_path)
    from .encoder import HashEmbedder, load_embedder

    embedder = (
        load_embedder(config.encoder_weights_path)
        if config.encoder_weights_path
        else HashEmbedder()
    )
    kb = kb_mod.load(config.kb_root / f"{kb_name}.kb")
    contexts = retrieval_mod.retrieve(kb, query, k or config.retrieval_k, retriever, embedder)
    click.echo(json.dumps(
        [
            {
                "doc_id": c.chunk_key.doc_id,
                "chunk_index": c.chunk_key.chunk_index,
                "score": c.score,
                "retriever_kind": c.retriever_kind,
                "text": c.text,
            }
            for c in contexts
        ],
        ensure_ascii=False, indent=2,
    ))


_query_options = [
    click.option("--kb", "kb_name", required=True),
    click.option("--query", required=True),
    click.option("--retriever", type=click.Choice(["embedding", "keyword", "graph"]),
                 default="embedding"),
    click.option("--k", type=int, default=None),
    click.option("--config", "config_path", type=click.Path(exists=True), default=None),
]


def _apply_options(options, func):
    for option in reversed(options):
        func = option(func)
    return func


@main.command()
def query(**kwargs):
    """Retrieve top-K contexts from a knowledge base (JSON output)."""
    _query_impl(kwargs["kb_name"], kwargs["query"], kwargs["retriever"],
                kwargs["k"], kwargs["config_path"])


query = _apply_options(_query_options, query)


@main.group()
def rag():
    """Retrieval-augmented generation commands."""


@rag.command("query")
def rag_query(**kwargs):
    """Retrieve top-K contexts from a knowledge base (JSON output)."""
    _query_impl(kwargs["kb_name"], kwargs["query"], kwargs["retriever"],
                kwargs["k"], kwargs["config_path"])


rag_query = _apply_options(_query_options, rag_query)


# --- kb inspect ---

@main.group("kb")
def kb_group():
    """Knowledge-base file commands."""


@kb_group.command("inspect")
@click.option("--path", type=click.Path(exists=True), default=None)
@click.option("--kb", "kb_name", default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--full", is_flag=True, help="Load the whole file to count terms.")
def kb_inspect(path, kb_name, config_path, full):
    """Print a knowledge-base file header and counts."""
    if path is None:
        if kb_name is None:
            raise click.UsageError("give --path or --kb")
        path = _config(config_path).kb_root / f"{kb_name}.kb"
    header = kb_mod.read_header(path)
    click.echo(f"name:      {header.name}")
    click.echo(f"version:   {header.version}")
    click.echo(f"dimension: {header.dimension}")
    click.echo(f"chunks:    {header.chunk_count}")
    if full:
        kb = kb_mod.load(path)
        click.echo(f"terms:     {kb.term_count}")


# --- chat (thin client) ---

@main.command()
@click.option("--question", required=True)
@click.option("--mode", type=click.Choice(["rag_qa", "text2sql", "agent"]), default="rag_qa")
@click.option("--kb", "kb_name", default=None)
@click.option("--db", "db_id", default=None)
@click.option("--model", default=None)
@click.option("--sql-model", default=None)
@click.option("--role", default=None)
@click.option("--stream/--no-stream", default=True)
@click.option("--server", default=None, help="Service base URL (default from config).")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def chat(question, mode, kb_name, db_id, model, sql_model, role, stream, server, config_path):
    """Ask a question through a running service."""
    config = _config(config_path)
    base = _server_url(server, config)
    with httpx.Client(base_url=base, timeout=120.0) as client:
        created = client.post("/api/sessions", json={
            "mode": mode, "kb": kb_name, "db_id": db_id,
            "model": model, "sql_model": sql_model, "role": role,
        })
        created.raise_for_status()
        session_id = created.json()["session_id"]
        if mode != "rag_qa" or not stream:
            response = client.post("/api/chat", json={
                "session_id": session_id, "question": question, "stream": False,
            })
            response.raise_for_status()
            body = response.json()
            click.echo(body["answer"])
            for citation in body.get("citations", []):
                click.echo(f"  [{citation['score']:.4f}] {citation['doc_id']}"
                           f"#{citation['chunk_index']}")
            return
        with client.stream("POST", "/api/chat", json={
            "session_id": session_id, "question": question, "stream": True,
        }) as response:
            response.raise_for_status()
            for line in response.iter_lines():
                if not line.startswith("data:"):
                    continue
                payload = line[len("data:"):].strip()
                if payload == "[DONE]":
                    break
                event = json.loads(payload)
                if event["type"] == "token":
                    click.echo(event["content"], nl=False)
                elif event["type"] == "citations":
                    click.echo()
                    for citation in event["citations"]:
                        click.echo(f"  [{citation['score']:.4f}] {citation['doc_id']}"
                                   f"#{citation['chunk_index']}")
                elif event["type"] == "error":
                    click.echo(f"\nerror: {event['message']}", err=True)
        click.echo()


# --- text-to-SQL eval / export ---

def _eval_impl(dataset, db_dir, predictions, json_out):
    records = t2s.load_dataset(dataset)
    if predictions:
        t2s.attach_predictions(records, predictions)
    report = t2s.ex_score(records, t2s.directory_connection_factory(db_dir))
    for difficulty in t2s.DIFFICULTIES:
        bucket = report.buckets[difficulty]
        click.echo(f"{difficulty:>7s}: {bucket.correct:>5d}/{bucket.count:<5d} EX={bucket.ex:.3f}")
    click.echo(f"{'overall':>7s}: {report.total_correct:>5d}/{report.total_count:<5d} "
               f"EX={report.overall_ex:.3f}")
    for idx, db_id, diagnostic in report.excluded:
        click.echo(f"excluded record {idx} ({db_id}): {diagnostic}", err=True)
    if json_out:
        payload = {
            "v": 1,
            "buckets": {d: asdict(report.buckets[d]) for d in t2s.DIFFICULTIES},
            "overall_ex": report.overall_ex,
            "total_count": report.total_count,
        }
        Path(json_out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


_eval_options = [
    click.option("--dataset", type=click.Path(exists=True), required=True),
    click.option("--db-dir", type=click.Path(exists=True), required=True),
    click.option("--predictions", type=click.Path(exists=True), default=None),
    click.option("--json-out", type=click.Path(), default=None),
]


@main.command("eval")
def eval_cmd(**kwargs):
    """Score predictions by execution accuracy against gold queries."""
    _eval_impl(kwargs["dataset"], kwargs["db_dir"], kwargs["predictions"], kwargs["json_out"])


eval_cmd = _apply_options(_eval_options, eval_cmd)


def _export_impl(dataset, db_dir, schemas_dir, out):
    records = t2s.load_dataset(dataset)
    schemas: dict[str, t2s.SchemaDescription] = {}
    for db_id in sorted({r.db_id for r in records}):
        schema_file = Path(schemas_dir) / f"{db_id}.json" if schemas_dir else None
        if schema_file and schema_file.exists():
            schemas[db_id] = t2s.load_schema_file(schema_file)
        elif db_dir:
            conn = t2s.directory_connection_factory(db_dir)(db_id)
            try:
                schemas[db_id] = t2s.analyze_schema(conn, db_id=db_id)
            finally:
                conn.close()
    count = t2s.export_finetune_corpus(records, schemas, out)
    click.echo(f"wrote {count} lines -> {out}")


_export_options = [
    click.option("--dataset", type=click.Path(exists=True), required=True),
    click.option("--db-dir", type=click.Path(exists=True), default=None),
    click.option("--schemas-dir", type=click.Path(exists=True), default=None),
    click.option("--out", type=click.Path(), required=True),
]


@main.command("export-corpus")
def export_corpus(**kwargs):
    """Export the instruction/input/response fine-tuning corpus."""
    _export_impl(kwargs["dataset"], kwargs["db_dir"], kwargs["schemas_dir"], kwargs["out"])


export_corpus = _apply_options(_export_options, export_corpus)


@main.group("text2sql")
def text2sql_group():
    """Text-to-SQL commands."""


@text2sql_group.command("eval")
def text2sql_eval(**kwargs):
    """Score predictions by execution accuracy against gold queries."""
    _eval_impl(kwargs["dataset"], kwargs["db_dir"], kwargs["predictions"], kwargs["json_out"])


text2sql_eval = _apply_options(_eval_options, text2sql_eval)


@text2sql_group.command("export")
def text2sql_export(**kwargs):
    """Export the instruction/input/response fine-tuning corpus."""
    _export_impl(kwargs["dataset"], kwargs["db_dir"], kwargs["schemas_dir"], kwargs["out"])


text2sql_export = _apply_options(_export_options, text2sql_export)


# --- bench ---

@main.command()
@click.option("--model", default="mock-timed")
@click.option("--concurrency", type=int, default=1)
@click.option("--requests", "requests_per_worker", type=int, default=1)
@click.option("--prompt-tokens", type=int, default=8)
@click.option("--output-tokens", type=int, default=256)
@click.option("--mock", default="50,10,256",
              help="Local mock timing: first_ms,per_token_ms,tokens.")
@click.option("--server", default=None, help="Bench a live service instead of a local mock.")
@click.option("--json-out", type=click.Path(), default=None)
def bench(model, concurrency, requests_per_worker, prompt_tokens, output_tokens,
          mock, server, json_out):
    """Measure first-token latency, inference latency, and throughput."""
    if server:
        with httpx.Client(base_url=server.rstrip("/"), timeout=600.0) as client:
            response = client.post("/api/bench", json={
                "model": model, "concurrency": concurrency,
                "requests_per_worker": requests_per_worker,
                "prompt_tokens": prompt_tokens, "output_tokens": output_tokens,
            })
            response.raise_for_status()
            body = response.json()
            click.echo(body["table"])
            if json_out:
                Path(json_out).write_text(json.dumps(body["report"], indent=2) + "\n",
                                          encoding="utf-8")
        return
    first_ms, per_ms, tokens = (float(x) for x in mock.split(","))
    controller = ModelController()
    gateway = Gateway(controller)
    gateway.add_local_worker(model, MockBackend(first_ms, per_ms, int(tokens)))
    report = run_bench(gateway, model, concurrency, requests_per_worker,
                       prompt_tokens=prompt_tokens, output_tokens=output_tokens)
    click.echo(format_bench_table(report))
    if json_out:
        Path(json_out).write_text(json.dumps(report.to_json(), indent=2) + "\n",
                                  encoding="utf-8")


# --- encoder training ---

@main.command("train-encoder")
@click.option("--pairs", type=click.Path(exists=True), required=True,
              help="JSONL corpus: {query, response} per line.")
@click.option("--epochs", type=int, default=20)
@click.option("--lr", type=float, default=10.0)
@click.option("--seed", type=int, default=0)
@click.option("--negatives", type=int, default=5)
@click.option("--dimension", type=int, default=enc.DEFAULT_DIMENSION)
@click.option("--features", type=int, default=enc.DEFAULT_FEATURES)
@click.option("--out", type=click.Path(), required=True)
def train_encoder(pairs, epochs, lr, seed, negatives, dimension, features, out):
    """Train the dual encoder on a query/response corpus and save the weights."""
    corpus = enc.load_pairs_corpus(pairs)
    split = enc.make_pairs(corpus, negatives_per_pair=negatives, seed=seed)
    click.echo(f"pairs: {len(split.train)} train / {len(split.dev)} dev / {len(split.test)} test")
    trained, report = enc.train(
        split, epochs=epochs, learning_rate=lr, seed=seed,
        dimension=dimension, features=features,
    )
    for epoch, (recall, loss) in enumerate(
        zip(report.dev_recall_at_1, report.mean_train_loss), 1
    ):
        click.echo(f"epoch {epoch:>3d}: mean loss {loss:+.4f}  dev recall@1 {recall:.3f}")
    test_recall = enc.recall_at_1(trained, split.test)
    click.echo(f"test recall@1: {test_recall:.3f}")
    enc.save_embedder(trained, out)
    click.echo(f"weights -> {out}")


# --- agent ---

@main.group()
def agent():
    """Tool-using agent commands."""


@agent.command("run")
@click.option("--question", required=True)
@click.option("--role", "role_name", default="data_analyst")
@click.option("--db", "db_path", type=click.Path(exists=True), default=None)
@click.option("--script", type=click.Path(exists=True), default=None,
              help="JSONL of scripted actions; otherwise the rule policy drives.")
@click.option("--fallback-sql", default="select count(*) from singer",
              help="SQL used by the rule policy's generation step in offline runs.")
@click.option("--step-budget", type=int, default=8)
@click.option("--server", default=None, help="Run the episode on a live service instead.")
@click.option("--model", default="mock-agent",
              help="Agent policy model for --server runs.")
@click.option("--sql-model", default="mock-sql",
              help="SQL generation model for --server runs.")
@click.option("--transcript-out", type=click.Path(), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def agent_run(question, role_name, db_path, script, fallback_sql, step_budget,
              server, model, sql_model, transcript_out, config_path):
    """Run one bounded agent episode; transcript goes out as JSON lines."""
    config = _config(config_path)
    if server:
        base = _server_url(server, config)
        with httpx.Client(base_url=base, timeout=300.0) as client:
            created = client.post("/api/sessions", json={
                "mode": "agent", "role": role_name,
                "db_id": Path(db_path).stem if db_path else None,
                "model": model, "sql_model": sql_model,
            })
            created.raise_for_status()
            response = client.post("/api/agent", json={
                "session_id": created.json()["session_id"], "question": question,
            })
            response.raise_for_status()
            body = response.json()
            click.echo(body["answer"])
            lines = "".join(json.dumps(step, ensure_ascii=False) + "\n"
                            for step in body["transcript"])
            if transcript_out:
                Path(transcript_out).write_text(lines, encoding="utf-8")
            else:
                click.echo(lines, nl=False, err=True)
            if not body["complete"]:
                click.echo("episode incomplete: step budget exhausted", err=True)
                sys.exit(2)
        return
    roles = load_role_specs()
    if role_name not in roles:
        raise click.UsageError(f"unknown role {role_name!r}; have {sorted(roles)}")
    registry = builtin_tools(
        db_path=db_path,
        sql_backend=StaticBackend(fallback_sql),
        offline=config.offline,
        web_fixtures_path=config.web_search_fixtures,
    )
    if script:
        actions = [ln for ln in Path(script).read_text(encoding="utf-8").splitlines()
                   if ln.strip()]
        backend = ScriptedBackend(actions)
    else:
        backend = RuleAgentBackend()
    episode = run_agent(question, roles[role_name], backend, registry,
                        step_budget=step_budget, masking=config.agent_masking)
    click.echo(episode.answer)
    lines = transcript_jsonl(episode.steps)
    if transcript_out:
        Path(transcript_out).write_text(lines, encoding="utf-8")
    else:
        click.echo(lines, nl=False, err=True)
    if not episode.complete:
        click.echo("episode incomplete: step budget exhausted", err=True)
        sys.exit(2)


# --- fixtures ---

@main.command("demo-db")
@click.option("--name", default="concert_singer")
@click.option("--out", type=click.Path(), required=True)
def demo_db(name, out):
    """Materialize a bundled fixture database (for demos and local testing)."""
    t2s.build_fixture_db(name, out)
    click.echo(f"built {name} -> {out}")


if __name__ == "__main__":
    main()
