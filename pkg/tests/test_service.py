import json

import pytest
from fastapi.testclient import TestClient

from dbchat.config import AppConfig
from dbchat.errors import ConfigError
from dbchat.service import create_app
from dbchat.text2sql import build_fixture_db

from conftest import seeded_pii_values


@pytest.fixture()
def service(tmp_path):
    db_root = tmp_path / "databases"
    db_root.mkdir()
    build_fixture_db("concert_singer", db_root / "concert_singer.db")
    config = AppConfig(
        kb_root=tmp_path / "kb",
        db_root=db_root,
        offline=True,
        mock_workers=True,
        retrieval_k=8,
        prompt_j=4,
    )
    app = create_app(config)
    with TestClient(app) as client:
        yield client


def ingest_corpus(client, name="docs", texts=None):
    texts = texts or [f"chunk text number {i} about topic{i % 5} systems" for i in range(12)]
    response = client.post(
        f"/api/kb/{name}/ingest",
        json={"documents": [{"media_kind": "plain", "body": t, "doc_id": f"doc{i}"}
                            for i, t in enumerate(texts)]},
    )
    assert response.status_code == 200, response.text
    return response.json()


def create_session(client, **kwargs):
    response = client.post("/api/sessions", json=kwargs)
    assert response.status_code == 200, response.text
    return response.json()["session_id"]


class TestHealthAndKb:
    def test_health(self, service):
        body = service.get("/api/health").json()
        assert body["status"] == "ok"
        assert body["v"] == 1
        assert body["version"]

    def test_ingest_and_list(self, service):
        out = ingest_corpus(service)
        assert out["documents"] == 12
        assert out["chunks"] >= 12
        kbs = service.get("/api/kb").json()["kbs"]
        assert any(k["name"] == "docs" and k["chunks"] >= 12 for k in kbs)

    def test_ingest_document_needs_body_or_uri(self, service):
        response = service.post(
            "/api/kb/x/ingest", json={"documents": [{"media_kind": "plain"}]}
        )
        assert response.status_code == 422

    def test_query_endpoint(self, service):
        ingest_corpus(service)
        response = service.post(
            "/api/query",
            json={"kb": "docs", "query": "topic3 systems", "retriever": "keyword", "k": 5},
        )
        assert response.status_code == 200
        contexts = response.json()["contexts"]
        assert contexts
        assert all("topic3" in c["text"] or "systems" in c["text"] for c in contexts)

    def test_query_unknown_kb_404(self, service):
        response = service.post("/api/query", json={"kb": "ghost", "query": "x"})
        assert response.status_code == 404


class TestRagChat:
    def test_echo_answer_contains_contexts_and_question(self, service):
        ingest_corpus(service)
        sid = create_session(service, mode="rag_qa", kb="docs", model="mock-echo")
        response = service.post(
            "/api/chat",
            json={"session_id": sid, "question": "what about topic3 systems?", "stream": False},
        )
        assert response.status_code == 200, response.text
        body = response.json()
        assert body["v"] == 1
        # the echo backend returns the prompt: all J contexts plus the question
        assert len(body["citations"]) == 4
        for citation in body["citations"]:
            assert citation["text"] in body["answer"]
        assert "what about topic3 systems?" in body["answer"]

    def test_citation_count_is_min_j_retrieved(self, service):
        ingest_corpus(service, name="tiny", texts=["only one chunk"])
        sid = create_session(service, mode="rag_qa", kb="tiny", model="mock-echo")
        body = service.post(
            "/api/chat", json={"session_id": sid, "question": "one chunk?", "stream": False}
        ).json()
        assert len(body["citations"]) == 1

    def test_streaming_tokens_ordered_then_citations(self, service):
        ingest_corpus(service)
        sid = create_session(service, mode="rag_qa", kb="docs", model="mock-echo")
        events = []
        with service.stream(
            "POST", "/api/chat",
            json={"session_id": sid, "question": "stream topic1?", "stream": True},
        ) as response:
            assert response.status_code == 200
            for line in response.iter_lines():
                if line.startswith("data:"):
                    payload = line[len("data:"):].strip()
                    if payload == "[DONE]":
                        break
                    events.append(json.loads(payload))
        kinds = [e["type"] for e in events]
        assert kinds[-2:] == ["citations", "done"]
        token_events = [e for e in events if e["type"] == "token"]
        assert token_events
        seqs = [e["seq"] for e in token_events]
        assert seqs == sorted(seqs)
        citations = [e for e in events if e["type"] == "citations"][0]["citations"]
        assert len(citations) == 4
        answer = "".join(e["content"] for e in token_events)
        assert "stream topic1?" in answer

    def test_seeded_pii_masked_before_backend(self, service):
        email = seeded_pii_values()["email"][0]
        ingest_corpus(service, name="pii", texts=[f"contact {email} for topic1 details"])
        sid = create_session(service, mode="rag_qa", kb="pii", model="mock-echo")
        body = service.post(
            "/api/chat",
            json={"session_id": sid,
                  "question": f"who is {email} on topic1?", "stream": False},
        ).json()
        # the echo answer IS the prompt: raw identifiers must not appear in it
        assert email not in body["answer"]
        assert "[EMAIL]" in body["answer"]

    def test_unknown_session_404(self, service):
        response = service.post(
            "/api/chat", json={"session_id": "nope", "question": "x", "stream": False}
        )
        assert response.status_code == 404

    def test_history_grows(self, service):
        ingest_corpus(service)
        sid = create_session(service, mode="rag_qa", kb="docs", model="mock-echo")
        for _ in range(2):
            service.post(
                "/api/chat", json={"session_id": sid, "question": "q topic2", "stream": False}
            )
        state = service.app.state.service
        assert len(state.sessions[sid].history) == 4


class TestText2SqlEndpoint:
    def test_count_query_round_trip(self, service):
        sid = create_session(
            service, mode="text2sql", db_id="concert_singer", model="mock-sql"
        )
        response = service.post(
            "/api/text2sql",
            json={"session_id": sid, "question": "How many singers do we have?"},
        )
        assert response.status_code == 200, response.text
        body = response.json()
        assert body["sql"] == "select count(*) from singer"
        assert body["rows"] == [[30]]
        assert body["row_count"] == 1
        assert body["columns"] == ["count(*)"]

    def test_missing_database_404(self, service):
        sid = create_session(service, mode="text2sql", db_id="ghost_db", model="mock-sql")
        response = service.post(
            "/api/text2sql", json={"session_id": sid, "question": "q"}
        )
        assert response.status_code == 404

    def test_chat_in_text2sql_mode(self, service):
        sid = create_session(
            service, mode="text2sql", db_id="concert_singer", model="mock-sql"
        )
        body = service.post(
            "/api/chat", json={"session_id": sid, "question": "count?", "stream": False}
        ).json()
        assert "select count(*) from singer" in body["answer"]
        assert "30" in body["answer"]


class TestAgentEndpoint:
    def test_rule_agent_episode(self, service):
        sid = create_session(
            service, mode="agent", db_id="concert_singer",
            model="mock-agent", sql_model="mock-sql", role="data_analyst",
        )
        response = service.post(
            "/api/agent",
            json={"session_id": sid, "question": "How many singers do we have?"},
        )
        assert response.status_code == 200, response.text
        body = response.json()
        assert body["complete"]
        assert "30" in body["answer"]
        actions = [s["action"] for s in body["transcript"]]
        assert actions == ["schema_analyzer", "generate_sql", "execute_sql", "final"]

    def test_tool_toggle_excludes_tool_from_episodes(self, service):
        sid = create_session(
            service, mode="agent", db_id="concert_singer",
            model="mock-agent", sql_model="mock-sql", role="data_analyst",
        )
        tools = service.get(f"/api/sessions/{sid}/tools").json()["tools"]
        assert all(t["enabled"] for t in tools)
        enabled = [t["tool_id"] for t in tools if t["tool_id"] != "execute_sql"]
        toggled = service.post(f"/api/sessions/{sid}/tools", json={"enabled": enabled}).json()
        flags = {t["tool_id"]: t["enabled"] for t in toggled["tools"]}
        assert flags["execute_sql"] is False
        body = service.post(
            "/api/agent", json={"session_id": sid, "question": "How many singers?"}
        ).json()
        actions = [s["action"] for s in body["transcript"]]
        assert "execute_sql" not in actions
        assert body["complete"]

    def test_toggle_unknown_tool_rejected(self, service):
        sid = create_session(service, mode="agent", db_id="concert_singer")
        response = service.post(
            f"/api/sessions/{sid}/tools", json={"enabled": ["made_up_tool"]}
        )
        assert response.status_code == 404

    def test_offline_blocks_live_web_search_with_observation(self, tmp_path):
        db_root = tmp_path / "databases"
        db_root.mkdir()
        build_fixture_db("concert_singer", db_root / "concert_singer.db")
        config = AppConfig(
            kb_root=tmp_path / "kb", db_root=db_root, offline=True,
            web_search_live_url="https://search.example.com",
        )
        app = create_app(config)
        with TestClient(app) as client:
            sid = client.post("/api/sessions", json={
                "mode": "agent", "db_id": "concert_singer", "model": "mock-echo",
            }).json()["session_id"]
            state = app.state.service
            registry = state.session_registry(state.sessions[sid])
            observation = registry.invoke("web_search", "anything external")
            assert observation.startswith("blocked: offline mode")


class TestGatewayEndpoints:
    def test_models_listed(self, service):
        models = service.get("/api/models").json()["models"]
        names = {m["model_name"] for m in models}
        assert {"mock-echo", "mock-timed", "mock-sql", "mock-agent"} <= names
        assert all(m["status"] == "healthy" for m in models)

    def test_register_and_heartbeat(self, service):
        response = service.post(
            "/api/workers/register",
            json={"model_name": "remote-model", "worker_address": "http://127.0.0.1:9999"},
        )
        assert response.status_code == 200
        assert any(
            m["model_name"] == "remote-model"
            for m in service.get("/api/models").json()["models"]
        )
        beat = service.post(
            "/api/workers/heartbeat",
            json={"model_name": "remote-model", "worker_address": "http://127.0.0.1:9999"},
        )
        assert beat.status_code == 200

    def test_duplicate_registration_409(self, service):
        body = {"model_name": "dup", "worker_address": "http://127.0.0.1:1"}
        assert service.post("/api/workers/register", json=body).status_code == 200
        assert service.post("/api/workers/register", json=body).status_code == 409

    def test_heartbeat_unknown_404(self, service):
        response = service.post(
            "/api/workers/heartbeat",
            json={"model_name": "ghost", "worker_address": "nowhere"},
        )
        assert response.status_code == 404

    def test_chat_completions_non_streaming(self, service):
        response = service.post(
            "/v1/chat/completions",
            json={"model": "mock-echo",
                  "messages": [{"role": "user", "content": "hello world"}]},
        )
        body = response.json()
        assert body["object"] == "chat.completion"
        assert body["choices"][0]["message"]["content"] == "hello world"
        assert body["usage"]["completion_tokens"] >= 1

    def test_chat_completions_streaming(self, service):
        deltas = []
        finish = []
        with service.stream(
            "POST", "/v1/chat/completions",
            json={"model": "mock-echo", "stream": True,
                  "messages": [{"role": "user", "content": "stream me please now"}]},
        ) as response:
            for line in response.iter_lines():
                if not line.startswith("data:"):
                    continue
                payload = line[len("data:"):].strip()
                if payload == "[DONE]":
                    break
                obj = json.loads(payload)
                deltas.append(obj["choices"][0]["delta"]["content"])
                finish.append(obj["choices"][0]["finish_reason"])
        assert "".join(deltas) == "stream me please now"
        assert finish[-1] == "stop"
        assert all(f is None for f in finish[:-1])

    def test_chat_completions_unknown_model_404(self, service):
        response = service.post(
            "/v1/chat/completions",
            json={"model": "ghost", "messages": [{"role": "user", "content": "x"}]},
        )
        assert response.status_code == 404

    def test_bench_endpoint(self, service):
        response = service.post(
            "/api/bench",
            json={"model": "mock-echo", "concurrency": 2, "requests_per_worker": 1,
                  "prompt_tokens": 4, "output_tokens": 8},
        )
        assert response.status_code == 200
        body = response.json()
        assert body["report"]["valid"] is True
        assert "Throughput (tokens/s)" in body["table"]


class TestStartupValidation:
    def test_invalid_config_names_field(self, tmp_path):
        config = AppConfig(kb_root=tmp_path, window=100, overlap=200)
        with pytest.raises(ConfigError, match="ingest.overlap"):
            create_app(config)
