"""Tool registry and the bounded agent loop.

Each step the backend proposes a single JSON object with thought / action /
action_input; the loop executes the named tool and appends the observation.
A malformed object gets one re-ask before counting as a failed step, an
unknown tool is recorded as a failed step and the loop continues, and the
episode ends at a "final" action or when the step budget runs out (then the
best-effort answer is flagged incomplete). When masking is enabled, every
tool input and output passes the PII masker before it is recorded or
executed, so transcripts never carry raw identifiers.

Multi-role coordination is a sequential pipeline: each stage runs one
role's episode and its answer seeds the next stage's question.
"""

import json
import re
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

import yaml

from .errors import (
    AgentBackendError,
    ConfigError,
    DuplicateToolError,
    UnknownToolError,
)
from .promptgen import MaskRule, mask_pii

DEFAULT_STEP_BUDGET = 8
OBSERVATION_LIMIT = 4000

_REASK_SUFFIX = (
    '\n\nYour last reply was not a single JSON object. Respond with exactly one JSON '
    'object with keys "thought", "action", "action_input".'
)


@dataclass(frozen=True)
class Tool:
    tool_id: str
    description: str
    params: dict[str, str]
    handler: Callable[[str], str]


class ToolRegistry:
    def __init__(self, observation_limit: int = OBSERVATION_LIMIT):
        self.observation_limit = observation_limit
        self._tools: dict[str, Tool] = {}

    def register(self, tool: Tool) -> None:
        if tool.tool_id in self._tools:
            raise DuplicateToolError(f"tool already registered: {tool.tool_id}")
        self._tools[tool.tool_id] = tool

    def get(self, tool_id: str) -> Tool:
        tool = self._tools.get(tool_id)
        if tool is None:
            raise UnknownToolError(f"unknown tool: {tool_id}")
        return tool

    def __contains__(self, tool_id: str) -> bool:
        return tool_id in self._tools

    def list_tools(self) -> list[Tool]:
        return [self._tools[tid] for tid in sorted(self._tools)]

    def invoke(self, tool_id: str, action_input: str) -> str:
        """Run a tool handler; handler failures become observation-level errors."""
        tool = self.get(tool_id)
        try:
            observation = tool.handler(action_input)
        except Exception as exc:
            observation = f"tool error ({tool_id}): {exc}"
        return observation[: self.observation_limit]


@dataclass(frozen=True)
class RoleSpec:
    name: str
    preamble: str
    allowed_tools: tuple[str, ...]
    sop: tuple[str, ...] = ()

    def check_against(self, registry: ToolRegistry) -> None:
        missing = [t for t in self.allowed_tools if t not in registry]
        if missing:
            raise UnknownToolError(f"role {self.name!r} allows unregistered tools: {missing}")


@dataclass
class AgentStep:
    index: int
    thought: str
    action: str
    action_input: str
    observation: str


@dataclass
class EpisodeResult:
    answer: str
    steps: list[AgentStep] = field(default_factory=list)
    complete: bool = True


def parse_action(raw: str) -> dict | None:
    """Extract the first JSON object from a backend reply; None when malformed."""
    raw = raw.strip()
    try:
        obj = json.loads(raw)
        return obj if isinstance(obj, dict) and "action" in obj else None
    except json.JSONDecodeError:
        pass
    start = raw.find("{")
    while start != -1:
        depth = 0
        for i in range(start, len(raw)):
            if raw[i] == "{":
                depth += 1
            elif raw[i] == "}":
                depth -= 1
                if depth == 0:
                    try:
                        obj = json.loads(raw[start:i + 1])
                        if isinstance(obj, dict) and "action" in obj:
                            return obj
                    except json.JSONDecodeError:
                        break
                    break
        start = raw.find("{", start + 1)
    return None


def build_agent_prompt(
    role: RoleSpec, registry: ToolRegistry, question: str, steps: list[AgentStep]
) -> str:
    lines = [role.preamble, ""]
    if role.sop:
        lines.append("Procedure: " + " -> ".join(role.sop))
        lines.append("")
    lines.append("Available tools:")
    for tool in registry.list_tools():
        if tool.tool_id in role.allowed_tools:
            lines.append(f"- {tool.tool_id}: {tool.description}")
    lines.append("")
    lines.append(f"Question: {question}")
    for step in steps:
        # JSON-quoted fields keep each step on one unambiguous line.
        lines.append(
            f"Step {step.index}: action={step.action} "
            f"input={json.dumps(step.action_input, ensure_ascii=False)} "
            f"observation={json.dumps(step.observation, ensure_ascii=False)}"
        )
    lines.append(
        'Respond with a single JSON object: '
        '{"thought": "...", "action": "<tool_id or final>", "action_input": "..."}'
    )
    return "\n".join(lines)


def run_agent(
    question: str,
    role: RoleSpec,
    backend,
    registry: ToolRegistry,
    step_budget: int = DEFAULT_STEP_BUDGET,
    masking: bool = True,
    mask_rules: list[MaskRule] | None = None,
) -> EpisodeResult:
    """Run one bounded episode; returns the answer and its full transcript."""
    if step_budget < 1:
        raise ValueError("step_budget must be >= 1")
    role.check_against(registry)

    def masked(text: str) -> str:
        return mask_pii(text, mask_rules).text if masking else text

    question = masked(question)
    steps: list[AgentStep] = []
    for index in range(step_budget):
        prompt = build_agent_prompt(role, registry, question, steps)
        action_obj = parse_action(_complete(backend, prompt))
        if action_obj is None:
            action_obj = parse_action(_complete(backend, prompt + _REASK_SUFFIX))
        if action_obj is None:
            steps.append(
                AgentStep(index, "", "malformed", "", "failed step: reply was not a JSON action")
            )
            continue
        thought = masked(str(action_obj.get("thought", "")))
        action = str(action_obj.get("action", ""))
        raw_input = action_obj.get("action_input", "")
        action_input = masked(
            raw_input if isinstance(raw_input, str) else json.dumps(raw_input, ensure_ascii=False)
        )
        if action == "final":
            steps.append(AgentStep(index, thought, "final", action_input, ""))
            return EpisodeResult(answer=action_input, steps=steps, complete=True)
        if action not in role.allowed_tools or action not in registry:
            steps.append(
                AgentStep(index, thought, action, action_input, f"failed step: unknown tool {action!r}")
            )
            continue
        observation = masked(registry.invoke(action, action_input))
        steps.append(AgentStep(index, thought, action, action_input, observation))
    answer = steps[-1].observation if steps else ""
    return EpisodeResult(answer=answer, steps=steps, complete=False)


def _complete(backend, prompt: str) -> str:
    try:
        return backend.complete(prompt)
    except Exception as exc:
        raise AgentBackendError(f"agent backend failed: {exc}") from exc


def run_sop(
    question: str,
    stages: list[RoleSpec],
    backend,
    registry: ToolRegistry,
    step_budget: int = DEFAULT_STEP_BUDGET,
    masking: bool = True,
    mask_rules: list[MaskRule] | None = None,
) -> list[EpisodeResult]:
    """Sequential multi-role pipeline; each stage's answer seeds the next question."""
    results = []
    current = question
    for role in stages:
        episode = run_agent(
            current, role, backend, registry,
            step_budget=step_budget, masking=masking, mask_rules=mask_rules,
        )
        results.append(episode)
        current = episode.answer or current
    return results


def transcript_jsonl(steps: list[AgentStep]) -> str:
    return "".join(json.dumps(asdict(s), ensure_ascii=False) + "\n" for s in steps)


# --- role config files ---

def parse_role_specs(text: str) -> dict[str, RoleSpec]:
    doc = yaml.safe_load(text) or {}
    roles = {}
    for entry in doc.get("roles", []):
        spec = RoleSpec(
            name=entry["name"],
            preamble=entry.get("preamble", ""),
            allowed_tools=tuple(entry.get("allowed_tools", [])),
            sop=tuple(entry.get("sop", [])),
        )
        roles[spec.name] = spec
    return roles


def load_role_specs(path: str | Path | None = None) -> dict[str, RoleSpec]:
    if path is not None:
        return parse_role_specs(Path(path).read_text(encoding="utf-8"))
    resource = resources.files("dbchat").joinpath("defaults/roles.yaml")
    return parse_role_specs(resource.read_text(encoding="utf-8"))


class RuleAgentBackend:
    """Deterministic prompt-driven agent policy, for demos and offline tests.

    Reads the tool list and prior steps out of the agent prompt and walks
    schema_analyzer -> generate_sql -> execute_sql -> final, skipping tools
    the prompt does not offer. No model involved; behavior is a pure
    function of the prompt.
    """

    _PLAN = ("schema_analyzer", "generate_sql", "execute_sql")

    def complete(self, prompt: str) -> str:
        offered = set(re.findall(r"^- ([a-z_]+):", prompt, re.MULTILINE))
        taken = re.findall(r"^Step \d+: action=(\S+)", prompt, re.MULTILINE)
        question_match = re.search(r"^Question: (.*)$", prompt, re.MULTILINE)
        question = question_match.group(1) if question_match else ""
        plan = [t for t in self._PLAN if t in offered]
        next_tool = next((t for t in plan if t not in taken), None)
        observations = [
            json.loads(m)
            for m in re.findall(r'observation=(".*")$', prompt, re.MULTILINE)
        ]
        if next_tool is None:
            tail = observations[-1] if observations else "no observations"
            return json.dumps(
                {"thought": "all steps done", "action": "final",
                 "action_input": f"Result: {tail}"}
            )
        if next_tool == "generate_sql":
            action_input = question
        elif next_tool == "execute_sql":
            drafted = [
                json.loads(m)
                for m in re.findall(
                    r'^Step \d+: action=generate_sql .*observation=(".*")$',
                    prompt, re.MULTILINE,
                )
            ]
            action_input = drafted[-1] if drafted else "select count(*) from singer"
        else:
            action_input = ""
        return json.dumps(
            {"thought": f"use {next_tool}", "action": next_tool, "action_input": action_input}
        )

    async def stream(self, request):
        yield self.complete(request.messages[-1].content if request.messages else "")


# --- built-in tools ---

def web_search_stub(query: str, fixtures_path: str | Path | None = None) -> str:
    """Canned web search served from a local fixtures file; no network, ever."""
    if fixtures_path is None:
        resource = resources.files("dbchat").joinpath("defaults/web_search_fixtures.json")
        try:
            fixtures = json.loads(resource.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError("web search fixtures file missing") from exc
    else:
        path = Path(fixtures_path)
        if not path.exists():
            raise ConfigError(f"web search fixtures file missing: {path}")
        fixtures = json.loads(path.read_text(encoding="utf-8"))
    results = fixtures.get(query, [])
    if not results:
        return "no results"
    return "\n".join(results)


def render_result_table(columns: list[str], rows: list[tuple]) -> str:
    """Small aligned text table for tool observations."""
    if not columns and not rows:
        return "(no rows)"
    cells = [[str(c) for c in row] for row in rows]
    widths = [len(c) for c in columns]
    for row in cells:
        for i, cell in enumerate(row):
            if i < len(widths):
                widths[i] = max(widths[i], len(cell))
            else:
                widths.append(len(cell))
    def fmt(row):
        return " | ".join(str(cell).ljust(widths[i]) for i, cell in enumerate(row))
    lines = [fmt(columns), "-+-".join("-" * w for w in widths)]
    lines.extend(fmt(row) for row in cells)
    if not rows:
        lines.append("(no rows)")
    return "\n".join(lines)


def builtin_tools(
    db_path: str | Path | None = None,
    kb=None,
    embedder=None,
    retrieval_k: int = 4,
    sql_backend=None,
    web_fixtures_path: str | Path | None = None,
    offline: bool = True,
    live_search_url: str | None = None,
) -> ToolRegistry:
    """Registry with the database interaction tools plus knowledge/web search."""
    from . import retrieval as retrieval_mod
    from . import text2sql as t2s
    from .config import ensure_outbound_allowed

    registry = ToolRegistry()

    def schema_analyzer_handler(_input: str) -> str:
        if db_path is None:
            raise ConfigError("no database bound to this session")
        conn = t2s.open_readonly(db_path)
        try:
            sd = t2s.analyze_schema(conn, db_id=Path(db_path).stem)
        finally:
            conn.close()
        return t2s.serialize_schema(sd)

    def generate_sql_handler(question: str) -> str:
        if db_path is None:
            raise ConfigError("no database bound to this session")
        if sql_backend is None:
            raise ConfigError("no SQL generation backend configured")
        conn = t2s.open_readonly(db_path)
        try:
            sd = t2s.analyze_schema(conn, db_id=Path(db_path).stem)
        finally:
            conn.close()
        return t2s.generate_sql(sd, question, sql_backend)

    def execute_sql_handler(sql: str) -> str:
        if db_path is None:
            raise ConfigError("no database bound to this session")
        conn = t2s.open_readonly(db_path)
        try:
            result = t2s.execute_sql(conn, sql)
        finally:
            conn.close()
        return render_result_table(result.columns, result.rows)

    def knowledge_search_handler(query: str) -> str:
        if kb is None or embedder is None:
            raise ConfigError("no knowledge base bound to this session")
        contexts = retrieval_mod.embedding_retrieve(kb, query, retrieval_k, embedder)
        return "\n".join(f"[{c.score:.4f}] {c.text}" for c in contexts)

    def web_search_handler(query: str) -> str:
        if live_search_url is not None:
            try:
                ensure_outbound_allowed(live_search_url, offline)
            except Exception as exc:
                return f"blocked: offline mode forbids web search ({exc})"
        return web_search_stub(query, web_fixtures_path)

    registry.register(Tool(
        "schema_analyzer",
        "Describe the bound database schema as model-readable text.",
        {}, schema_analyzer_handler,
    ))
    registry.register(Tool(
        "generate_sql",
        "Draft a SQL query for a natural-language question over the bound database.",
        {"question": "text"}, generate_sql_handler,
    ))
    registry.register(Tool(
        "execute_sql",
        "Run a read-only SELECT against the bound database and show the result table.",
        {"sql": "text"}, execute_sql_handler,
    ))
    registry.register(Tool(
        "knowledge_search",
        "Retrieve the most relevant knowledge-base chunks for a query.",
        {"query": "text"}, knowledge_search_handler,
    ))
    registry.register(Tool(
        "web_search",
        "Search the web (served from local fixtures unless a live endpoint is configured).",
        {"query": "text"}, web_search_handler,
    ))
    return registry
