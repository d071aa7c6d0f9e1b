"""Prompt construction: context selection, template rendering, PII masking.

Templates are text files with a small front-matter header. A body holds
numbered `{CONTEXT_RETRO_i}` placeholder lines and `{QUESTION}` exactly
once; the last context line expands when more contexts are supplied than
the template names, and unused placeholder lines are dropped. Rendering is
single-pass over the parsed template, so placeholder-like text inside a
question or context is never re-expanded.

Masking replaces personal identifiers (emails, phone numbers, long id
runs, card-like digit groups) with bracket tokens before any text reaches
a model backend. Replacement is left-to-right, non-overlapping, longest
match first, and idempotent.
"""

import re
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

from .errors import MissingQuestionError, TemplateError, UnsortedContextsError

DEFAULT_CONTEXT_BUDGET = 4  # default J; K defaults live in retrieval

_PLACEHOLDER_RE = re.compile(r"\{CONTEXT_RETRO_(\d+)\}|\{QUESTION\}|\{CURRENT_DATE\}")
_CONTEXT_RE = re.compile(r"\{CONTEXT_RETRO_(\d+)\}")


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    language: str
    body: str

    def __post_init__(self):
        validate_template_body(self.body)

    @property
    def context_slots(self) -> int:
        return len(_CONTEXT_RE.findall(self.body))


def validate_template_body(body: str) -> None:
    if body.count("{QUESTION}") != 1:
        raise TemplateError("template must contain {QUESTION} exactly once")
    indices = sorted(int(m) for m in _CONTEXT_RE.findall(body))
    if indices != list(range(1, len(indices) + 1)):
        raise TemplateError(
            f"context placeholders must be numbered contiguously from 1, got {indices}"
        )


def parse_template_file(path: str | Path) -> PromptTemplate:
    """Read a template file: `---` front-matter with template_id/language, then the body."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_template_text(text, origin=str(path))


def parse_template_text(text: str, origin: str = "<template>") -> PromptTemplate:
    lines = text.split("\n")
    if not lines or lines[0].strip() != "---":
        raise TemplateError(f"{origin}: missing front-matter")
    meta: dict[str, str] = {}
    body_start = None
    for i, line in enumerate(lines[1:], start=1):
        if line.strip() == "---":
            body_start = i + 1
            break
        if ":" in line:
            key, value = line.split(":", 1)
            meta[key.strip()] = value.strip()
    if body_start is None:
        raise TemplateError(f"{origin}: unterminated front-matter")
    for required in ("template_id", "language"):
        if required not in meta:
            raise TemplateError(f"{origin}: front-matter missing {required}")
    body = "\n".join(lines[body_start:])
    return PromptTemplate(meta["template_id"], meta["language"], body)


class TemplateRegistry:
    """Templates keyed by (language, task); language detection picks the entry."""

    def __init__(self):
        self._templates: dict[tuple[str, str], PromptTemplate] = {}

    def register(self, task: str, template: PromptTemplate) -> None:
        self._templates[(template.language, task)] = template

    def get(self, language: str, task: str = "rag_qa") -> PromptTemplate:
        template = self._templates.get((language, task)) or self._templates.get(("en", task))
        if template is None:
            raise TemplateError(f"no template registered for task {task!r}")
        return template


def default_registry() -> TemplateRegistry:
    registry = TemplateRegistry()
    root = resources.files("dbchat").joinpath("templates")
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".tmpl"):
            template = parse_template_text(entry.read_text(encoding="utf-8"), origin=entry.name)
            registry.register("rag_qa", template)
    return registry


def select_contexts(ranked: Sequence, j: int) -> list:
    """First min(J, len) of an already-ranked list; order must be score-descending."""
    if j < 1:
        raise ValueError("j must be >= 1")
    scores = [c.score for c in ranked]
    if any(a < b for a, b in zip(scores, scores[1:])):
        raise UnsortedContextsError("contexts must be sorted by score descending")
    return list(ranked[:j])


def _context_only_index(line: str) -> int | None:
    stripped = line.strip()
    m = _CONTEXT_RE.fullmatch(stripped)
    return int(m.group(1)) if m else None


def render_prompt(
    template: PromptTemplate,
    contexts: Sequence,
    question: str,
    now: Callable[[], datetime] | None = None,
) -> str:
    """Substitute contexts (rank order preserved) and the question into the template."""
    if not question or not question.strip():
        raise MissingQuestionError("question must be non-empty")
    texts = [c.text if hasattr(c, "text") else str(c) for c in contexts]
    slots = template.context_slots

    def substitute_inline(line: str) -> str:
        def repl(m: re.Match) -> str:
            if m.group(0) == "{QUESTION}":
                return question
            if m.group(0) == "{CURRENT_DATE}":
                clock = now or (lambda: datetime.now(timezone.utc))
                return clock().date().isoformat()
            idx = int(m.group(1))
            return texts[idx - 1] if idx <= len(texts) else ""
        return _PLACEHOLDER_RE.sub(repl, line)

    out_lines: list[str] = []
    for line in template.body.split("\n"):
        slot = _context_only_index(line)
        if slot is None:
            out_lines.append(substitute_inline(line))
        elif slot < slots or len(texts) <= slots:
            if slot <= len(texts):
                out_lines.append(texts[slot - 1])
            # unused placeholder line: dropped
        else:
            # last slot expands to carry the remaining contexts
            out_lines.extend(texts[slot - 1:])
    return "\n".join(out_lines)


# --- PII masking ---

REPLACEMENT_TOKEN_RE = re.compile(r"\[[A-Z_]+\]")


@dataclass(frozen=True)
class MaskRule:
    rule_id: str
    pattern: re.Pattern
    replacement: str


_DEFAULT_RULES_RESOURCE = ("defaults", "mask_rules.tsv")


def parse_mask_rules(text: str, origin: str = "<rules>") -> list[MaskRule]:
    """One rule per line: rule_id TAB pattern TAB replacement."""
    rules = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{origin}:{lineno}: expected 3 tab-separated fields")
        rule_id, pattern, replacement = parts
        if not REPLACEMENT_TOKEN_RE.fullmatch(replacement):
            raise ValueError(
                f"{origin}:{lineno}: replacement {replacement!r} is not a bracket token"
            )
        rules.append(MaskRule(rule_id, re.compile(pattern), replacement))
    return rules


def load_mask_rules(path: str | Path | None = None) -> list[MaskRule]:
    if path is not None:
        return parse_mask_rules(Path(path).read_text(encoding="utf-8"), origin=str(path))
    resource = resources.files("dbchat").joinpath("/".join(_DEFAULT_RULES_RESOURCE))
    return parse_mask_rules(resource.read_text(encoding="utf-8"), origin="mask_rules.tsv")


@dataclass(frozen=True)
class MaskResult:
    text: str
    spans: list[tuple[str, tuple[int, int]]]


def mask_pii(text: str, rules: list[MaskRule] | None = None) -> MaskResult:
    """Replace every rule match left-to-right, non-overlapping, longest first."""
    if rules is None:
        rules = _default_rules()
    candidates = []
    for order, rule in enumerate(rules):
        for m in rule.pattern.finditer(text):
            candidates.append((m.start(), -(m.end() - m.start()), order, m.end(), rule))
    candidates.sort(key=lambda c: c[:3])

    spans: list[tuple[str, tuple[int, int]]] = []
    pieces: list[str] = []
    cursor = 0
    for start, _neg_len, _order, end, rule in candidates:
        if start < cursor:
            continue
        pieces.append(text[cursor:start])
        pieces.append(rule.replacement)
        spans.append((rule.rule_id, (start, end)))
        cursor = end
    pieces.append(text[cursor:])
    return MaskResult("".join(pieces), spans)


_RULES_CACHE: list[MaskRule] | None = None


def _default_rules() -> list[MaskRule]:
    global _RULES_CACHE
    if _RULES_CACHE is None:
        _RULES_CACHE = load_mask_rules()
    return _RULES_CACHE
