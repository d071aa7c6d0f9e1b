"""Document loading and fixed-size chunking with overlap.

Supported sources are plain text, markdown (markup stripped), HTML (tags
stripped), and pre-extracted PDF text. Splitting is character-based with a
configurable window and overlap; an optional word-boundary snap moves each
cut left to the nearest whitespace so chunks do not split words.
"""

import json
import re
from dataclasses import dataclass
from html.parser import HTMLParser
from pathlib import Path
from typing import Iterable

from .errors import EmptyExtractionError, InvalidChunkingError, UnreadableSourceError
from .textnorm import detect_language

MEDIA_KINDS = ("plain", "markdown", "html", "pdf_text")

DEFAULT_WINDOW = 512
DEFAULT_OVERLAP = 64

# Maximum distance the word-boundary snap may move a cut to the left.
SNAP_DISTANCE = 32


@dataclass(frozen=True)
class SourceDocument:
    doc_id: str
    source_uri: str
    media_kind: str
    body: str
    language: str


@dataclass(frozen=True)
class Chunk:
    doc_id: str
    chunk_index: int
    text: str
    char_span: tuple[int, int]


_MD_RULES = [
    (re.compile(r"^```.*$", re.MULTILINE), ""),                 # fence markers
    (re.compile(r"^#{1,6}\s+", re.MULTILINE), ""),              # heading markers
    (re.compile(r"^>\s?", re.MULTILINE), ""),                   # blockquotes
    (re.compile(r"^[ \t]*[-*+]\s+", re.MULTILINE), ""),         # bullet markers
    (re.compile(r"^[ \t]*\d+\.\s+", re.MULTILINE), ""),         # numbered markers
    (re.compile(r"!\[([^\]]*)\]\([^)]*\)"), r"\1"),             # images -> alt text
    (re.compile(r"\[([^\]]+)\]\([^)]*\)"), r"\1"),              # links -> text
    (re.compile(r"(\*\*|__)(.+?)\1"), r"\2"),                   # bold
    (re.compile(r"(\*|_)(.+?)\1"), r"\2"),                      # italics
    (re.compile(r"`([^`]*)`"), r"\1"),                          # inline code
]


def strip_markdown(text: str) -> str:
    for pattern, repl in _MD_RULES:
        text = pattern.sub(repl, text)
    return text


class _TextExtractor(HTMLParser):
    _SKIP = {"script", "style"}

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.parts: list[str] = []
        self._skip_depth = 0

    def handle_starttag(self, tag, attrs):
        if tag in self._SKIP:
            self._skip_depth += 1

    def handle_endtag(self, tag):
        if tag in self._SKIP and self._skip_depth > 0:
            self._skip_depth -= 1

    def handle_data(self, data):
        if self._skip_depth == 0:
            self.parts.append(data)


def strip_html(text: str) -> str:
    extractor = _TextExtractor()
    extractor.feed(text)
    extractor.close()
    stripped = "".join(extractor.parts)
    # Collapse runs of blank lines left behind by block elements.
    return re.sub(r"\n{3,}", "\n\n", stripped).strip()


def extract_text(raw: str, media_kind: str) -> str:
    if media_kind in ("plain", "pdf_text"):
        return raw
    if media_kind == "markdown":
        return strip_markdown(raw)
    if media_kind == "html":
        return strip_html(raw)
    raise UnreadableSourceError(f"unsupported media kind: {media_kind!r}")


def load_document(uri: str, media_kind: str, doc_id: str | None = None) -> SourceDocument:
    """Read a file and extract its text body; raises on unreadable or empty sources."""
    if media_kind not in MEDIA_KINDS:
        raise UnreadableSourceError(f"unsupported media kind: {media_kind!r}")
    try:
        raw = Path(uri).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise UnreadableSourceError(f"cannot read {uri}: {exc}") from exc
    return document_from_text(raw, media_kind, source_uri=uri, doc_id=doc_id)


def document_from_text(
    raw: str, media_kind: str, source_uri: str, doc_id: str | None = None
) -> SourceDocument:
    """Build a SourceDocument from already-loaded text (inline ingestion path)."""
    body = extract_text(raw, media_kind)
    if not body.strip():
        raise EmptyExtractionError(f"empty extraction from {source_uri}")
    return SourceDocument(
        doc_id=doc_id or source_uri,
        source_uri=source_uri,
        media_kind=media_kind,
        body=body,
        language=detect_language(body),
    )


def _snap_left(body: str, cut: int, floor: int) -> int:
    """Move a cut left to just after the nearest whitespace within SNAP_DISTANCE.

    The cut never moves past `floor`, which guarantees the chunk still makes
    forward progress relative to the configured overlap.
    """
    lo = max(floor, cut - SNAP_DISTANCE)
    for pos in range(cut - 1, lo - 1, -1):
        if body[pos].isspace():
            return pos + 1
    return cut


def split_document(
    doc: SourceDocument,
    window: int = DEFAULT_WINDOW,
    overlap: int = DEFAULT_OVERLAP,
    snap_to_whitespace: bool = False,
) -> list[Chunk]:
    """Split a document body into overlapping chunks.

    Consecutive spans overlap by exactly `overlap` characters; the final
    chunk is truncated at the body end. With `snap_to_whitespace`, each
    non-final cut moves left to a word boundary (at most SNAP_DISTANCE
    characters) and the following chunk starts `overlap` before the snapped
    cut, preserving the exact-overlap contract.
    """
    if window <= 0 or overlap < 0 or overlap >= window:
        raise InvalidChunkingError(
            f"require 0 <= overlap < window, got window={window} overlap={overlap}"
        )
    body = doc.body
    chunks: list[Chunk] = []
    start = 0
    index = 0
    while start < len(body):
        end = min(start + window, len(body))
        if end < len(body) and snap_to_whitespace:
            end = _snap_left(body, end, floor=start + overlap + 1)
        chunks.append(Chunk(doc.doc_id, index, body[start:end], (start, end)))
        if end >= len(body):
            break
        start = end - overlap
        index += 1
    return chunks


@dataclass(frozen=True)
class ManifestEntry:
    uri: str
    media_kind: str
    kb_name: str


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Parse an ingest manifest: one JSON object per line with uri/media_kind/kb_name."""
    entries = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            entries.append(ManifestEntry(obj["uri"], obj["media_kind"], obj["kb_name"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise UnreadableSourceError(f"{path}:{lineno}: bad manifest line: {exc}") from exc
    return entries


def load_manifest_documents(entries: Iterable[ManifestEntry]) -> list[SourceDocument]:
    return [load_document(e.uri, e.media_kind) for e in entries]
