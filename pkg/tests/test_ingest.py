import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbchat.errors import EmptyExtractionError, InvalidChunkingError, UnreadableSourceError
from dbchat.ingest import (
    Chunk,
    ManifestEntry,
    SourceDocument,
    document_from_text,
    load_document,
    read_manifest,
    split_document,
    strip_html,
    strip_markdown,
)


def make_doc(body: str) -> SourceDocument:
    return SourceDocument("d", "file:///d", "plain", body, "en")


class TestLoadDocument:
    def test_plain_text_is_identity(self, tmp_path):
        path = tmp_path / "a.txt"
        path.write_text("hello world", encoding="utf-8")
        doc = load_document(str(path), "plain")
        assert doc.body == "hello world"
        assert doc.language == "en"

    def test_markdown_heading_marker_stripped(self, tmp_path):
        path = tmp_path / "a.md"
        path.write_text("# T\nbody", encoding="utf-8")
        doc = load_document(str(path), "markdown")
        assert doc.body == "T\nbody"

    def test_empty_file_is_empty_extraction(self, tmp_path):
        path = tmp_path / "empty.txt"
        path.write_text("", encoding="utf-8")
        with pytest.raises(EmptyExtractionError):
            load_document(str(path), "plain")

    def test_missing_file_is_unreadable(self, tmp_path):
        with pytest.raises(UnreadableSourceError):
            load_document(str(tmp_path / "nope.txt"), "plain")

    def test_unsupported_media_kind(self, tmp_path):
        path = tmp_path / "a.txt"
        path.write_text("x", encoding="utf-8")
        with pytest.raises(UnreadableSourceError):
            load_document(str(path), "docx")

    def test_html_tags_stripped(self):
        doc = document_from_text(
            "<html><head><style>p{}</style></head><body><p>alpha &amp; beta</p></body></html>",
            "html",
            source_uri="inline",
        )
        assert doc.body == "alpha & beta"

    def test_chinese_detected(self):
        doc = document_from_text("数据库索引的设计原则", "plain", source_uri="inline")
        assert doc.language == "zh"


class TestStripMarkdown:
    def test_links_and_emphasis(self):
        text = "See [the docs](http://x) for **bold** and `code`."
        assert strip_markdown(text) == "See the docs for bold and code."

    def test_list_markers(self):
        assert strip_markdown("- one\n- two") == "one\ntwo"


class TestSplitDocument:
    def test_window_400_overlap_50_on_1000_chars(self):
        doc = make_doc("x" * 1000)
        spans = [c.char_span for c in split_document(doc, 400, 50)]
        assert spans == [(0, 400), (350, 750), (700, 1000)]

    def test_body_shorter_than_window(self):
        doc = make_doc("short body")
        chunks = split_document(doc, 400, 50)
        assert len(chunks) == 1
        assert chunks[0].text == "short body"
        assert chunks[0].char_span == (0, 10)

    def test_empty_body_gives_zero_chunks(self):
        assert split_document(make_doc(""), 400, 50) == []

    @pytest.mark.parametrize("window,overlap", [(0, 0), (100, 100), (100, 150), (100, -1)])
    def test_invalid_parameters(self, window, overlap):
        with pytest.raises(InvalidChunkingError):
            split_document(make_doc("x" * 10), window, overlap)

    def test_snap_moves_cut_to_word_boundary(self):
        body = ("alpha " * 100).strip()
        doc = make_doc(body)
        chunks = split_document(doc, 64, 8, snap_to_whitespace=True)
        assert len(chunks) > 1
        for chunk in chunks[:-1]:
            # whitespace is dense here, so every non-final cut lands after a space
            assert chunk.text.endswith(" ")
            assert chunk.text == body[chunk.char_span[0]:chunk.char_span[1]]

    def test_snap_preserves_reconstruction(self):
        body = "the quick brown fox jumps over the lazy dog " * 30
        doc = make_doc(body)
        chunks = split_document(doc, 100, 20, snap_to_whitespace=True)
        rebuilt = chunks[0].text + "".join(c.text[20:] for c in chunks[1:])
        assert rebuilt == body


@settings(max_examples=150, deadline=None)
@given(
    body_len=st.integers(min_value=0, max_value=3000),
    window=st.integers(min_value=1, max_value=600),
    overlap_frac=st.floats(min_value=0.0, max_value=0.99),
)
def test_split_invariants(body_len, window, overlap_frac):
    overlap = min(int(window * overlap_frac), window - 1)
    body = "".join(chr(ord("a") + (i % 26)) for i in range(body_len))
    doc = make_doc(body)
    chunks = split_document(doc, window, overlap)

    # deterministic
    assert chunks == split_document(doc, window, overlap)

    if body_len == 0:
        assert chunks == []
        return

    # ordered indices, spans in bounds
    assert [c.chunk_index for c in chunks] == list(range(len(chunks)))
    for c in chunks:
        start, end = c.char_span
        assert 0 <= start < end <= len(body)
        assert c.text == body[start:end]

    # consecutive spans overlap by exactly the configured overlap
    for a, b in zip(chunks, chunks[1:]):
        assert a.char_span[1] - b.char_span[0] == overlap

    # overlap-stripped concatenation reconstructs the body exactly
    rebuilt = chunks[0].text + "".join(c.text[overlap:] for c in chunks[1:])
    assert rebuilt == body

    # every character is covered
    covered = set()
    for c in chunks:
        covered.update(range(*c.char_span))
    assert covered == set(range(len(body)))


class TestManifest:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        path.write_text(
            '{"uri": "a.txt", "media_kind": "plain", "kb_name": "k"}\n'
            '\n'
            '{"uri": "b.md", "media_kind": "markdown", "kb_name": "k2"}\n',
            encoding="utf-8",
        )
        entries = read_manifest(path)
        assert entries == [
            ManifestEntry("a.txt", "plain", "k"),
            ManifestEntry("b.md", "markdown", "k2"),
        ]

    def test_bad_line_reports_position(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        path.write_text('{"uri": "a.txt"}\n', encoding="utf-8")
        with pytest.raises(UnreadableSourceError, match="manifest"):
            read_manifest(path)
