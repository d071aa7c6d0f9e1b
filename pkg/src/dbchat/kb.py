"""Knowledge base: chunk store plus vector, inverted, and graph indexes.

One knowledge base persists as a single self-describing file: a header,
a fixed-width little-endian vector block, length-prefixed canonical-JSON
blocks for chunks and postings, and a trailing 64-bit checksum. Two saves
of the same knowledge base are byte-identical.

Concurrency contract: many readers or one exclusive writer. Batch indexing
takes the write side; retrieval takes the read side.
"""

import hashlib
import json
import struct
import threading
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import (
    CorruptKnowledgeBaseError,
    DimensionMismatchError,
    DuplicateChunkError,
)
from .ingest import Chunk
from .textnorm import terms


class ChunkKey(NamedTuple):
    doc_id: str
    chunk_index: int


class RWLock:
    """Reader-writer lock: concurrent readers, exclusive writer."""

    def __init__(self):
        self._mutex = threading.Lock()
        self._no_readers = threading.Condition(self._mutex)
        self._readers = 0
        self._writer = False

    def acquire_read(self):
        with self._mutex:
            while self._writer:
                self._no_readers.wait()
            self._readers += 1

    def release_read(self):
        with self._mutex:
            self._readers -= 1
            if self._readers == 0:
                self._no_readers.notify_all()

    def acquire_write(self):
        with self._mutex:
            while self._writer or self._readers > 0:
                self._no_readers.wait()
            self._writer = True

    def release_write(self):
        with self._mutex:
            self._writer = False
            self._no_readers.notify_all()


class KnowledgeBase:
    def __init__(self, name: str, dimension: int):
        self.name = name
        self.dimension = dimension
        self.chunk_store: dict[ChunkKey, Chunk] = {}
        self.vector_index: dict[ChunkKey, np.ndarray] = {}
        self.inverted_index: dict[str, dict[ChunkKey, int]] = {}
        self.graph_terms_to_chunks: dict[str, set[ChunkKey]] = {}
        self.graph_chunks_to_terms: dict[ChunkKey, set[str]] = {}
        self.lock = RWLock()
        self._matrix_cache: tuple[list[ChunkKey], np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.chunk_store)

    @property
    def term_count(self) -> int:
        return len(self.inverted_index)

    def sorted_keys(self) -> list[ChunkKey]:
        return sorted(self.chunk_store)

    def vector_matrix(self) -> tuple[list[ChunkKey], np.ndarray]:
        """Keys in ascending order alongside the stacked embedding matrix."""
        if self._matrix_cache is None:
            keys = self.sorted_keys()
            matrix = (
                np.vstack([self.vector_index[k] for k in keys])
                if keys
                else np.zeros((0, self.dimension))
            )
            self._matrix_cache = (keys, matrix)
        return self._matrix_cache


def index_chunks(kb: KnowledgeBase, chunks: Iterable[Chunk], embedder) -> KnowledgeBase:
    """Embed and index a batch of chunks across all three structures.

    The batch is validated in full (duplicate keys, embedding dimension,
    zero-norm embeddings) before any index is touched, so a failure leaves
    the knowledge base unchanged.
    """
    batch = list(chunks)
    seen: set[ChunkKey] = set()
    embedded: list[tuple[ChunkKey, Chunk, np.ndarray]] = []
    for chunk in batch:
        key = ChunkKey(chunk.doc_id, chunk.chunk_index)
        if key in seen or key in kb.chunk_store:
            raise DuplicateChunkError(f"chunk key already indexed: {key}")
        seen.add(key)
        vec = np.asarray(embedder.embed_key(chunk.text), dtype=np.float64)
        if vec.shape != (kb.dimension,):
            raise DimensionMismatchError(
                f"embedder produced dimension {vec.shape}, kb expects ({kb.dimension},)"
            )
        if not np.linalg.norm(vec) > 0.0:
            raise DimensionMismatchError(f"zero-norm embedding for chunk {key}")
        embedded.append((key, chunk, vec))

    kb.lock.acquire_write()
    try:
        for key, chunk, vec in embedded:
            kb.chunk_store[key] = chunk
            kb.vector_index[key] = vec
            chunk_terms = terms(chunk.text)
            for term in chunk_terms:
                postings = kb.inverted_index.setdefault(term, {})
                postings[key] = postings.get(key, 0) + 1
            distinct = set(chunk_terms)
            kb.graph_chunks_to_terms[key] = distinct
            for term in distinct:
                kb.graph_terms_to_chunks.setdefault(term, set()).add(key)
        kb._matrix_cache = None
    finally:
        kb.lock.release_write()
    return kb


def check_integrity(kb: KnowledgeBase) -> None:
    """Raise if any index references a chunk key missing from the store."""
    store = kb.chunk_store.keys()
    dangling = set(kb.vector_index) - store
    for postings in kb.inverted_index.values():
        dangling |= postings.keys() - store
    for keys in kb.graph_terms_to_chunks.values():
        dangling |= keys - store
    dangling |= kb.graph_chunks_to_terms.keys() - store
    if dangling:
        raise CorruptKnowledgeBaseError(f"dangling chunk keys: {sorted(dangling)[:5]}")


# --- on-disk format ---

_KB_MAGIC = b"DBKB"
_KB_VERSION = 1


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":")).encode(
        "utf-8"
    )


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def save(kb: KnowledgeBase, path: str | Path) -> None:
    kb.lock.acquire_read()
    try:
        keys = kb.sorted_keys()
        name_bytes = kb.name.encode("utf-8")
        header = _KB_MAGIC + struct.pack(
            "<IIQI", _KB_VERSION, kb.dimension, len(keys), len(name_bytes)
        ) + name_bytes
        vectors = b"".join(
            np.ascontiguousarray(kb.vector_index[k], dtype="<f8").tobytes() for k in keys
        )
        chunks_blob = _canonical_json(
            [
                {
                    "doc_id": c.doc_id,
                    "chunk_index": c.chunk_index,
                    "text": c.text,
                    "char_span": list(c.char_span),
                }
                for c in (kb.chunk_store[k] for k in keys)
            ]
        )
        postings_blob = _canonical_json(
            {
                term: [[k.doc_id, k.chunk_index, tf] for k, tf in sorted(postings.items())]
                for term, postings in kb.inverted_index.items()
            }
        )
        graph_blob = _canonical_json(
            {
                term: [[k.doc_id, k.chunk_index] for k in sorted(keys_)]
                for term, keys_ in kb.graph_terms_to_chunks.items()
            }
        )
        payload = b"".join(
            [
                header,
                vectors,
                struct.pack("<Q", len(chunks_blob)),
                chunks_blob,
                struct.pack("<Q", len(postings_blob)),
                postings_blob,
                struct.pack("<Q", len(graph_blob)),
                graph_blob,
            ]
        )
    finally:
        kb.lock.release_read()
    Path(path).write_bytes(payload + _checksum(payload))


class KbHeader(NamedTuple):
    version: int
    dimension: int
    chunk_count: int
    name: str


def read_header(path: str | Path) -> KbHeader:
    blob = Path(path).read_bytes()
    return _parse_header(blob, path)[0]


def _parse_header(blob: bytes, path) -> tuple[KbHeader, int]:
    if len(blob) < 28 or blob[:4] != _KB_MAGIC:
        raise CorruptKnowledgeBaseError(f"{path}: not a knowledge-base file")
    version, dimension, n_chunks, name_len = struct.unpack_from("<IIQI", blob, 4)
    if version != _KB_VERSION:
        raise CorruptKnowledgeBaseError(f"{path}: unsupported version {version}")
    name = blob[24:24 + name_len].decode("utf-8")
    return KbHeader(version, dimension, n_chunks, name), 24 + name_len


def load(path: str | Path) -> KnowledgeBase:
    blob = Path(path).read_bytes()
    if len(blob) < 36:
        raise CorruptKnowledgeBaseError(f"{path}: truncated file")
    payload, digest = blob[:-8], blob[-8:]
    if _checksum(payload) != digest:
        raise CorruptKnowledgeBaseError(f"{path}: checksum mismatch")
    header, offset = _parse_header(payload, path)
    kb = KnowledgeBase(header.name, header.dimension)

    vec_bytes = header.chunk_count * header.dimension * 8
    if offset + vec_bytes > len(payload):
        raise CorruptKnowledgeBaseError(f"{path}: truncated vector block")
    matrix = np.frombuffer(payload, dtype="<f8", count=header.chunk_count * header.dimension,
                           offset=offset).reshape(header.chunk_count, header.dimension)
    offset += vec_bytes

    def next_blob(off: int) -> tuple[bytes, int]:
        if off + 8 > len(payload):
            raise CorruptKnowledgeBaseError(f"{path}: truncated block header")
        (length,) = struct.unpack_from("<Q", payload, off)
        off += 8
        if off + length > len(payload):
            raise CorruptKnowledgeBaseError(f"{path}: truncated block")
        return payload[off:off + length], off + length

    chunks_blob, offset = next_blob(offset)
    postings_blob, offset = next_blob(offset)
    graph_blob, offset = next_blob(offset)
    if offset != len(payload):
        raise CorruptKnowledgeBaseError(f"{path}: trailing bytes after final block")

    records = json.loads(chunks_blob)
    if len(records) != header.chunk_count:
        raise CorruptKnowledgeBaseError(f"{path}: chunk count mismatch")
    for row, rec in zip(matrix, records):
        key = ChunkKey(rec["doc_id"], rec["chunk_index"])
        kb.chunk_store[key] = Chunk(
            rec["doc_id"], rec["chunk_index"], rec["text"], tuple(rec["char_span"])
        )
        kb.vector_index[key] = row.copy()
    for term, postings in json.loads(postings_blob).items():
        kb.inverted_index[term] = {
            ChunkKey(doc, idx): tf for doc, idx, tf in postings
        }
    for term, keys_ in json.loads(graph_blob).items():
        key_set = {ChunkKey(doc, idx) for doc, idx in keys_}
        kb.graph_terms_to_chunks[term] = key_set
        for key in key_set:
            kb.graph_chunks_to_terms.setdefault(key, set()).add(term)
    check_integrity(kb)
    return kb
