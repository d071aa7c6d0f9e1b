"""Top-K retrieval over a knowledge base.

Three retrievers share one result shape: exhaustive cosine scan over the
vector index, idf-weighted keyword match over the inverted index, and
1-hop term-to-chunk expansion over the graph index. Results are sorted by
score descending with ties broken by ascending chunk key, so repeated
calls return identical lists.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, EmptyKnowledgeBaseError, EmptyQueryError, ZeroVectorError
from .kb import ChunkKey, KnowledgeBase
from .textnorm import terms

DEFAULT_K = 8


@dataclass(frozen=True)
class RetrievedContext:
    chunk_key: ChunkKey
    text: str
    score: float
    retriever_kind: str


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    if u.shape != v.shape:
        raise DimensionMismatchError(f"cosine over shapes {u.shape} and {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ZeroVectorError("cosine similarity is undefined for a zero vector")
    return float(np.clip(float(u @ v) / (nu * nv), -1.0, 1.0))


def _ranked(scored: dict[ChunkKey, float], kb: KnowledgeBase, k: int, kind: str) -> list[RetrievedContext]:
    order = sorted(scored.items(), key=lambda item: (-item[1], item[0]))
    return [
        RetrievedContext(key, kb.chunk_store[key].text, score, kind)
        for key, score in order[:k]
    ]


def embedding_retrieve(
    kb: KnowledgeBase, query_text: str, k: int, embedder
) -> list[RetrievedContext]:
    """Exact top-K by cosine similarity: exhaustive scan, never approximate."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(kb) == 0:
        raise EmptyKnowledgeBaseError(f"knowledge base {kb.name!r} is empty")
    q = np.asarray(embedder.embed_query(query_text), dtype=np.float64)
    qnorm = float(np.linalg.norm(q))
    if qnorm == 0.0:
        raise ZeroVectorError("query embedded to a zero vector")
    kb.lock.acquire_read()
    try:
        keys, matrix = kb.vector_matrix()
        norms = np.linalg.norm(matrix, axis=1)
        scores = np.clip((matrix @ q) / (norms * qnorm), -1.0, 1.0)
        scored = {key: float(s) for key, s in zip(keys, scores)}
        return _ranked(scored, kb, k, "embedding")
    finally:
        kb.lock.release_read()


def keyword_retrieve(kb: KnowledgeBase, query_text: str, k: int) -> list[RetrievedContext]:
    """Boolean keyword match weighted by idf(term) = ln(1 + |kb| / df)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    query_terms = set(terms(query_text))
    if not query_terms:
        raise EmptyQueryError(f"no indexable terms in query: {query_text!r}")
    kb.lock.acquire_read()
    try:
        scored: dict[ChunkKey, float] = {}
        for term in query_terms:
            postings = kb.inverted_index.get(term)
            if not postings:
                continue
            idf = math.log(1.0 + len(kb) / len(postings))
            for key in postings:
                scored[key] = scored.get(key, 0.0) + idf
        return _ranked(scored, kb, k, "keyword")
    finally:
        kb.lock.release_read()


def graph_retrieve(kb: KnowledgeBase, query_text: str, k: int) -> list[RetrievedContext]:
    """1-hop expansion from query term nodes; score = distinct matched terms."""
    if k < 1:
        raise ValueError("k must be >= 1")
    query_terms = set(terms(query_text))
    if not query_terms:
        raise EmptyQueryError(f"no indexable terms in query: {query_text!r}")
    kb.lock.acquire_read()
    try:
        scored: dict[ChunkKey, float] = {}
        for term in query_terms:
            for key in kb.graph_terms_to_chunks.get(term, ()):
                scored[key] = scored.get(key, 0.0) + 1.0
        return _ranked(scored, kb, k, "graph")
    finally:
        kb.lock.release_read()


RETRIEVERS = {
    "embedding": embedding_retrieve,
    "keyword": keyword_retrieve,
    "graph": graph_retrieve,
}


def retrieve(
    kb: KnowledgeBase, query_text: str, k: int, retriever: str, embedder=None
) -> list[RetrievedContext]:
    if retriever == "embedding":
        return embedding_retrieve(kb, query_text, k, embedder)
    if retriever == "keyword":
        return keyword_retrieve(kb, query_text, k)
    if retriever == "graph":
        return graph_retrieve(kb, query_text, k)
    raise ValueError(f"unknown retriever: {retriever!r}")
