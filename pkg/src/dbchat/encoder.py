"""Dual-encoder embeddings and their contrastive training loop.

Two embedder kinds share one hashed n-gram feature space:

* `HashEmbedder` - the untrained baseline: an L2-normalized bag of hashed
  word unigrams and bigrams (character n-grams for text without whitespace
  word boundaries, so Chinese works through the same path).
* `DualEncoder` - separate key-side and query-side linear maps over the
  hashed feature space, trained by gradient ascent on the listwise
  objective  l = q.e0 - log sum_i exp(q.e_i)  where e_0 embeds the positive
  and e_1..e_I the sampled negatives. Maximizing l is descent on the
  cross-entropy of the positive among the I+1 candidates.
"""

import hashlib
import json
import random
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptKnowledgeBaseError,
    DimensionMismatchError,
    EmptyTextError,
    PoolTooSmallError,
    TrainingDivergedError,
)
from .textnorm import char_ngrams, is_cjk, terms

DEFAULT_DIMENSION = 64
DEFAULT_FEATURES = 1 << 16
INIT_SIGMA = 0.01
BATCH_SIZE = 32

_BIGRAM_SEP = "\x1f"


def _stable_hash(feature: str) -> int:
    digest = hashlib.blake2s(feature.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def feature_strings(text: str) -> list[str]:
    """Word unigrams+bigrams; CJK tokens decompose into character n-grams."""
    tokens = terms(text)
    if not tokens:
        return char_ngrams(text)
    feats: list[str] = []
    for tok in tokens:
        if any(is_cjk(ch) for ch in tok):
            feats.extend(char_ngrams(tok))
        else:
            feats.append(tok)
    feats.extend(f"{a}{_BIGRAM_SEP}{b}" for a, b in zip(tokens, tokens[1:]))
    return feats


@dataclass(frozen=True)
class SparseFeatures:
    """Hashed feature vector in (indices, values) form, L2-normalized."""

    indices: np.ndarray
    values: np.ndarray
    dimension: int


def hashed_features(text: str, dimension: int) -> SparseFeatures:
    if not text.strip():
        raise EmptyTextError("cannot embed empty text")
    counts: dict[int, float] = {}
    for feat in feature_strings(text):
        idx = _stable_hash(feat) % dimension
        counts[idx] = counts.get(idx, 0.0) + 1.0
    indices = np.fromiter(sorted(counts), dtype=np.int64, count=len(counts))
    values = np.array([counts[i] for i in indices], dtype=np.float64)
    values /= np.linalg.norm(values)
    return SparseFeatures(indices, values, dimension)


def densify(feats: SparseFeatures) -> np.ndarray:
    vec = np.zeros(feats.dimension, dtype=np.float64)
    vec[feats.indices] = feats.values
    return vec


class HashEmbedder:
    """Deterministic untrained embedder: L2-normalized hashed n-gram bag."""

    kind = "hash_features"

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        self.dimension = dimension

    def embed_key(self, text: str) -> np.ndarray:
        return densify(hashed_features(text, self.dimension))

    def embed_query(self, text: str) -> np.ndarray:
        return self.embed_key(text)


class DualEncoder:
    """Linear key/query encoders over the hashed feature space."""

    kind = "trained_dual"

    def __init__(self, w_key: np.ndarray, w_query: np.ndarray, seed: int = 0):
        if w_key.shape != w_query.shape:
            raise DimensionMismatchError(
                f"weight shapes differ: {w_key.shape} vs {w_query.shape}"
            )
        self.w_key = w_key
        self.w_query = w_query
        self.seed = seed

    @classmethod
    def initialize(
        cls,
        dimension: int = DEFAULT_DIMENSION,
        features: int = DEFAULT_FEATURES,
        seed: int = 0,
    ) -> "DualEncoder":
        rng = np.random.default_rng(seed)
        w_key = rng.normal(0.0, INIT_SIGMA, size=(dimension, features))
        w_query = rng.normal(0.0, INIT_SIGMA, size=(dimension, features))
        return cls(w_key, w_query, seed=seed)

    @property
    def dimension(self) -> int:
        return self.w_key.shape[0]

    @property
    def features(self) -> int:
        return self.w_key.shape[1]

    def _project(self, weights: np.ndarray, text: str) -> np.ndarray:
        feats = hashed_features(text, self.features)
        return weights[:, feats.indices] @ feats.values

    def embed_key(self, text: str) -> np.ndarray:
        return self._project(self.w_key, text)

    def embed_query(self, text: str) -> np.ndarray:
        return self._project(self.w_query, text)


Embedder = HashEmbedder | DualEncoder


def contrastive_loss(q: np.ndarray, e0: np.ndarray, negatives: list[np.ndarray]) -> float:
    """l = q.e0 - log sum_{i=0..I} exp(q.e_i), stabilized by max-subtraction.

    Always <= 0; equals -log(I+1) when all dot products coincide and tends
    to 0 as the positive dominates.
    """
    if len(negatives) < 1:
        raise ValueError("at least one negative is required")
    vectors = [e0, *negatives]
    for v in vectors:
        if v.shape != q.shape:
            raise DimensionMismatchError(f"vector shape {v.shape} != query shape {q.shape}")
    scores = np.array([float(q @ v) for v in vectors])
    peak = scores.max()
    return float(scores[0] - peak - np.log(np.exp(scores - peak).sum()))


@dataclass(frozen=True)
class TrainPair:
    query_text: str
    positive_text: str
    negatives: list[str]

    def __post_init__(self):
        if len(self.negatives) < 1:
            raise ValueError("a training pair needs at least one negative")
        if self.positive_text in self.negatives:
            raise ValueError("positive must not appear among negatives")


@dataclass
class DatasetSplit:
    train: list[TrainPair]
    dev: list[TrainPair]
    test: list[TrainPair]


def make_pairs(
    corpus: list[tuple[str, str]],
    negatives_per_pair: int = 5,
    seed: int = 0,
    split_ratio: tuple[float, float, float] = (0.7, 0.1, 0.2),
) -> DatasetSplit:
    """Sample negatives for each (query, response) pair and split train/dev/test.

    Negatives are drawn uniformly without replacement from the response pool
    excluding the pair's own positive; a 1000-pair corpus at the default
    ratio yields 700/100/200.
    """
    responses = [resp for _, resp in corpus]
    rng = random.Random(seed)
    pairs = []
    for query, positive in corpus:
        candidates = [r for r in responses if r != positive]
        if len(candidates) < negatives_per_pair:
            raise PoolTooSmallError(
                f"pool of {len(candidates)} candidates cannot supply "
                f"{negatives_per_pair} negatives"
            )
        pairs.append(TrainPair(query, positive, rng.sample(candidates, negatives_per_pair)))
    rng.shuffle(pairs)
    n = len(pairs)
    n_train = int(n * split_ratio[0])
    n_dev = int(n * split_ratio[1])
    return DatasetSplit(
        train=pairs[:n_train],
        dev=pairs[n_train:n_train + n_dev],
        test=pairs[n_train + n_dev:],
    )


def load_pairs_corpus(path: str | Path) -> list[tuple[str, str]]:
    """Read a pairs corpus file: one JSON object per line with query/response keys."""
    corpus = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            obj = json.loads(line)
            corpus.append((obj["query"], obj["response"]))
    return corpus


@dataclass
class _PairFeatures:
    query: SparseFeatures
    texts: list[SparseFeatures]  # positive first, then negatives


class _FeatureCache:
    def __init__(self, dimension: int):
        self.dimension = dimension
        self._cache: dict[str, SparseFeatures] = {}

    def get(self, text: str) -> SparseFeatures:
        feats = self._cache.get(text)
        if feats is None:
            feats = hashed_features(text, self.dimension)
            self._cache[text] = feats
        return feats

    def pair(self, p: TrainPair) -> _PairFeatures:
        return _PairFeatures(
            query=self.get(p.query_text),
            texts=[self.get(p.positive_text)] + [self.get(t) for t in p.negatives],
        )


def _pair_gradients(
    encoder: DualEncoder, pf: _PairFeatures
) -> tuple[float, dict[int, np.ndarray], dict[int, np.ndarray]]:
    """Loss and per-column gradients of l for one pair (ascent direction)."""
    xq = pf.query
    q = encoder.w_query[:, xq.indices] @ xq.values
    embs = [encoder.w_key[:, x.indices] @ x.values for x in pf.texts]
    scores = np.array([q @ e for e in embs])
    peak = scores.max()
    exp_shift = np.exp(scores - peak)
    probs = exp_shift / exp_shift.sum()
    loss = float(scores[0] - peak - np.log(exp_shift.sum()))

    coeffs = -probs
    coeffs[0] += 1.0
    # d l / d W_query = (e_0 - sum_i p_i e_i) x_q^T
    gq_vec = np.zeros_like(q)
    for c, e in zip(coeffs, embs):
        gq_vec += c * e
    grad_q: dict[int, np.ndarray] = {}
    for j, v in zip(xq.indices, xq.values):
        grad_q[int(j)] = gq_vec * v
    # d l / d W_key = sum_i (delta_i0 - p_i) q x_i^T
    grad_k: dict[int, np.ndarray] = {}
    for c, x in zip(coeffs, pf.texts):
        cq = c * q
        for j, v in zip(x.indices, x.values):
            col = int(j)
            acc = grad_k.get(col)
            if acc is None:
                grad_k[col] = cq * v
            else:
                acc += cq * v
    return loss, grad_q, grad_k


def pair_loss(encoder: DualEncoder, pair: TrainPair) -> float:
    q = encoder.embed_query(pair.query_text)
    e0 = encoder.embed_key(pair.positive_text)
    negs = [encoder.embed_key(t) for t in pair.negatives]
    return contrastive_loss(q, e0, negs)


def recall_at_1(encoder: Embedder, pairs: list[TrainPair]) -> float:
    """Fraction of pairs whose positive outscores every sampled negative."""
    if not pairs:
        return 0.0
    key_cache: dict[str, np.ndarray] = {}

    def key_vec(text: str) -> np.ndarray:
        vec = key_cache.get(text)
        if vec is None:
            vec = encoder.embed_key(text)
            key_cache[text] = vec
        return vec

    hits = 0
    for p in pairs:
        q = encoder.embed_query(p.query_text)
        scores = [float(q @ key_vec(t)) for t in [p.positive_text, *p.negatives]]
        if int(np.argmax(scores)) == 0:
            hits += 1
    return hits / len(pairs)


@dataclass
class TrainingReport:
    dev_recall_at_1: list[float] = field(default_factory=list)
    mean_train_loss: list[float] = field(default_factory=list)


def train(
    split: DatasetSplit,
    epochs: int = 20,
    learning_rate: float = 10.0,
    seed: int = 0,
    dimension: int = DEFAULT_DIMENSION,
    features: int = DEFAULT_FEATURES,
    batch_size: int = BATCH_SIZE,
) -> tuple[DualEncoder, TrainingReport]:
    """Mini-batch gradient ascent on the mean pair objective.

    Deterministic for a fixed seed (initialization and epoch shuffles come
    from one seeded generator). Dev recall@1 is recorded after each epoch;
    a non-finite loss aborts with diagnostics.
    """
    if not split.train:
        raise ValueError("empty train split")
    encoder = DualEncoder.initialize(dimension, features, seed)
    rng = np.random.default_rng(seed)
    cache = _FeatureCache(features)
    pair_feats = [cache.pair(p) for p in split.train]
    report = TrainingReport()

    for epoch in range(epochs):
        order = rng.permutation(len(pair_feats))
        epoch_losses = []
        for lo in range(0, len(order), batch_size):
            batch = [pair_feats[i] for i in order[lo:lo + batch_size]]
            acc_q: dict[int, np.ndarray] = {}
            acc_k: dict[int, np.ndarray] = {}
            for pf in batch:
                loss, grad_q, grad_k = _pair_gradients(encoder, pf)
                if not np.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, batch offset {lo}: {loss}"
                    )
                epoch_losses.append(loss)
                for col, vec in grad_q.items():
                    if col in acc_q:
                        acc_q[col] += vec
                    else:
                        acc_q[col] = vec.copy()
                for col, vec in grad_k.items():
                    if col in acc_k:
                        acc_k[col] += vec
                    else:
                        acc_k[col] = vec.copy()
            scale = learning_rate / len(batch)
            for col, vec in acc_q.items():
                encoder.w_query[:, col] += scale * vec
            for col, vec in acc_k.items():
                encoder.w_key[:, col] += scale * vec
        report.mean_train_loss.append(float(np.mean(epoch_losses)))
        report.dev_recall_at_1.append(recall_at_1(encoder, split.dev))
    return encoder, report


# --- trained-embedder file format ---
#
# magic "DBEM", u32 version, u32 kind (0 hash / 1 dual), u32 D, u32 F,
# u64 seed, then for the dual kind W_key and W_query as little-endian
# float64 blocks, and an 8-byte BLAKE2b checksum of everything before it.

_EMBEDDER_MAGIC = b"DBEM"
_EMBEDDER_VERSION = 1
_KIND_CODES = {"hash_features": 0, "trained_dual": 1}


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def save_embedder(embedder: Embedder, path: str | Path) -> None:
    parts = [
        _EMBEDDER_MAGIC,
        struct.pack("<II", _EMBEDDER_VERSION, _KIND_CODES[embedder.kind]),
    ]
    if isinstance(embedder, DualEncoder):
        parts.append(
            struct.pack("<IIQ", embedder.dimension, embedder.features, embedder.seed)
        )
        parts.append(np.ascontiguousarray(embedder.w_key, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(embedder.w_query, dtype="<f8").tobytes())
    else:
        parts.append(struct.pack("<IIQ", embedder.dimension, 0, 0))
    payload = b"".join(parts)
    Path(path).write_bytes(payload + _checksum(payload))


def load_embedder(path: str | Path) -> Embedder:
    blob = Path(path).read_bytes()
    if len(blob) < 28 or blob[:4] != _EMBEDDER_MAGIC:
        raise CorruptKnowledgeBaseError(f"{path}: not an embedder file")
    payload, digest = blob[:-8], blob[-8:]
    if _checksum(payload) != digest:
        raise CorruptKnowledgeBaseError(f"{path}: checksum mismatch")
    version, kind_code = struct.unpack_from("<II", payload, 4)
    if version != _EMBEDDER_VERSION:
        raise CorruptKnowledgeBaseError(f"{path}: unsupported version {version}")
    dimension, features, seed = struct.unpack_from("<IIQ", payload, 12)
    if kind_code == _KIND_CODES["hash_features"]:
        return HashEmbedder(dimension)
    header_len = 28  # magic + version/kind + D/F/seed
    expected = header_len + 2 * dimension * features * 8
    if len(payload) != expected:
        raise CorruptKnowledgeBaseError(f"{path}: truncated weight block")
    offset = header_len
    block = dimension * features * 8
    w_key = np.frombuffer(payload, dtype="<f8", count=dimension * features, offset=offset)
    w_query = np.frombuffer(payload, dtype="<f8", count=dimension * features, offset=offset + block)
    return DualEncoder(
        w_key.reshape(dimension, features).copy(),
        w_query.reshape(dimension, features).copy(),
        seed=seed,
    )
