"""Joint-embedding tagger trained with WARP against per-token permitted tag sets.

Inputs ``x`` are mapped to ``V x`` and tags to columns of ``W``; the score of tag
``t`` is ``W[:, t] . (V x)``. Training samples negatives outside the permitted
set until one violates the margin and weights the hinge step by the
harmonic number of the estimated rank.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import container
from .corpus import Sentence, TagInventory
from .features import (ClusterMap, EmbeddingTable, FeatureVector, FeatureVocabulary,
                       padded_embeddings, wsabie_sparse_features)

logger = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-6


@dataclass
class WsabieConfig:
    D: int = 50
    learning_rate: float = 0.01
    margin: float = 0.1
    epochs: int = 25
    norm_cap: float = 1.0
    seed: int = 0
    rank_weighting: bool = True
    context: int = 5
    cluster_window: int = 1

    def __post_init__(self):
        if self.D < 1:
            raise ValueError("D must be >= 1")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.norm_cap <= 0:
            raise ValueError("norm_cap must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def harmonic(k: int) -> float:
    """1 + 1/2 + ... + 1/k."""
    return float(sum(1.0 / i for i in range(1, k + 1)))


class FeatureExtractor:
    """Turns words in context into FeatureVectors against a shared vocabulary."""

    def __init__(self, embeddings: Optional[EmbeddingTable] = None, clusters: Optional[ClusterMap] = None,
                 vocab: Optional[FeatureVocabulary] = None, context: int = 5, cluster_window: int = 1):
        self.embeddings = embeddings
        self.clusters = clusters
        self.vocab = vocab if vocab is not None else FeatureVocabulary()
        self.context = context
        self.cluster_window = cluster_window

    @property
    def dense_dim(self) -> int:
        dim = self.embeddings.dim if self.embeddings is not None else 0
        return (2 * self.context + 1) * dim

    def sparse_ids(self, words: Sequence[str], i: int) -> np.ndarray:
        ids = {self.vocab.add(f) for f in wsabie_sparse_features(words, i, self.clusters, self.cluster_window)}
        ids.discard(None)
        return np.array(sorted(ids), dtype=np.int64)

    def sentence(self, words: Sequence[str]) -> list:
        padded = padded_embeddings(words, self.embeddings, self.context)
        width = 2 * self.context + 1
        return [FeatureVector(padded[i:i + width].ravel(), tuple(self.sparse_ids(words, i)), len(self.vocab))
                for i in range(len(words))]


@dataclass
class StepReport:
    violated: bool
    draws: int = 0
    positive: Optional[int] = None
    negative: Optional[int] = None
    rank: int = 0
    weight: float = 0.0
    skipped: bool = False


class WsabieModel:
    def __init__(self, V: np.ndarray, W: np.ndarray, inventory: TagInventory, vocab: FeatureVocabulary,
                 config: WsabieConfig, dense_dim: int = 0, clusters: Optional[ClusterMap] = None,
                 embedding_dim: int = 0):
        self.V = V
        self.W = W
        self.inventory = inventory
        self.vocab = vocab
        self.config = config
        self.dense_dim = dense_dim
        self.clusters = clusters
        self.embedding_dim = embedding_dim

    @property
    def d(self) -> int:
        return self.V.shape[1]

    @property
    def L(self) -> int:
        return self.W.shape[1]

    def embed(self, x: FeatureVector) -> np.ndarray:
        if x.d != self.d or len(x.dense) != self.dense_dim:
            raise ValueError(f"feature vector has dimension {x.d} (dense {len(x.dense)}), "
                             f"model expects {self.d} (dense {self.dense_dim})")
        phi = self.V[:, :self.dense_dim] @ x.dense if self.dense_dim else np.zeros(self.V.shape[0])
        if len(x.sparse):
            phi = phi + self.V[:, self.dense_dim + np.asarray(x.sparse, dtype=np.int64)].sum(axis=1)
        return phi

    def extractor(self, embeddings: Optional[EmbeddingTable] = None) -> FeatureExtractor:
        if self.embedding_dim and (embeddings is None or embeddings.dim != self.embedding_dim):
            raise ValueError(f"model needs {self.embedding_dim}-dimensional embeddings")
        return FeatureExtractor(embeddings if self.embedding_dim else None, self.clusters, self.vocab,
                                self.config.context, self.config.cluster_window)

    # -- persistence --

    def to_bytes(self) -> bytes:
        metadata = {
            "config": asdict(self.config),
            "inventory": self.inventory.to_strings(),
            "vocab": self.vocab.features(),
            "dense_dim": self.dense_dim,
            "embedding_dim": self.embedding_dim,
            "clusters": None if self.clusters is None else {
                "K": self.clusters.K, "words": list(self.clusters.assignment),
                "ids": list(self.clusters.assignment.values())},
        }
        return container.dumps("wsabie", metadata, {"V": self.V, "W": self.W})

    @classmethod
    def from_bytes(cls, data: bytes) -> "WsabieModel":
        _, meta, arrays = container.loads(data, "wsabie")
        clusters = None
        if meta["clusters"] is not None:
            c = meta["clusters"]
            clusters = ClusterMap(c["K"], dict(zip(c["words"], c["ids"])))
        vocab = FeatureVocabulary(meta["vocab"]).freeze()
        return cls(arrays["V"], arrays["W"], TagInventory.from_strings(meta["inventory"]), vocab,
                   WsabieConfig(**meta["config"]), meta["dense_dim"], clusters, meta["embedding_dim"])

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "WsabieModel":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def score_tags(model: WsabieModel, x: FeatureVector) -> np.ndarray:
    """f_t(x) = W_t . (V x) for every tag t."""
    return model.W.T @ model.embed(x)


def _project_columns(matrix: np.ndarray, columns: np.ndarray, cap: float):
    """Rescale the given columns whose L2 norm exceeds ``cap`` back onto the ball."""
    columns = np.unique(np.asarray(columns, dtype=np.int64))
    sub = matrix[:, columns]
    norms = np.sqrt((sub * sub).sum(axis=0))
    over = norms > cap
    if np.any(over):
        matrix[:, columns[over]] *= cap / norms[over]


def warp_step(model: WsabieModel, x: FeatureVector, allowed: Iterable[int], rng: np.random.Generator,
              rank_weighting: Optional[bool] = None) -> StepReport:
    """One WARP update for a token whose correct tags are ``allowed``."""
    cfg = model.config
    allowed = sorted(set(allowed))
    if not allowed:
        raise ValueError("allowed tag set must be non-empty")
    L = model.L
    if len(allowed) >= L:
        return StepReport(violated=False, skipped=True)
    if rank_weighting is None:
        rank_weighting = cfg.rank_weighting
    mask = np.ones(L, dtype=bool)
    mask[allowed] = False
    negatives = np.flatnonzero(mask)
    n_neg = len(negatives)

    y = allowed[int(rng.integers(len(allowed)))]
    phi = model.embed(x)
    scores = model.W.T @ phi
    threshold = scores[y] - cfg.margin
    ybar, draws = None, 0
    for draws in range(1, n_neg + 1):
        candidate = int(negatives[int(rng.integers(n_neg))])
        if scores[candidate] > threshold:
            ybar = candidate
            break
    if ybar is None:
        return StepReport(violated=False, draws=draws, positive=y)

    rank = n_neg // draws
    weight = harmonic(rank) if rank_weighting else 1.0
    step = cfg.learning_rate * weight
    grad_v = model.W[:, y] - model.W[:, ybar]
    model.W[:, y] += step * phi
    model.W[:, ybar] -= step * phi
    nd = model.dense_dim
    if nd:
        model.V[:, :nd] += step * np.outer(grad_v, x.dense)
    sparse_cols = nd + np.asarray(x.sparse, dtype=np.int64)
    if len(sparse_cols):
        model.V[:, sparse_cols] += (step * grad_v)[:, None]

    cap = cfg.norm_cap
    _project_columns(model.W, [y, ybar], cap)
    if nd:
        _project_columns(model.V, np.arange(nd), cap)
    if len(sparse_cols):
        _project_columns(model.V, sparse_cols, cap)
    return StepReport(True, draws, y, ybar, rank, weight)


def init_model(inventory: TagInventory, extractor: FeatureExtractor, config: WsabieConfig,
               rng: np.random.Generator) -> WsabieModel:
    d = extractor.dense_dim + len(extractor.vocab)
    scale = 1.0 / np.sqrt(config.D)
    V = rng.uniform(-scale, scale, size=(config.D, d))
    W = rng.uniform(-scale, scale, size=(config.D, len(inventory)))
    _project_columns(V, np.arange(d), config.norm_cap)
    _project_columns(W, np.arange(len(inventory)), config.norm_cap)
    emb_dim = extractor.embeddings.dim if extractor.embeddings is not None else 0
    return WsabieModel(V, W, inventory, extractor.vocab, config, extractor.dense_dim, extractor.clusters, emb_dim)


@dataclass
class TrainingStats:
    examples: int = 0
    updates: int = 0
    skipped_tokens: int = 0
    epoch_violations: list = field(default_factory=list)


def train(lattices: Sequence, inventory: TagInventory, config: WsabieConfig = None,
          embeddings: Optional[EmbeddingTable] = None, clusters: Optional[ClusterMap] = None,
          stats: Optional[TrainingStats] = None) -> WsabieModel:
    """Fit a model on constraint lattices; unconstrained tokens carry no signal and are skipped."""
    config = config or WsabieConfig()
    stats = stats if stats is not None else TrainingStats()
    extractor = FeatureExtractor(embeddings, clusters, FeatureVocabulary(), config.context, config.cluster_window)
    sparse = [[extractor.sparse_ids(lat.words, i) for i in range(len(lat))] for lat in lattices]
    extractor.vocab.freeze()
    examples = [(s, i) for s, lat in enumerate(lattices) for i in range(len(lat)) if lat.is_constrained(i)]
    stats.examples = len(examples)
    stats.skipped_tokens = sum(len(lat) for lat in lattices) - len(examples)
    if not examples:
        raise ValueError("no trainable tokens: every token permits the full tag inventory")

    rng = np.random.default_rng(config.seed)
    model = init_model(inventory, extractor, config, rng)
    width = 2 * config.context + 1
    vocab_size = len(extractor.vocab)
    padded_cache = {}
    for epoch in range(config.epochs):
        violations = 0
        for k in rng.permutation(len(examples)):
            s, i = examples[k]
            lattice = lattices[s]
            if embeddings is not None:
                padded = padded_cache.get(s)
                if padded is None:
                    padded = padded_cache[s] = padded_embeddings(lattice.words, embeddings, config.context)
                dense = padded[i:i + width].ravel()
            else:
                dense = np.zeros(0)
            x = FeatureVector(dense, sparse[s][i], vocab_size)
            report = warp_step(model, x, lattice.allowed[i], rng)
            violations += report.violated
        stats.epoch_violations.append(violations)
        stats.updates += violations
        logger.info("epoch %d: %d/%d margin violations", epoch + 1, violations, len(examples))
    return model


def predict_indices(model: WsabieModel, words: Sequence[str], embeddings: Optional[EmbeddingTable] = None) -> list:
    extractor = model.extractor(embeddings)
    return [int(np.argmax(score_tags(model, x))) for x in extractor.sentence(words)]


def predict(model: WsabieModel, sentence, embeddings: Optional[EmbeddingTable] = None) -> list:
    """Independent per-token argmax; ties go to the lowest tag index."""
    words = sentence.words if isinstance(sentence, Sentence) else list(sentence)
    return [model.inventory.tag_at(i) for i in predict_indices(model, words, embeddings)]
