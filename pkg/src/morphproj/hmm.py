"""Feature-HMM: log-linear transitions and emissions fit to constraint lattices.

Both distributions are locally normalized softmaxes over feature scores.
Emission features conjoin the tag with tag-independent properties of the
emitted item (word identity, suffixes, shape flags, cluster); transition
features are an indicator per tag pair plus one shared per POS pair. The
parameters maximize the marginal likelihood of each sentence summed over the
tag sequences its lattice permits, minus an L2 penalty, using L-BFGS.
"""
from __future__ import annotations

import logging
import warnings
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.optimize
import scipy.sparse as sp

from . import container
from .corpus import Sentence, TagInventory
from .features import GENERIC_UNK, ClusterMap, emission_base_features, unk_signature

logger = logging.getLogger(__name__)

# upper bound on batch_size * L * L float64 entries held during a forward pass
_BATCH_CELLS = 4_000_000


@dataclass
class HmmConfig:
    l2_strength: float = 1.0
    lbfgs_memory: int = 10
    max_iterations: int = 100
    convergence_tol: float = 1e-5
    rare_threshold: int = 1
    pos_pair_features: bool = True
    shape_flags: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.l2_strength < 0 or self.lbfgs_memory < 1 or self.max_iterations < 0 or self.convergence_tol <= 0:
            raise ValueError(f"invalid HMM configuration {self}")


class EmissionSupport:
    """Closed emission vocabulary: frequent words, UNK signatures and a generic UNK."""

    def __init__(self, items: Sequence[str]):
        self.items = list(items)
        self.index = {item: i for i, item in enumerate(self.items)}
        if GENERIC_UNK not in self.index:
            raise ValueError("emission support must contain the generic UNK item")

    def __len__(self):
        return len(self.items)

    def lookup(self, word: str) -> int:
        idx = self.index.get(word)
        if idx is None:
            idx = self.index.get(unk_signature(word))
            if idx is None:
                idx = self.index[GENERIC_UNK]
        return idx

    @classmethod
    def from_corpus(cls, sentences: Sequence[Sequence[str]], rare_threshold: int = 1) -> "EmissionSupport":
        counts = Counter(w for s in sentences for w in s)
        items = {}
        for s in sentences:
            for w in s:
                items.setdefault(w if counts[w] > rare_threshold else unk_signature(w), None)
        items.setdefault(GENERIC_UNK, None)
        return cls(list(items))


class FeatureHmm:
    def __init__(self, inventory: TagInventory, support: EmissionSupport, base_features: Sequence[str],
                 item_features: sp.csr_matrix, config: HmmConfig, theta: Optional[np.ndarray] = None,
                 clusters: Optional[ClusterMap] = None):
        self.inventory = inventory
        self.support = support
        self.base_features = list(base_features)
        self.item_features = item_features.tocsr()
        self.config = config
        self.clusters = clusters
        self.pos_values = sorted({t.pos for t in inventory})
        pos_id = {p: i for i, p in enumerate(self.pos_values)}
        L, P = len(inventory), len(self.pos_values)
        self.tag_pos = np.array([pos_id[t.pos] for t in inventory], dtype=np.int64)
        # row L of the transition table is START
        self.row_pos = np.append(self.tag_pos, P)
        self._row_onehot = np.eye(P + 1)[self.row_pos]
        self._col_onehot = np.eye(P)[self.tag_pos]
        self.shapes = {
            "emit": (L, len(self.base_features)),
            "trans": (L + 1, L),
            "pos": (P + 1, P),
        }
        size = sum(a * b for a, b in self.shapes.values())
        self.theta = np.zeros(size) if theta is None else np.asarray(theta, dtype=np.float64)
        if self.theta.shape != (size,):
            raise ValueError(f"weight vector has shape {self.theta.shape}, expected ({size},)")

    @property
    def L(self) -> int:
        return len(self.inventory)

    def _views(self, theta):
        out, offset = {}, 0
        for name, (a, b) in self.shapes.items():
            out[name] = theta[offset:offset + a * b].reshape(a, b)
            offset += a * b
        return out

    @property
    def theta_emit(self):
        return self._views(self.theta)["emit"]

    @property
    def theta_trans(self):
        return self._views(self.theta)["trans"]

    @property
    def theta_pos(self):
        return self._views(self.theta)["pos"]

    def encode(self, words: Sequence[str]) -> np.ndarray:
        return np.array([self.support.lookup(w) for w in words], dtype=np.int64)

    # -- persistence --

    def to_bytes(self) -> bytes:
        metadata = {
            # thread count is a runtime choice and must not change the file
            "config": {k: v for k, v in asdict(self.config).items() if k != "threads"},
            "inventory": self.inventory.to_strings(),
            "support": self.support.items,
            "base_features": self.base_features,
            "clusters": None if self.clusters is None else {
                "K": self.clusters.K, "words": list(self.clusters.assignment),
                "ids": list(self.clusters.assignment.values())},
        }
        A = self.item_features
        arrays = {"theta": self.theta, "feat_indptr": A.indptr.astype(np.int64),
                  "feat_indices": A.indices.astype(np.int64)}
        return container.dumps("hmm", metadata, arrays)

    @classmethod
    def from_bytes(cls, data: bytes) -> "FeatureHmm":
        _, meta, arrays = container.loads(data, "hmm")
        support = EmissionSupport(meta["support"])
        indices, indptr = arrays["feat_indices"], arrays["feat_indptr"]
        A = sp.csr_matrix((np.ones(len(indices)), indices, indptr),
                          shape=(len(support), len(meta["base_features"])))
        clusters = None
        if meta["clusters"] is not None:
            c = meta["clusters"]
            clusters = ClusterMap(c["K"], dict(zip(c["words"], c["ids"])))
        return cls(TagInventory.from_strings(meta["inventory"]), support, meta["base_features"], A,
                   HmmConfig(**meta["config"]), arrays["theta"], clusters)

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "FeatureHmm":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def build_model(lattices: Sequence, inventory: TagInventory, config: Optional[HmmConfig] = None,
                clusters: Optional[ClusterMap] = None) -> FeatureHmm:
    """Zero-weight model whose emission support and features come from ``lattices``."""
    config = config or HmmConfig()
    support = EmissionSupport.from_corpus([lat.words for lat in lattices], config.rare_threshold)
    feature_ids, rows, cols = {}, [], []
    for i, item in enumerate(support.items):
        for f in emission_base_features(item, clusters, config.shape_flags):
            rows.append(i)
            cols.append(feature_ids.setdefault(f, len(feature_ids)))
    A = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(support), len(feature_ids)))
    A.sum_duplicates()
    A.data[:] = 1.0
    return FeatureHmm(inventory, support, list(feature_ids), A, config, clusters=clusters)


# -- distributions -----------------------------------------------------------

def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def _scores(model: FeatureHmm, theta: np.ndarray):
    v = model._views(theta)
    emit = np.asarray(model.item_features @ v["emit"].T)
    trans = v["trans"].copy()
    if model.config.pos_pair_features:
        trans += v["pos"][model.row_pos][:, model.tag_pos]
    return emit, trans


def _distributions(model: FeatureHmm, theta: np.ndarray):
    emit, trans = _scores(model, theta)
    log_emit = emit - _logsumexp(emit, axis=0)[None, :]
    log_trans = trans - _logsumexp(trans, axis=1)[:, None]
    return log_emit, log_trans


def compute_distributions(model: FeatureHmm) -> tuple:
    """Log-probability tables ``(log_emit, log_trans)``.

    ``log_emit[w, t] = log p(item w | tag t)`` over the emission support;
    ``log_trans[s, t] = log p(t | s)`` with row ``L`` for START.
    """
    return _distributions(model, model.theta)


# -- lattice forward-backward ------------------------------------------------

def _allowed_mask(allowed: Sequence, L: int) -> np.ndarray:
    mask = np.full((len(allowed), L), -np.inf)
    for i, tags in enumerate(allowed):
        mask[i, sorted(tags)] = 0.0
    return mask


def _batch_forward_backward(log_trans: np.ndarray, emit_rows: np.ndarray, mask: np.ndarray,
                            want_counts: bool = True):
    """Constrained forward-backward over a batch of equal-length sentences.

    ``emit_rows``: (B, n, L) log emission scores; ``mask``: (B, n, L) with 0 for
    permitted tags and -inf otherwise. Returns (log Z per sentence, gammas
    (B, n, L), summed tag-to-tag expected transitions (L, L)).
    """
    B, n, L = emit_rows.shape
    trans = log_trans[:L]
    start = log_trans[L]
    local = emit_rows + mask
    alpha = np.empty((B, n, L))
    alpha[:, 0] = start[None, :] + local[:, 0]
    for i in range(1, n):
        alpha[:, i] = _logsumexp(alpha[:, i - 1, :, None] + trans[None], axis=1) + local[:, i]
    log_z = _logsumexp(alpha[:, n - 1], axis=1)
    if not want_counts:
        return log_z, None, None
    beta = np.zeros((B, n, L))
    xi = np.zeros((L, L))
    safe_z = np.where(np.isfinite(log_z), log_z, 0.0)
    for i in range(n - 2, -1, -1):
        nxt = local[:, i + 1] + beta[:, i + 1]
        beta[:, i] = _logsumexp(trans[None] + nxt[:, None, :], axis=2)
        joint = alpha[:, i, :, None] + trans[None] + nxt[:, None, :] - safe_z[:, None, None]
        with np.errstate(under="ignore"):
            xi += np.exp(joint[np.isfinite(log_z)]).sum(axis=0)
    with np.errstate(under="ignore"):
        gamma = np.exp(alpha + beta - safe_z[:, None, None])
    gamma[~np.isfinite(log_z)] = 0.0
    return log_z, gamma, xi


def lattice_forward_backward(log_trans: np.ndarray, log_emit_rows: np.ndarray, allowed: Sequence):
    """Single-sentence constrained forward-backward on explicit log tables.

    ``log_emit_rows[i, t] = log p(w_i | t)``. Returns (log marginal, gamma
    (n, L) posteriors, (L+1, L) expected transition counts including START).
    """
    L = log_trans.shape[1]
    mask = _allowed_mask(allowed, L)
    log_z, gamma, xi = _batch_forward_backward(log_trans, log_emit_rows[None], mask[None])
    trans_counts = np.zeros((L + 1, L))
    trans_counts[:L] = xi
    trans_counts[L] = gamma[0, 0]
    return float(log_z[0]), gamma[0], trans_counts


@dataclass
class ExpectedCounts:
    log_likelihood: float = 0.0
    emit: Optional[np.ndarray] = None
    trans: Optional[np.ndarray] = None
    sentences: int = 0
    skipped: int = 0


def constrained_log_marginal(model: FeatureHmm, lattice, tables: Optional[tuple] = None) -> tuple:
    """``(log p(words), ExpectedCounts)`` summing over the lattice's permitted sequences."""
    log_emit, log_trans = tables if tables is not None else compute_distributions(model)
    ids = model.encode(lattice.words)
    log_z, gamma, trans_counts = lattice_forward_backward(log_trans, log_emit[ids], lattice.allowed)
    counts = ExpectedCounts(log_z, np.zeros_like(log_emit), trans_counts, 1, 0)
    np.add.at(counts.emit, ids, gamma)
    if not np.isfinite(log_z):
        raise FloatingPointError("lattice admits no tag sequence with non-zero probability")
    return log_z, counts


class _EncodedCorpus:
    """Lattices bucketed by length into batches of word ids and masks."""

    def __init__(self, model: FeatureHmm, lattices: Sequence):
        L = model.L
        by_length = {}
        for lat in lattices:
            by_length.setdefault(len(lat), []).append(lat)
        self.batches = []
        batch_size = max(1, _BATCH_CELLS // max(1, L * L))
        for n in sorted(by_length):
            group = by_length[n]
            for k in range(0, len(group), batch_size):
                chunk = group[k:k + batch_size]
                ids = np.stack([model.encode(lat.words) for lat in chunk])
                mask = np.stack([_allowed_mask(lat.allowed, L) for lat in chunk])
                self.batches.append((ids, mask))


def _expected_counts(encoded: _EncodedCorpus, log_emit: np.ndarray, log_trans: np.ndarray,
                     threads: int = 1) -> ExpectedCounts:
    S, L = log_emit.shape

    def run(batch):
        ids, mask = batch
        log_z, gamma, xi = _batch_forward_backward(log_trans, log_emit[ids], mask)
        ok = np.isfinite(log_z)
        emit = np.zeros((S, L))
        np.add.at(emit, ids[ok].ravel(), gamma[ok].reshape(-1, L))
        trans = np.zeros((L + 1, L))
        trans[:L] = xi
        trans[L] = gamma[ok, 0].sum(axis=0)
        return float(log_z[ok].sum()), emit, trans, int(ok.sum()), int((~ok).sum())

    if threads > 1 and len(encoded.batches) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, encoded.batches))
    else:
        parts = [run(b) for b in encoded.batches]
    total = ExpectedCounts(0.0, np.zeros((S, L)), np.zeros((L + 1, L)))
    # fixed-order reduction keeps results independent of the thread count
    for ll, emit, trans, ok, bad in parts:
        total.log_likelihood += ll
        total.emit += emit
        total.trans += trans
        total.sentences += ok
        total.skipped += bad
    return total


def _objective(model: FeatureHmm, theta: np.ndarray, encoded: _EncodedCorpus, l2: float, threads: int = 1):
    log_emit, log_trans = _distributions(model, theta)
    counts = _expected_counts(encoded, log_emit, log_trans, threads)
    value = counts.log_likelihood - 0.5 * l2 * float(theta @ theta)
    if not np.isfinite(value):
        raise FloatingPointError("non-finite objective value")
    # d/dscore of sum_c c * log softmax(score) = c - (sum c) * p
    emit_pull = counts.emit - np.exp(log_emit) * counts.emit.sum(axis=0)[None, :]
    trans_pull = counts.trans - np.exp(log_trans) * counts.trans.sum(axis=1)[:, None]
    grad_emit = np.asarray(model.item_features.T @ emit_pull).T
    if model.config.pos_pair_features:
        grad_pos = model._row_onehot.T @ trans_pull @ model._col_onehot
    else:
        grad_pos = np.zeros(model.shapes["pos"])
    grad = np.concatenate([grad_emit.ravel(), trans_pull.ravel(), grad_pos.ravel()]) - l2 * theta
    return value, grad, counts


def objective_and_gradient(model: FeatureHmm, lattices: Sequence, config: Optional[HmmConfig] = None,
                           theta: Optional[np.ndarray] = None) -> tuple:
    """Penalized constrained log-likelihood and its gradient (to be maximized)."""
    config = config or model.config
    theta = model.theta if theta is None else theta
    value, grad, _ = _objective(model, theta, _EncodedCorpus(model, lattices), config.l2_strength, config.threads)
    return value, grad


@dataclass
class TrainingStats:
    objectives: list = field(default_factory=list)
    iterations: int = 0
    evaluations: int = 0
    skipped_sentences: int = 0
    message: str = ""


def train_lbfgs(lattices: Sequence, inventory: TagInventory, config: Optional[HmmConfig] = None,
                clusters: Optional[ClusterMap] = None, stats: Optional[TrainingStats] = None) -> FeatureHmm:
    """Fit emission and transition weights by L-BFGS from the zero vector."""
    config = config or HmmConfig()
    stats = stats if stats is not None else TrainingStats()
    model = build_model(lattices, inventory, config, clusters)
    if config.max_iterations == 0:
        return model
    encoded = _EncodedCorpus(model, lattices)
    cache = {}

    def fun(theta):
        value, grad, counts = _objective(model, theta, encoded, config.l2_strength, config.threads)
        stats.evaluations += 1
        stats.skipped_sentences = counts.skipped
        cache["last"] = value
        return -value, -grad

    def callback(intermediate_result):
        stats.objectives.append(-float(intermediate_result.fun))

    stats.objectives.append(fun(model.theta)[0] * -1.0)
    result = scipy.optimize.minimize(
        fun, model.theta.copy(), jac=True, method="L-BFGS-B", callback=callback,
        options={"maxiter": config.max_iterations, "maxcor": config.lbfgs_memory,
                 "ftol": config.convergence_tol, "gtol": 1e-10, "maxls": 40})
    stats.iterations = int(result.nit)
    stats.message = str(result.message)
    if not result.success and "ITERATIONS" not in stats.message.upper():
        warnings.warn(f"L-BFGS stopped early: {result.message}; returning best iterate", RuntimeWarning)
    model.theta = np.asarray(result.x, dtype=np.float64)
    if stats.skipped_sentences:
        logger.warning("%d sentences admit no path and were skipped", stats.skipped_sentences)
    return model


# -- decoding ----------------------------------------------------------------

def viterbi_indices(log_trans: np.ndarray, log_emit_rows: np.ndarray, allowed: Optional[Sequence] = None) -> list:
    """Best tag sequence; among equal scores the lexicographically smallest.

    Scores-to-go are computed right to left, then the path is read left to
    right taking the first index that attains each maximum.
    """
    n, L = log_emit_rows.shape
    local = log_emit_rows.copy()
    if allowed is not None:
        local = local + _allowed_mask(allowed, L)
    trans = log_trans[:L]
    togo = np.zeros((n, L))
    for i in range(n - 2, -1, -1):
        togo[i] = np.max(trans + (local[i + 1] + togo[i + 1])[None, :], axis=1)
    # same association as in the togo recursion, so tied maxima compare equal
    path = [int(np.argmax(log_trans[L] + (local[0] + togo[0])))]
    for i in range(1, n):
        path.append(int(np.argmax(trans[path[-1]] + (local[i] + togo[i]))))
    return path


def viterbi(model: FeatureHmm, sentence, allowed: Optional[Sequence] = None, tables: Optional[tuple] = None) -> list:
    """Decode over the full tag set, or over ``allowed`` per position when given."""
    words = sentence.words if isinstance(sentence, Sentence) else list(sentence)
    log_emit, log_trans = tables if tables is not None else compute_distributions(model)
    path = viterbi_indices(log_trans, log_emit[model.encode(words)], allowed)
    return [model.inventory.tag_at(i) for i in path]
