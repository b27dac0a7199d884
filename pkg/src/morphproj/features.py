"""Feature extraction for both taggers, word embeddings and exchange clustering."""
from __future__ import annotations

import logging
import math
import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .corpus import ParseError

logger = logging.getLogger(__name__)

BOS = "BOS"
EOS = "EOS"


# -- embeddings --------------------------------------------------------------

class EmbeddingTable:
    def __init__(self, dim: int = 64, vectors: Optional[dict] = None):
        self.dim = dim
        self.vectors = {}
        self.duplicates = 0
        self._zero = np.zeros(dim)
        for word, vec in (vectors or {}).items():
            self[word] = vec

    def __setitem__(self, word, vector):
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise ValueError(f"vector for {word!r} has shape {vector.shape}, expected ({self.dim},)")
        self.vectors[word] = vector

    def __contains__(self, word):
        return word in self.vectors

    def __len__(self):
        return len(self.vectors)

    def lookup(self, word: str) -> np.ndarray:
        return self.vectors.get(word, self._zero)


def load_embeddings(path) -> EmbeddingTable:
    """Text embeddings: ``word v1 ... vdim`` per line, optional ``count dim`` header."""
    with open(path, encoding="utf-8") as f:
        return parse_embeddings(f.read())


def parse_embeddings(text: str) -> EmbeddingTable:
    table = None
    for number, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if number == 1 and len(parts) == 2 and parts[0].isdigit() and parts[1].isdigit():
            table = EmbeddingTable(int(parts[1]))
            continue
        word, values = parts[0], parts[1:]
        if table is None:
            table = EmbeddingTable(len(values))
        if len(values) != table.dim:
            raise ParseError(f"expected {table.dim} values for {word!r}, found {len(values)}", number)
        try:
            vector = [float(v) for v in values]
        except ValueError:
            raise ParseError(f"non-numeric embedding value for {word!r}", number) from None
        if word in table:
            table.duplicates += 1
        table[word] = vector
    if table is None:
        raise ParseError("embedding file is empty")
    if table.duplicates:
        logger.warning("%d duplicate embedding rows; the last occurrence wins", table.duplicates)
    return table


def format_embeddings(table: EmbeddingTable) -> str:
    lines = [f"{len(table)} {table.dim}"]
    for word, vec in table.vectors.items():
        lines.append(" ".join([word] + [repr(float(v)) for v in vec]))
    return "\n".join(lines) + "\n"


# -- clusters ----------------------------------------------------------------

class ClusterMap:
    """Word -> cluster id; words without an assignment get the UNK id ``K``."""

    def __init__(self, K: int = 256, assignment: Optional[dict] = None):
        self.K = K
        self.assignment = dict(assignment or {})
        for word, cid in self.assignment.items():
            if not 0 <= cid < K:
                raise ValueError(f"cluster id {cid} for {word!r} outside 0..{K - 1}")

    def __getitem__(self, word) -> int:
        return self.assignment.get(word, self.K)

    def __len__(self):
        return len(self.assignment)

    def __eq__(self, other):
        return isinstance(other, ClusterMap) and self.K == other.K and self.assignment == other.assignment

    @property
    def unk(self) -> int:
        return self.K


def format_clusters(clusters: ClusterMap) -> str:
    lines = [f"#K\t{clusters.K}"]
    lines += [f"{w}\t{c}" for w, c in clusters.assignment.items()]
    return "\n".join(lines) + "\n"


def parse_clusters(text: str) -> ClusterMap:
    assignment, K = {}, None
    for number, line in enumerate(text.splitlines(), 1):
        if not line:
            continue
        if line.startswith("#K\t"):
            K = int(line.split("\t")[1])
            continue
        word, sep, cid = line.rpartition("\t")
        if not sep:
            raise ParseError("expected word<TAB>cluster_id", number)
        try:
            assignment[word] = int(cid)
        except ValueError:
            raise ParseError(f"bad cluster id {cid!r}", number) from None
    if K is None:
        K = max(assignment.values(), default=-1) + 1
    return ClusterMap(K, assignment)


def _xlogx(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


class _ExchangeState:
    """Class bigram counts for a clustering; column/row K is the fixed UNK class."""

    def __init__(self, sentences: Sequence[Sequence[int]], num_words: int, K: int, assign: np.ndarray,
                 oov_counts: Sequence[int] = ()):
        # word ids >= num_words are outside the clustered vocabulary
        self.K = K
        self.oov_term = float(_xlogx(np.asarray(oov_counts, dtype=np.float64)).sum())
        self.assign = assign
        self.word_counts = np.zeros(num_words)
        right, left = [Counter() for _ in range(num_words)], [Counter() for _ in range(num_words)]
        self_loops = np.zeros(num_words)
        bigrams = Counter()
        for sent in sentences:
            for w in sent:
                if w < num_words:
                    self.word_counts[w] += 1
            for a, b in zip(sent, sent[1:]):
                bigrams[(a, b)] += 1
        self.unk_count = sum(1 for sent in sentences for w in sent if w >= num_words)
        for (a, b), c in bigrams.items():
            if a < num_words and a == b:
                self_loops[a] += c
                continue
            if a < num_words:
                right[a][b] += c
            if b < num_words:
                left[b][a] += c
        self.right, self.left, self.self_loops = right, left, self_loops
        self.num_words = num_words
        self.bigrams = bigrams
        self._rebuild()

    def cls(self, w):
        return self.assign[w] if w < self.num_words else self.K

    def _rebuild(self):
        K = self.K
        self.M = np.zeros((K + 1, K + 1))
        for (a, b), c in self.bigrams.items():
            self.M[self.cls(a), self.cls(b)] += c
        self.N = np.zeros(K + 1)
        np.add.at(self.N, self.assign, self.word_counts)
        self.N[K] += self.unk_count

    def objective(self) -> float:
        """sum N(c1,c2) log p(c2|c1) + sum N(w) log p(w|c)."""
        P = self.M.sum(axis=1)
        words = self.word_counts[self.word_counts > 0]
        return float(_xlogx(self.M).sum() - _xlogx(P).sum() + _xlogx(words).sum() + self.oov_term
                     - _xlogx(self.N).sum())

    def _neighbour_vectors(self, w):
        r = np.zeros(self.K + 1)
        l = np.zeros(self.K + 1)
        for b, c in self.right[w].items():
            r[self.cls(b)] += c
        for a, c in self.left[w].items():
            l[self.cls(a)] += c
        return r, l

    def _move(self, w, r, l, cls, sign):
        s = self.self_loops[w]
        self.M[cls, :] += sign * r
        self.M[:, cls] += sign * l
        self.M[cls, cls] += sign * s
        self.N[cls] += sign * self.word_counts[w]

    def best_class(self, w) -> tuple:
        """Remove ``w`` from its class and score every class as its new home.

        Returns (r, l, scores) where scores[b] is the objective change
        (up to a constant shared by all b) of inserting ``w`` into class b.
        """
        K = self.K
        old = self.assign[w]
        r, l = self._neighbour_vectors(w)
        self._move(w, r, l, old, -1)
        s = self.self_loops[w]
        nw = self.word_counts[w]
        M, N = self.M[:K, :], self.N[:K]
        P = self.M.sum(axis=1)
        # row b gains r, column b gains l; only non-zero neighbour classes matter
        rn, ln = np.flatnonzero(r), np.flatnonzero(l)
        sub = M[:, rn]
        row_gain = (_xlogx(sub + r[rn][None, :]) - _xlogx(sub)).sum(axis=1)
        sub = self.M[ln, :K]
        col_gain = (_xlogx(sub + l[ln][:, None]) - _xlogx(sub)).sum(axis=0)
        diag = self.M[np.arange(K), np.arange(K)]
        idx = np.arange(K)
        counted = (_xlogx(diag + r[idx]) - _xlogx(diag)) + (_xlogx(diag + l[idx]) - _xlogx(diag))
        true_diag = _xlogx(diag + r[idx] + l[idx] + s) - _xlogx(diag)
        bigram_gain = row_gain + col_gain - counted + true_diag
        # predecessor totals: row b gains sum(r) + s + l[b]; other rows gain l[c]
        # (the l[c] part for c != b is common to all b up to the b term)
        Pb = P[:K]
        common_rows = (_xlogx(P + l) - _xlogx(P)).sum()
        pred_gain = common_rows - (_xlogx(Pb + l[:K]) - _xlogx(Pb)) \
            + (_xlogx(Pb + l[:K] + r.sum() + s) - _xlogx(Pb))
        emit_gain = _xlogx(N + nw) - _xlogx(N)
        scores = bigram_gain - pred_gain - emit_gain
        return r, l, scores

    def place(self, w, r, l, cls):
        self.assign[w] = cls
        self._move(w, r, l, cls, +1)


@dataclass
class ClusteringResult:
    clusters: ClusterMap
    objectives: list
    moves: int
    iterations: int


def induce_clusters(raw_corpus: Iterable[Sequence[str]], K: int = 256, max_words: int = 100_000,
                    max_iterations: int = 10, return_trace: bool = False):
    """Exchange-algorithm word clustering maximizing class-bigram likelihood.

    Words are ranked by frequency (ties by first occurrence); the word of rank
    r starts in class ``r mod K``. Each pass visits words in rank order and moves
    a word only when another class strictly improves the objective. Stops after
    a pass without moves or after ``max_iterations`` passes.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    sentences = [list(s) for s in raw_corpus if len(s)]
    if not sentences:
        raise ValueError("cannot cluster an empty corpus")
    counts = Counter(w for s in sentences for w in s)
    order = {w: i for i, w in enumerate(dict.fromkeys(w for s in sentences for w in s))}
    ranked = sorted(counts, key=lambda w: (-counts[w], order[w]))
    vocab = ranked[:max_words]
    ids = {w: i for i, w in enumerate(vocab)}
    # all out-of-vocabulary words share the id len(vocab)
    oov = len(vocab)
    encoded = [[ids.get(w, oov) for w in s] for s in sentences]
    assign = np.arange(len(vocab)) % K
    state = _ExchangeState(encoded, len(vocab), K, assign, [counts[w] for w in ranked[max_words:]])
    objectives = [state.objective()]
    total_moves, passes = 0, 0
    tol = 1e-9
    for passes in range(1, max_iterations + 1):
        moves = 0
        if K > 1:
            for w in range(len(vocab)):
                old = state.assign[w]
                r, l, scores = state.best_class(w)
                best = int(np.argmax(scores))
                if best != old and scores[best] > scores[old] + tol * max(1.0, abs(scores[old])):
                    state.place(w, r, l, best)
                    moves += 1
                    if return_trace:
                        objectives.append(state.objective())
                else:
                    state.place(w, r, l, old)
        total_moves += moves
        logger.info("exchange pass %d: %d moves", passes, moves)
        if moves == 0:
            break
    if not return_trace:
        objectives.append(state.objective())
    clusters = ClusterMap(K, {w: int(state.assign[i]) for i, w in enumerate(vocab)})
    if return_trace:
        return ClusteringResult(clusters, objectives, total_moves, passes)
    return clusters


def cluster_objective(sentences: Iterable[Sequence[str]], clusters: ClusterMap) -> float:
    """Class-bigram log-likelihood of ``sentences`` under ``clusters``, computed directly."""
    bigrams, pred, cls_count, word_count = Counter(), Counter(), Counter(), Counter()
    for s in sentences:
        for w in s:
            word_count[w] += 1
            cls_count[clusters[w]] += 1
        for a, b in zip(s, s[1:]):
            bigrams[(clusters[a], clusters[b])] += 1
            pred[clusters[a]] += 1
    value = sum(c * math.log(c / pred[a]) for (a, _), c in bigrams.items())
    value += sum(c * math.log(c / cls_count[clusters[w]]) for w, c in word_count.items())
    return value


# -- sparse feature vocabulary -----------------------------------------------

class FeatureVocabulary:
    def __init__(self, features: Iterable[str] = ()):
        self._ids = {}
        self.frozen = False
        for f in features:
            self.add(f)

    def add(self, feature: str) -> Optional[int]:
        fid = self._ids.get(feature)
        if fid is None and not self.frozen:
            fid = self._ids[feature] = len(self._ids)
        return fid

    def get(self, feature: str) -> Optional[int]:
        return self._ids.get(feature)

    def freeze(self) -> "FeatureVocabulary":
        self.frozen = True
        return self

    def __len__(self):
        return len(self._ids)

    def __contains__(self, feature):
        return feature in self._ids

    def features(self) -> list:
        return list(self._ids)


@dataclass
class FeatureVector:
    dense: np.ndarray
    sparse: tuple
    vocab_size: int

    @property
    def d(self) -> int:
        return len(self.dense) + self.vocab_size


def affixes(word: str, max_len: int = 3) -> list:
    n = min(max_len, len(word))
    return [f"p{k}={word[:k]}" for k in range(1, n + 1)] + [f"s{k}={word[-k:]}" for k in range(1, n + 1)]


def _offset(k: int) -> str:
    return f"{k:+d}" if k else "0"


def wsabie_sparse_features(words: Sequence[str], i: int, clusters: Optional[ClusterMap],
                           cluster_window: int = 1) -> list:
    feats = affixes(words[i])
    for k in range(-cluster_window, cluster_window + 1):
        j = i + k
        if j < 0:
            feats.append(f"{BOS}@{_offset(k)}")
        elif j >= len(words):
            feats.append(f"{EOS}@{_offset(k)}")
        elif clusters is not None:
            feats.append(f"c@{_offset(k)}={clusters[words[j]]}")
    return feats


def padded_embeddings(words: Sequence[str], embeddings: Optional[EmbeddingTable], context: int) -> np.ndarray:
    """(n + 2*context, dim) matrix with zero rows for out-of-sentence slots."""
    dim = embeddings.dim if embeddings is not None else 0
    out = np.zeros((len(words) + 2 * context, dim))
    if embeddings is not None:
        for i, w in enumerate(words):
            out[context + i] = embeddings.lookup(w)
    return out


def wsabie_features(sentence, i: int, embeddings: Optional[EmbeddingTable], clusters: Optional[ClusterMap],
                    vocab: FeatureVocabulary, context: int = 5, cluster_window: int = 1) -> FeatureVector:
    """Input vector for the token at ``i``: context embeddings plus sparse features.

    ``sentence`` may be a Sentence or a list of words. With a frozen vocabulary,
    unseen sparse features are dropped.
    """
    words = sentence.words if hasattr(sentence, "words") else list(sentence)
    if not 0 <= i < len(words):
        raise IndexError(f"token index {i} outside sentence of length {len(words)}")
    padded = padded_embeddings(words, embeddings, context)
    dense = padded[i:i + 2 * context + 1].ravel()
    ids = set()
    for f in wsabie_sparse_features(words, i, clusters, cluster_window):
        fid = vocab.add(f)
        if fid is not None:
            ids.add(fid)
    return FeatureVector(dense, tuple(sorted(ids)), len(vocab))


# -- HMM emission features ---------------------------------------------------

def is_punct(word: str) -> bool:
    return all(unicodedata.category(ch).startswith("P") for ch in word)


def has_digit(word: str) -> bool:
    return any(ch.isdigit() for ch in word)


def is_capitalized(word: str) -> bool:
    return word[:1].isupper()


UNK_PREFIX = "<unk>"


def unk_signature(word: str) -> str:
    """Surrogate emission item for rare/unseen words: suffix and shape flags."""
    return (f"{UNK_PREFIX}s={word[-3:]}|d={int(has_digit(word))}"
            f"|c={int(is_capitalized(word))}|p={int(is_punct(word))}")


GENERIC_UNK = f"{UNK_PREFIX}generic"


def emission_base_features(item: str, clusters: Optional[ClusterMap] = None, shape_flags: bool = True) -> list:
    """Tag-independent features of an emission item (a word or UNK signature)."""
    if item == GENERIC_UNK:
        return ["unk"]
    if item.startswith(UNK_PREFIX):
        fields = dict(part.split("=", 1) for part in item[len(UNK_PREFIX):].split("|"))
        suffix = fields["s"]
        feats = ["unk", f"sig={item[len(UNK_PREFIX):]}"]
        feats += [f"s{k}={suffix[-k:]}" for k in range(1, len(suffix) + 1)]
        if fields["p"] == "1":
            feats.append("punct")
        if shape_flags:
            if fields["d"] == "1":
                feats.append("digit")
            if fields["c"] == "1":
                feats.append("cap")
        if clusters is not None:
            feats.append(f"cluster={clusters.unk}")
        return feats
    feats = [f"word={item}"]
    feats += [f"s{k}={item[-k:]}" for k in range(1, min(3, len(item)) + 1)]
    if is_punct(item):
        feats.append("punct")
    if shape_flags:
        if has_digit(item):
            feats.append("digit")
        if is_capitalized(item):
            feats.append("cap")
    if clusters is not None:
        feats.append(f"cluster={clusters[item]}")
    return feats


def hmm_emission_features(word: str, tag, clusters: Optional[ClusterMap] = None, shape_flags: bool = True) -> set:
    """Emission features conjoining ``tag`` with the word's identity, suffixes, shape and cluster."""
    return {f"{tag}^{f}" for f in emission_base_features(word, clusters, shape_flags)}
