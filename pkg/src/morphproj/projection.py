"""Projecting source-side tags across word alignments into training constraints.

The pipeline is: directional alignment posteriors -> intersected, thresholded
links -> per-type tag distributions -> type dictionary -> per-token permitted
tag sets (constraint lattices) for the target sentences.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .corpus import MorphTag, ParseError, Sentence, TagInventory, Token

logger = logging.getLogger(__name__)

CONSTRAINT_MODES = ("type", "type_and_token", "unambiguous_type")


@dataclass
class ProjectionConfig:
    alpha: float = 0.8
    beta: float = 0.3
    max_train_tokens: int = 2_000_000
    constraint_mode: str = "type"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if self.constraint_mode not in CONSTRAINT_MODES:
            raise ValueError(f"unknown constraint mode {self.constraint_mode!r}")


@dataclass(frozen=True)
class AlignmentLink:
    src: int
    tgt: int
    p_fwd: float
    p_rev: float


@dataclass
class SentencePair:
    source: Sentence
    target: Sentence
    links: list = field(default_factory=list)


@dataclass
class TagDistribution:
    word_type: str
    counts: Counter = field(default_factory=Counter)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def probabilities(self) -> dict:
        total = self.total
        if total == 0:
            return {}
        return {tag: c / total for tag, c in self.counts.items()}


class TypeDictionary:
    """Word type -> permitted tags. An empty entry means "any tag"."""

    def __init__(self, entries: Optional[dict] = None, inventory: Optional[TagInventory] = None):
        self.entries = dict(entries or {})
        if inventory is None:
            inventory = TagInventory(t for tags in self.entries.values() for t in sorted(tags))
        self.inventory = inventory
        for word, tags in self.entries.items():
            for tag in tags:
                if tag not in inventory:
                    raise ValueError(f"dictionary tag {tag} for {word!r} missing from inventory")

    def __contains__(self, word):
        return word in self.entries

    def __len__(self):
        return len(self.entries)

    def get(self, word: str) -> Optional[frozenset]:
        return self.entries.get(word)

    def __eq__(self, other):
        return isinstance(other, TypeDictionary) and self.entries == other.entries


def source_tag(token: Token) -> Optional[MorphTag]:
    """The tag projected from a source token: tagger output, else gold."""
    return token.predicted if token.predicted is not None else token.gold


# -- alignment ---------------------------------------------------------------

def _model1_direction(pairs: Sequence[tuple], iterations: int) -> list:
    """EM for p(generated word | conditioning word); no NULL word.

    ``pairs`` holds (conditioning tokens, generated tokens). Returns, per pair,
    an array ``post[i, j] = p(a_j = i | pair)`` whose columns sum to one.
    """
    cond_vocab, gen_vocab = {}, {}
    encoded = []
    for cond, gen in pairs:
        c = np.array([cond_vocab.setdefault(w, len(cond_vocab)) for w in cond], dtype=np.int64)
        g = np.array([gen_vocab.setdefault(w, len(gen_vocab)) for w in gen], dtype=np.int64)
        encoded.append((c, g))
    # uniform start: every co-occurring pair gets the same weight
    table = {}
    for c, g in encoded:
        for ci in c:
            for gj in g:
                table[(int(ci), int(gj))] = 1.0

    def posteriors(c, g):
        t = np.array([[table[(int(ci), int(gj))] for gj in g] for ci in c])
        return t / t.sum(axis=0, keepdims=True)

    for _ in range(iterations):
        expected = Counter()
        cond_totals = Counter()
        for c, g in encoded:
            post = posteriors(c, g)
            for a, ci in enumerate(c):
                for b, gj in enumerate(g):
                    expected[(int(ci), int(gj))] += post[a, b]
                    cond_totals[int(ci)] += post[a, b]
        table = {key: value / cond_totals[key[0]] for key, value in expected.items()}
    return [posteriors(c, g) for c, g in encoded]


def model1_align(bitext: Sequence[tuple], iterations: int = 5) -> list:
    """Train IBM Model 1 in both directions and return link posteriors.

    ``bitext`` is a list of (source tokens, target tokens). For each pair the
    result holds ``(fwd, rev)`` arrays of shape (len(source), len(target)):
    ``fwd[i, j] = p(target j aligned to source i)`` (columns sum to one) and
    ``rev[i, j] = p(source i aligned to target j)`` (rows sum to one).
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not bitext:
        raise ValueError("cannot align an empty bitext")
    for src, tgt in bitext:
        if not src or not tgt:
            raise ValueError("every bitext pair needs tokens on both sides")
    fwd = _model1_direction([(src, tgt) for src, tgt in bitext], iterations)
    rev = _model1_direction([(tgt, src) for src, tgt in bitext], iterations)
    return [(f, r.T) for f, r in zip(fwd, rev)]


def directional_links(posterior: np.ndarray, direction: str) -> dict:
    """Best link per generated word, keyed (src, tgt) -> posterior.

    ``direction="fwd"`` picks one source per target column, ``"rev"`` one
    target per source row. Ties go to the lower index.
    """
    links = {}
    if direction == "fwd":
        for j in range(posterior.shape[1]):
            i = int(np.argmax(posterior[:, j]))
            links[(i, j)] = float(posterior[i, j])
    elif direction == "rev":
        for i in range(posterior.shape[0]):
            j = int(np.argmax(posterior[i, :]))
            links[(i, j)] = float(posterior[i, j])
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return links


def intersect_and_filter(fwd_links: dict, rev_links: dict, alpha: float,
                         src_len: Optional[int] = None, tgt_len: Optional[int] = None) -> list:
    """Links present in both directions with both posteriors >= alpha."""
    for links in (fwd_links, rev_links):
        for i, j in links:
            if i < 0 or j < 0 or (src_len is not None and i >= src_len) or (tgt_len is not None and j >= tgt_len):
                raise IndexError(f"alignment link {i}-{j} out of range ({src_len}x{tgt_len})")
    kept = []
    for (i, j), p_fwd in sorted(fwd_links.items()):
        p_rev = rev_links.get((i, j))
        if p_rev is None:
            continue
        if p_fwd >= alpha and p_rev >= alpha:
            kept.append(AlignmentLink(i, j, p_fwd, p_rev))
    return kept


def select_links(links: Iterable[AlignmentLink]) -> dict:
    """At most one link per target token: max min-posterior, then lowest source."""
    best = {}
    for link in links:
        current = best.get(link.tgt)
        key = (-min(link.p_fwd, link.p_rev), link.src)
        if current is None or key < (-min(current.p_fwd, current.p_rev), current.src):
            best[link.tgt] = link
    return best


# -- type constraints --------------------------------------------------------

def accumulate_type_distributions(pairs: Iterable[SentencePair]) -> dict:
    """Count source tags over kept links, per target word type."""
    distributions = {}
    for pair in pairs:
        for link in pair.links:
            tag = source_tag(pair.source.tokens[link.src])
            if tag is None:
                raise ValueError(f"source token {pair.source.tokens[link.src].surface!r} "
                                 f"under a kept link has no tag")
            word = pair.target.tokens[link.tgt].surface
            dist = distributions.get(word)
            if dist is None:
                dist = distributions[word] = TagDistribution(word)
            dist.counts[tag] += 1
    return distributions


def merge_distributions(shards: Iterable[dict]) -> dict:
    """Sum per-shard distributions; shard order fixes key order."""
    merged = {}
    for shard in shards:
        for word, dist in shard.items():
            target = merged.get(word)
            if target is None:
                target = merged[word] = TagDistribution(word)
            target.counts.update(dist.counts)
    return merged


def projected_inventory(distributions: dict) -> TagInventory:
    """Every tag seen in any distribution, in first-occurrence order."""
    return TagInventory(tag for dist in distributions.values() for tag in dist.counts)


def build_type_dictionary(distributions: dict, beta: float,
                          inventory: Optional[TagInventory] = None) -> TypeDictionary:
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    if inventory is None:
        inventory = projected_inventory(distributions)
    entries = {}
    for word, dist in distributions.items():
        total = dist.total
        if total == 0:
            continue
        entries[word] = frozenset(tag for tag, c in dist.counts.items() if c / total >= beta)
    return TypeDictionary(entries, inventory)


def make_unambiguous(dictionary: TypeDictionary) -> TypeDictionary:
    entries = {w: tags for w, tags in dictionary.entries.items() if len(tags) == 1}
    return TypeDictionary(entries, dictionary.inventory)


def build_oracle_dictionary(gold_corpus: Iterable[Sentence]) -> TypeDictionary:
    entries, inventory = {}, TagInventory()
    for sentence in gold_corpus:
        for token in sentence.tokens:
            if token.gold is None:
                raise ValueError(f"token {token.surface!r} has no gold tag")
            inventory.add(token.gold)
            entries.setdefault(token.surface, set()).add(token.gold)
    return TypeDictionary({w: frozenset(tags) for w, tags in entries.items()}, inventory)


# -- token constraints and lattices ------------------------------------------

def token_constraint(pair: SentencePair, tgt_index: int) -> Optional[MorphTag]:
    link = select_links(pair.links).get(tgt_index)
    if link is None:
        return None
    return source_tag(pair.source.tokens[link.src])


def combine_constraints(token_tag: Optional[MorphTag], dict_entry: Optional[frozenset],
                        inventory: TagInventory) -> frozenset:
    """Permitted tag indices for one token from its token and type constraints."""
    full = frozenset(range(len(inventory)))
    if token_tag is not None and token_tag not in inventory:
        raise KeyError(f"token constraint {token_tag} is not in the inventory")
    if token_tag is None:
        if not dict_entry:
            return full
        return frozenset(inventory.lookup(t) for t in dict_entry)
    if dict_entry is None:
        return frozenset([inventory.lookup(token_tag)])
    if not dict_entry or token_tag in dict_entry:
        # an empty entry permits every tag, so it contains the token tag
        return frozenset([inventory.lookup(token_tag)])
    return frozenset(inventory.lookup(t) for t in dict_entry)


@dataclass
class ConstraintLattice:
    """Per-position permitted tag indices for one sentence."""

    sentence: Sentence
    allowed: list
    num_tags: int

    def __post_init__(self):
        if len(self.allowed) != len(self.sentence):
            raise ValueError("one allowed set per token is required")
        for tags in self.allowed:
            if not tags:
                raise ValueError("allowed tag sets must be non-empty")

    def __len__(self):
        return len(self.allowed)

    def is_constrained(self, position: int) -> bool:
        return len(self.allowed[position]) < self.num_tags

    @property
    def words(self) -> list:
        return self.sentence.words


def _lattice(sentence: Sentence, token_tags: Sequence, dictionary: TypeDictionary) -> ConstraintLattice:
    inventory = dictionary.inventory
    allowed = [
        combine_constraints(tag, dictionary.get(tok.surface), inventory)
        for tok, tag in zip(sentence.tokens, token_tags)
    ]
    return ConstraintLattice(sentence, allowed, len(inventory))


def build_lattice_corpus(pairs: Sequence[SentencePair], dictionary: TypeDictionary,
                         config: ProjectionConfig) -> list:
    """Lattices for the target side, truncated to whole sentences within the token budget."""
    mode = config.constraint_mode
    if mode not in CONSTRAINT_MODES:
        raise ValueError(f"unknown constraint mode {mode!r}")
    if mode == "unambiguous_type":
        dictionary = make_unambiguous(dictionary)
    lattices, total = [], 0
    for pair in pairs:
        n = len(pair.target)
        if total + n > config.max_train_tokens:
            break
        if mode == "type_and_token":
            chosen = select_links(pair.links)
            tags = [source_tag(pair.source.tokens[chosen[j].src]) if j in chosen else None
                    for j in range(n)]
        else:
            tags = [None] * n
        lattices.append(_lattice(pair.target, tags, dictionary))
        total += n
    return lattices


def lattices_from_sentences(sentences: Iterable[Sentence], dictionary: TypeDictionary,
                            max_tokens: Optional[int] = None) -> list:
    """Type-constraint lattices for plain sentences (no alignment needed)."""
    lattices, total = [], 0
    for sentence in sentences:
        if max_tokens is not None and total + len(sentence) > max_tokens:
            break
        lattices.append(_lattice(sentence, [None] * len(sentence), dictionary))
        total += len(sentence)
    return lattices


def gold_lattices(sentences: Iterable[Sentence], inventory: TagInventory) -> list:
    """Singleton lattices from gold tags: fully supervised training."""
    return [
        ConstraintLattice(s, [frozenset([inventory.lookup(t.gold)]) for t in s.tokens], len(inventory))
        for s in sentences
    ]


# -- file formats ------------------------------------------------------------

def parse_bitext(text: str) -> list:
    """``source tokens ||| target tokens`` per line."""
    bitext = []
    for number, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        src, sep, tgt = line.partition("|||")
        if not sep:
            raise ParseError("missing ' ||| ' separator", number)
        bitext.append((src.split(), tgt.split()))
    return bitext


def format_alignment_line(links: dict) -> str:
    return " ".join(f"{i}-{j}:{p:.6f}" for (i, j), p in sorted(links.items()))


def parse_alignment_line(line: str, number: Optional[int] = None) -> dict:
    links = {}
    for item in line.split():
        pair, sep, prob = item.partition(":")
        i, dash, j = pair.partition("-")
        try:
            if not sep or not dash:
                raise ValueError
            key = (int(i), int(j))
            p = float(prob)
        except ValueError:
            raise ParseError(f"malformed alignment item {item!r}", number) from None
        if not 0.0 <= p <= 1.0:
            raise ParseError(f"posterior out of [0, 1] in {item!r}", number)
        links[key] = p
    return links


def parse_alignments(text: str) -> list:
    return [parse_alignment_line(line, n) for n, line in enumerate(text.splitlines(), 1)]


def format_dictionary(dictionary: TypeDictionary) -> str:
    lines = []
    for word, tags in dictionary.entries.items():
        lines.append("\t".join([word] + sorted(str(t) for t in tags)))
    return "\n".join(lines) + ("\n" if lines else "")


def parse_dictionary(text: str, inventory: Optional[TagInventory] = None) -> TypeDictionary:
    entries = {}
    for number, line in enumerate(text.splitlines(), 1):
        if not line:
            continue
        word, *tags = line.split("\t")
        try:
            entries[word] = frozenset(MorphTag.parse(t) for t in tags)
        except (ValueError, ParseError) as exc:
            raise ParseError(str(exc), number) from None
    return TypeDictionary(entries, inventory)


def format_lattices(lattices: Sequence[ConstraintLattice], inventory: TagInventory) -> str:
    """Inventory header, then one ``word<TAB>tags`` line per token; ``*`` = any tag."""
    lines = [f"#tag\t{t}" for t in inventory.to_strings()]
    lines.append("")
    for lattice in lattices:
        for word, allowed in zip(lattice.words, lattice.allowed):
            if len(allowed) == len(inventory):
                lines.append(f"{word}\t*")
            else:
                lines.append("\t".join([word] + [str(inventory.tag_at(i)) for i in sorted(allowed)]))
        lines.append("")
    return "\n".join(lines)


def parse_lattices(text: str) -> tuple:
    """Inverse of :func:`format_lattices`; returns (lattices, inventory)."""
    inventory = TagInventory()
    lattices, words, allowed = [], [], []

    def flush():
        if words:
            sentence = Sentence([Token(w) for w in words])
            lattices.append(ConstraintLattice(sentence, list(allowed), len(inventory)))
            words.clear()
            allowed.clear()

    for number, line in enumerate(text.splitlines(), 1):
        if line.startswith("#tag\t"):
            inventory.add(MorphTag.parse(line.split("\t", 1)[1]))
            continue
        if not line.strip():
            flush()
            continue
        word, *tags = line.split("\t")
        if not tags:
            raise ParseError("lattice line needs at least one tag column", number)
        if tags == ["*"]:
            allowed.append(frozenset(range(len(inventory))))
        else:
            try:
                allowed.append(frozenset(inventory.lookup(MorphTag.parse(t)) for t in tags))
            except KeyError as exc:
                raise ParseError(str(exc), number) from None
        words.append(word)
    flush()
    return lattices, inventory
