"""Tokens, sentences and composite morphological tags, plus UD-style corpus I/O.

A composite tag is a POS together with a set of ``attribute=value`` pairs,
rendered canonically as ``POS|Attr1=Val1|Attr2=Val2`` with the pairs sorted.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional, Sequence

logger = logging.getLogger(__name__)

DEFAULT_MAX_SENTENCE_LENGTH = 80
NUM_COLUMNS = 10
FORM, UPOS, FEATS = 1, 3, 5


class ParseError(ValueError):
    """Malformed corpus or feature input; carries the 1-based line/column."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)


@dataclass(frozen=True, order=True)
class AttributeValue:
    attribute: str
    value: str

    def __post_init__(self):
        for part in (self.attribute, self.value):
            if not part or "=" in part or "|" in part:
                raise ValueError(f"invalid attribute-value part {part!r}")

    def __str__(self):
        return f"{self.attribute}={self.value}"


@dataclass(frozen=True)
class MorphTag:
    """A POS plus at most one value per morphological attribute."""

    pos: str
    features: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if not self.pos or "|" in self.pos or "=" in self.pos:
            raise ValueError(f"invalid POS {self.pos!r}")
        features = frozenset(self.features)
        attributes = [av.attribute for av in features]
        if len(set(attributes)) != len(attributes):
            raise ValueError(f"duplicate attribute in tag features {sorted(attributes)}")
        object.__setattr__(self, "features", features)

    @classmethod
    def parse(cls, text: str) -> "MorphTag":
        """Inverse of ``str(tag)``."""
        pos, _, rest = text.partition("|")
        return cls(pos, parse_feats(rest) if rest else frozenset())

    def __str__(self):
        return "|".join([self.pos] + [str(av) for av in sorted(self.features)])

    def __lt__(self, other):
        return str(self) < str(other)

    @property
    def feats_field(self) -> str:
        if not self.features:
            return "_"
        return "|".join(str(av) for av in sorted(self.features))

    def attributes(self) -> dict:
        return {av.attribute: av.value for av in self.features}

    def restrict(self, keep: Iterable[str]) -> "MorphTag":
        keep = set(keep)
        kept = frozenset(av for av in self.features if av.attribute in keep)
        if kept == self.features:
            return self
        return MorphTag(self.pos, kept)


@dataclass
class Token:
    surface: str
    gold: Optional[MorphTag] = None
    predicted: Optional[MorphTag] = None
    # raw 10-column line, kept so untouched columns are written back verbatim
    columns: Optional[list] = None

    def __post_init__(self):
        if not self.surface or not self.surface.strip():
            raise ValueError("token surface must be non-empty")


@dataclass
class Sentence:
    tokens: list
    id: Optional[str] = None
    comments: list = field(default_factory=list)

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("a sentence needs at least one token")

    def __len__(self):
        return len(self.tokens)

    def __iter__(self) -> Iterator[Token]:
        return iter(self.tokens)

    @property
    def words(self) -> list:
        return [tok.surface for tok in self.tokens]


class TagInventory:
    """Dense, first-occurrence indexing of distinct composite tags."""

    def __init__(self, tags: Iterable[MorphTag] = ()):
        self.tags: list = []
        self._index: dict = {}
        self.attribute_types: set = set()
        self.attribute_values: set = set()
        for tag in tags:
            self.add(tag)

    def add(self, tag: MorphTag) -> int:
        idx = self._index.get(tag)
        if idx is None:
            idx = len(self.tags)
            self._index[tag] = idx
            self.tags.append(tag)
            for av in tag.features:
                self.attribute_types.add(av.attribute)
                self.attribute_values.add(av)
        return idx

    @property
    def L(self) -> int:
        return len(self.tags)

    def __len__(self):
        return len(self.tags)

    def __contains__(self, tag):
        return tag in self._index

    def __iter__(self):
        return iter(self.tags)

    def __eq__(self, other):
        return isinstance(other, TagInventory) and self.tags == other.tags

    def lookup(self, tag: MorphTag) -> int:
        try:
            return self._index[tag]
        except KeyError:
            raise KeyError(f"tag {tag} is not in the inventory") from None

    def get(self, tag: MorphTag) -> Optional[int]:
        return self._index.get(tag)

    def tag_at(self, index: int) -> MorphTag:
        return self.tags[index]

    def to_strings(self) -> list:
        return [str(t) for t in self.tags]

    @classmethod
    def from_strings(cls, strings: Iterable[str]) -> "TagInventory":
        return cls(MorphTag.parse(s) for s in strings)


def parse_feats(field: str, line: Optional[int] = None, column: Optional[int] = None) -> frozenset:
    """Parse a FEATS column (``_`` or ``Attr=Val|Attr=Val``) into AttributeValues."""
    if field == "_" or field == "":
        return frozenset()
    seen = {}
    for pair in field.split("|"):
        attribute, sep, value = pair.partition("=")
        if not sep or not attribute or not value or "=" in value:
            raise ParseError(f"malformed feature pair {pair!r}", line, column)
        if attribute in seen:
            raise ParseError(f"duplicate attribute {attribute!r}", line, column)
        seen[attribute] = AttributeValue(attribute, value)
    return frozenset(seen.values())


def _split_blocks(lines: Sequence[str]) -> Iterator[tuple]:
    """Yield (first_line_number, lines) for each blank-line-delimited block."""
    block, start = [], None
    for number, line in enumerate(lines, 1):
        if line.strip() == "":
            if block:
                yield start, block
            block, start = [], None
        else:
            if start is None:
                start = number
            block.append(line)
    if block:
        yield start, block


def _parse_block(start: int, block: list) -> Optional[Sentence]:
    tokens, comments, sent_id = [], [], None
    for offset, line in enumerate(block):
        number = start + offset
        if line.startswith("#"):
            comments.append(line)
            key, sep, value = line[1:].partition("=")
            if sep and key.strip() == "sent_id":
                sent_id = value.strip()
            continue
        columns = line.split("\t")
        if len(columns) != NUM_COLUMNS:
            raise ParseError(f"expected {NUM_COLUMNS} tab-separated columns, found {len(columns)}", number)
        token_id = columns[0]
        if "-" in token_id or "." in token_id:
            continue
        # FEATS column offset in characters, for error messages
        feats_col = sum(len(c) + 1 for c in columns[:FEATS]) + 1
        feats = parse_feats(columns[FEATS], number, feats_col)
        try:
            gold = MorphTag(columns[UPOS], feats)
            token = Token(columns[FORM], gold=gold, columns=columns)
        except ValueError as exc:
            raise ParseError(str(exc), number) from None
        tokens.append(token)
    if not tokens:
        return None
    return Sentence(tokens, id=sent_id, comments=comments)


def parse_corpus(text: str, max_length: int = DEFAULT_MAX_SENTENCE_LENGTH,
                 stats: Optional[Counter] = None) -> list:
    """Parse UD-style 10-column text into sentences carrying gold tags.

    Only FORM, UPOS and FEATS are interpreted. Multi-word token ranges and empty
    nodes are skipped. Sentences longer than ``max_length`` are dropped and
    counted in ``stats["sentences_excluded"]``.
    """
    stats = Counter() if stats is None else stats
    sentences = []
    for start, block in _split_blocks(text.splitlines()):
        sentence = _parse_block(start, block)
        if sentence is None:
            continue
        stats["sentences_read"] += 1
        if max_length and len(sentence) > max_length:
            stats["sentences_excluded"] += 1
            continue
        sentences.append(sentence)
    if stats["sentences_excluded"]:
        logger.info("excluded %d sentences longer than %d tokens", stats["sentences_excluded"], max_length)
    return sentences


def read_corpus(path, max_length: int = DEFAULT_MAX_SENTENCE_LENGTH, stats: Optional[Counter] = None) -> list:
    with open(path, encoding="utf-8") as f:
        return parse_corpus(f.read(), max_length=max_length, stats=stats)


def serialize_corpus(sentences: Iterable[Sentence], use_predicted: bool = False) -> str:
    """Render sentences as 10-column text.

    With ``use_predicted`` the UPOS/FEATS columns hold the predicted tags.
    Columns other than FORM, UPOS and FEATS are copied from the source line.
    """
    out = []
    for sentence in sentences:
        out.extend(sentence.comments)
        for position, token in enumerate(sentence.tokens, 1):
            tag = token.predicted if use_predicted else token.gold
            if token.columns is not None:
                columns = list(token.columns)
            else:
                columns = [str(position), token.surface] + ["_"] * (NUM_COLUMNS - 2)
            columns[FORM] = token.surface
            if tag is not None:
                columns[UPOS] = tag.pos
                columns[FEATS] = tag.feats_field
            out.append("\t".join(columns))
        out.append("")
    return "\n".join(out) + ("\n" if out else "")


def parse_raw_corpus(text: str, max_length: int = DEFAULT_MAX_SENTENCE_LENGTH,
                     stats: Optional[Counter] = None) -> list:
    """One tokenized sentence per line, tokens separated by spaces."""
    stats = Counter() if stats is None else stats
    sentences = []
    for line in text.splitlines():
        words = line.split()
        if not words:
            continue
        stats["sentences_read"] += 1
        if max_length and len(words) > max_length:
            stats["sentences_excluded"] += 1
            continue
        sentences.append(Sentence([Token(w) for w in words]))
    return sentences


def build_tag_inventory(corpus: Iterable[Sentence]) -> TagInventory:
    inventory = TagInventory()
    for sentence in corpus:
        for token in sentence.tokens:
            if token.gold is None:
                raise ValueError(f"token {token.surface!r} has no gold tag")
            inventory.add(token.gold)
    if not len(inventory):
        raise ValueError("cannot build a tag inventory from an empty corpus")
    return inventory


def restrict_to_attribute_types(corpus: Iterable[Sentence], keep: Iterable[str]) -> list:
    """Copy of ``corpus`` whose tags only keep the attributes in ``keep``."""
    keep = set(keep)
    restricted = []
    for sentence in corpus:
        tokens = [
            replace(
                token,
                gold=token.gold.restrict(keep) if token.gold is not None else None,
                predicted=token.predicted.restrict(keep) if token.predicted is not None else None,
            )
            for token in sentence.tokens
        ]
        restricted.append(Sentence(tokens, id=sentence.id, comments=list(sentence.comments)))
    return restricted


def first_n_tokens(corpus: Iterable[Sentence], n: int) -> list:
    """The first ``n`` tokens in corpus order; the last sentence may be cut short."""
    kept, total = [], 0
    for sentence in corpus:
        if total >= n:
            break
        take = min(len(sentence), n - total)
        if take < len(sentence):
            sentence = Sentence(sentence.tokens[:take], id=sentence.id, comments=list(sentence.comments))
        kept.append(sentence)
        total += take
    return kept
