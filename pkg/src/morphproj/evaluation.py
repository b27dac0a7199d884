"""Per-attribute F1, macro-F1 and POS accuracy under the Standard and Intersected settings.

A tag is scored as a set of attribute=value pairs in which the POS is one more
attribute, named ``POS``. A predicted value that differs from the gold value
counts as both a false positive and a false negative.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .corpus import AttributeValue, MorphTag, Sentence

POS_ATTRIBUTE = "POS"
MODES = ("standard", "intersected", "pos")

# Predicted POS values missing from the target inventory fall back along these chains.
POS_FALLBACKS = {
    "PROPN": ("NOUN",),
    "SYM": ("X", "PUNCT"),
    "INTJ": ("X", "PUNCT"),
    "X": ("PUNCT",),
}


def standard_remap_pos(predicted_pos: str, target_pos_inventory: Iterable[str]) -> str:
    inventory = set(target_pos_inventory)
    if predicted_pos in inventory:
        return predicted_pos
    for candidate in POS_FALLBACKS.get(predicted_pos, ()):
        if candidate in inventory:
            return candidate
    return predicted_pos


def tag_pairs(tag: MorphTag) -> dict:
    pairs = {POS_ATTRIBUTE: tag.pos}
    pairs.update(tag.attributes())
    return pairs


def _corpus_pairs(corpus: Iterable[Sentence]) -> set:
    pairs = set()
    for sentence in corpus:
        for token in sentence.tokens:
            if token.gold is not None:
                pairs.update(tag_pairs(token.gold).items())
    return pairs


@dataclass
class EvalConfig:
    mode: str = "standard"
    source_attribute_values: frozenset = frozenset()
    target_attribute_values: frozenset = frozenset()
    target_pos_inventory: frozenset = frozenset()
    # "observed": attribute types present after filtering; "shared": every shared type
    macro_over: str = "observed"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown evaluation mode {self.mode!r}")
        if self.macro_over not in ("observed", "shared"):
            raise ValueError(f"unknown macro averaging scope {self.macro_over!r}")

    @property
    def shared_attribute_values(self) -> frozenset:
        """(attribute, value) pairs seen in both training corpora, POS values included."""
        return frozenset(self.source_attribute_values & self.target_attribute_values)

    @property
    def shared_attribute_types(self) -> frozenset:
        source = {a for a, _ in self.source_attribute_values}
        target = {a for a, _ in self.target_attribute_values}
        return frozenset((source & target) | {POS_ATTRIBUTE})

    @classmethod
    def from_corpora(cls, source_train: Iterable[Sentence], target_train: Iterable[Sentence],
                     mode: str = "standard", macro_over: str = "observed") -> "EvalConfig":
        source = _corpus_pairs(source_train)
        target = _corpus_pairs(target_train)
        pos = {v for a, v in target if a == POS_ATTRIBUTE}
        return cls(mode, frozenset(source), frozenset(target), frozenset(pos), macro_over)


def _as_pairs(tag) -> dict:
    return tag_pairs(tag) if isinstance(tag, MorphTag) else dict(tag)


def standard_filter(gold_tag, pred_tag, shared_attribute_types: Iterable[str]) -> tuple:
    """Keep only shared attribute types (POS always); values are left untouched."""
    keep = set(shared_attribute_types) | {POS_ATTRIBUTE}
    gold = {a: v for a, v in _as_pairs(gold_tag).items() if a in keep}
    pred = {a: v for a, v in _as_pairs(pred_tag).items() if a in keep}
    return gold, pred


def intersected_filter(gold_tag, pred_tag, shared_attribute_values: Iterable) -> tuple:
    """Drop every attribute=value pair, on either side, that is not shared."""
    shared = {(av.attribute, av.value) if isinstance(av, AttributeValue) else tuple(av)
              for av in shared_attribute_values}
    gold = {a: v for a, v in _as_pairs(gold_tag).items() if (a, v) in shared}
    pred = {a: v for a, v in _as_pairs(pred_tag).items() if (a, v) in shared}
    return gold, pred


@dataclass
class AttributeScore:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class EvalReport:
    per_attribute: dict = field(default_factory=dict)
    macro_f1: float = 0.0
    pos_accuracy: float = 0.0
    token_count: int = 0
    mode: str = "standard"

    def to_lines(self) -> str:
        """Machine-readable report; byte-stable for equal inputs."""
        lines = []
        if self.mode != "pos":
            for attribute in sorted(self.per_attribute):
                s = self.per_attribute[attribute]
                lines.append(f"{attribute}\t{s.tp}\t{s.fp}\t{s.fn}\t{s.precision:.6f}\t{s.recall:.6f}\t{s.f1:.6f}")
            lines.append(f"MACRO_F1\t{self.macro_f1:.6f}")
        lines.append(f"POS_ACC\t{self.pos_accuracy:.6f}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        rows = [f"{'attribute':<16} {'tp':>7} {'fp':>7} {'fn':>7} {'P':>7} {'R':>7} {'F1':>7}"]
        if self.mode != "pos":
            for attribute in sorted(self.per_attribute):
                s = self.per_attribute[attribute]
                rows.append(f"{attribute:<16} {s.tp:>7} {s.fp:>7} {s.fn:>7} "
                            f"{100 * s.precision:>7.2f} {100 * s.recall:>7.2f} {100 * s.f1:>7.2f}")
            rows.append(f"{'macro F1':<16} {100 * self.macro_f1:>7.2f}")
        rows.append(f"{'POS accuracy':<16} {100 * self.pos_accuracy:>7.2f}   ({self.token_count} tokens)")
        return "\n".join(rows) + "\n"


def score_pairs(pairs: Iterable[tuple], scope: Optional[Iterable[str]] = None) -> tuple:
    """Count tp/fp/fn per attribute over (gold pairs, predicted pairs) dicts.

    Returns (per-attribute scores, macro F1). ``scope`` fixes the attribute
    types averaged over; by default every type seen on either side.
    """
    scores = {}
    for gold, pred in pairs:
        for attribute in gold.keys() | pred.keys():
            s = scores.setdefault(attribute, AttributeScore())
            g, p = gold.get(attribute), pred.get(attribute)
            if g is not None and g == p:
                s.tp += 1
                continue
            if p is not None:
                s.fp += 1
            if g is not None:
                s.fn += 1
    if scope is not None:
        for attribute in scope:
            scores.setdefault(attribute, AttributeScore())
    macro = sum(s.f1 for s in scores.values()) / len(scores) if scores else 0.0
    return scores, macro


def score(gold_corpus: Sequence[Sentence], pred_corpus: Sequence[Sentence], config: EvalConfig) -> EvalReport:
    """Compare token-aligned corpora; predictions are read from ``predicted``, else ``gold``."""
    if len(gold_corpus) != len(pred_corpus):
        raise ValueError(f"sentence count mismatch: {len(gold_corpus)} gold vs {len(pred_corpus)} predicted")
    filtered, correct_pos, total = [], 0, 0
    for number, (gs, ps) in enumerate(zip(gold_corpus, pred_corpus), 1):
        if len(gs) != len(ps):
            raise ValueError(f"sentence {number}: {len(gs)} gold tokens vs {len(ps)} predicted")
        for gt, pt in zip(gs.tokens, ps.tokens):
            gold_tag = gt.gold
            pred_tag = pt.predicted if pt.predicted is not None else pt.gold
            if gold_tag is None or pred_tag is None:
                raise ValueError(f"sentence {number}: untagged token {gt.surface!r}")
            pos = standard_remap_pos(pred_tag.pos, config.target_pos_inventory) \
                if config.target_pos_inventory else pred_tag.pos
            pred_pairs = tag_pairs(pred_tag)
            pred_pairs[POS_ATTRIBUTE] = pos
            total += 1
            correct_pos += pos == gold_tag.pos
            if config.mode == "standard":
                filtered.append(standard_filter(gold_tag, pred_pairs, config.shared_attribute_types))
            elif config.mode == "intersected":
                filtered.append(intersected_filter(gold_tag, pred_pairs, config.shared_attribute_values))
    report = EvalReport(mode=config.mode, token_count=total,
                        pos_accuracy=correct_pos / total if total else 0.0)
    if config.mode != "pos":
        if config.macro_over == "shared":
            scope = config.shared_attribute_types if config.mode == "standard" \
                else {a for a, _ in config.shared_attribute_values}
        else:
            scope = None
        report.per_attribute, report.macro_f1 = score_pairs(filtered, scope)
    return report
