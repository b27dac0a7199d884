"""Synthetic parallel data with a deterministic suffix -> tag target language.

Source and target sentences share a tag sequence drawn from a small tag
bigram grammar and are aligned one-to-one. Open-class target words are a
random stem plus a suffix that identifies the composite tag; closed-class
words come from a fixed list; "la" is shared by two tags, so a type
dictionary built from the bitext holds one ambiguous entry. Used for
end-to-end checks and demos.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import MorphTag, Sentence, Token
from .projection import AlignmentLink, SentencePair

TAGS = {
    "DET|Definite=Def": ("closed", ["ta", "tu", "la"]),
    "DET|Definite=Ind": ("closed", ["ena", "eni"]),
    "ADP": ("closed", ["pa", "la"]),
    "PUNCT": ("closed", [".", ","]),
    "NOUN|Number=Sing": ("open", "ium"),
    "NOUN|Number=Plur": ("open", "oka"),
    "ADJ|Degree=Pos": ("open", "ely"),
    "ADJ|Degree=Cmp": ("open", "arn"),
    "VERB|Tense=Past|VerbForm=Fin": ("open", "ited"),
    "VERB|Tense=Pres|VerbForm=Fin": ("open", "osk"),
}

# successor distributions of the tag grammar; "<s>" starts a sentence
GRAMMAR = {
    "<s>": {"DET|Definite=Def": 0.5, "DET|Definite=Ind": 0.3, "NOUN|Number=Plur": 0.2},
    "DET|Definite=Def": {"NOUN|Number=Sing": 0.5, "NOUN|Number=Plur": 0.2, "ADJ|Degree=Pos": 0.2,
                         "ADJ|Degree=Cmp": 0.1},
    "DET|Definite=Ind": {"NOUN|Number=Sing": 0.6, "ADJ|Degree=Pos": 0.3, "ADJ|Degree=Cmp": 0.1},
    "ADJ|Degree=Pos": {"NOUN|Number=Sing": 0.6, "NOUN|Number=Plur": 0.4},
    "ADJ|Degree=Cmp": {"NOUN|Number=Sing": 0.5, "NOUN|Number=Plur": 0.5},
    "NOUN|Number=Sing": {"VERB|Tense=Past|VerbForm=Fin": 0.5, "VERB|Tense=Pres|VerbForm=Fin": 0.3, "PUNCT": 0.2},
    "NOUN|Number=Plur": {"VERB|Tense=Past|VerbForm=Fin": 0.4, "VERB|Tense=Pres|VerbForm=Fin": 0.4, "PUNCT": 0.2},
    "VERB|Tense=Past|VerbForm=Fin": {"ADP": 0.5, "DET|Definite=Def": 0.3, "PUNCT": 0.2},
    "VERB|Tense=Pres|VerbForm=Fin": {"ADP": 0.4, "DET|Definite=Ind": 0.3, "PUNCT": 0.3},
    "ADP": {"DET|Definite=Def": 0.6, "DET|Definite=Ind": 0.2, "NOUN|Number=Plur": 0.2},
    "PUNCT": {"</s>": 1.0},
}

CONSONANTS = "bcdfghjklmnprstvz"
VOWELS = "aeiou"


def _stem(rng: np.random.Generator) -> str:
    syllables = int(rng.integers(1, 4))
    return "".join(CONSONANTS[rng.integers(len(CONSONANTS))] + VOWELS[rng.integers(len(VOWELS))]
                   for _ in range(syllables))


@dataclass
class SyntheticLanguage:
    seed: int = 0
    stems_per_tag: int = 400
    max_length: int = 14
    target_lexicon: dict = field(default_factory=dict)
    _stems: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)
        for tag, (kind, entry) in TAGS.items():
            if kind == "open":
                stems = set()
                while len(stems) < self.stems_per_tag:
                    stems.add(_stem(self.rng))
                self._stems[tag] = sorted(stems)

    def _tag_sequence(self) -> list:
        while True:
            tags, prev = [], "<s>"
            while True:
                options = GRAMMAR[prev]
                names = list(options)
                prev = names[int(self.rng.choice(len(names), p=np.array(list(options.values()))))]
                if prev == "</s>":
                    break
                tags.append(prev)
            if len(tags) <= self.max_length:
                return tags

    def target_word(self, tag: str, held_out: bool = False) -> str:
        kind, entry = TAGS[tag]
        if kind == "closed":
            return entry[int(self.rng.integers(len(entry)))]
        if held_out:
            return _stem(self.rng) + "x" + entry
        stems = self._stems[tag]
        # Zipf-like reuse so that frequent and rare words both occur
        k = min(int(self.rng.zipf(1.3)) - 1, len(stems) - 1)
        return stems[k] + entry

    def source_word(self, tag: str) -> str:
        kind, entry = TAGS[tag]
        if kind == "closed":
            return "src_" + entry[int(self.rng.integers(len(entry)))]
        return f"en{int(self.rng.integers(200))}_{tag.split('|')[0].lower()}"

    def sentence_pair(self) -> SentencePair:
        tags = self._tag_sequence()
        target_words = [self.target_word(t) for t in tags]
        for w, t in zip(target_words, tags):
            self.target_lexicon.setdefault(w, set()).add(MorphTag.parse(t))
        source = Sentence([Token(self.source_word(t), predicted=MorphTag.parse(t)) for t in tags])
        target = Sentence([Token(w) for w in target_words])
        links = [AlignmentLink(i, i, 1.0, 1.0) for i in range(len(tags))]
        return SentencePair(source, target, links)

    def bitext(self, n: int) -> list:
        return [self.sentence_pair() for _ in range(n)]

    def held_out(self, n: int, unseen_rate: float = 0.2) -> list:
        """Gold-tagged target sentences; a share of open-class words use unseen stems."""
        sentences = []
        for _ in range(n):
            tokens = []
            for tag in self._tag_sequence():
                fresh = TAGS[tag][0] == "open" and self.rng.random() < unseen_rate
                tokens.append(Token(self.target_word(tag, held_out=fresh), gold=MorphTag.parse(tag)))
            sentences.append(Sentence(tokens))
        return sentences
