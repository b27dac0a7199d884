from collections import Counter

import pytest
from hypothesis import given, strategies as st

from morphproj.corpus import (AttributeValue, MorphTag, ParseError, Sentence, TagInventory, Token,
                              build_tag_inventory, first_n_tokens, parse_corpus, parse_feats,
                              parse_raw_corpus, restrict_to_attribute_types, serialize_corpus)

from conftest import T, conllu_line, tagged


def test_parse_feats():
    assert parse_feats("Case=Nom|Number=Sing") == {AttributeValue("Case", "Nom"), AttributeValue("Number", "Sing")}
    assert parse_feats("_") == frozenset()


@pytest.mark.parametrize("field", ["Number=Sing|Number=Plur", "Case", "=Nom", "Case=", "Case=A=B"])
def test_parse_feats_rejects(field):
    with pytest.raises(ParseError):
        parse_feats(field)


def test_parse_error_location():
    text = conllu_line(1, "a", "NOUN", "Number=Sing|Number=Plur") + "\n"
    with pytest.raises(ParseError) as info:
        parse_corpus(text)
    assert info.value.line == 1
    assert "line 1" in str(info.value)


def test_two_token_sentence(small_conllu):
    corpus = parse_corpus(small_conllu)
    assert len(corpus) == 2
    assert corpus[0].words == ["Der", "Hund"]
    assert str(corpus[0].tokens[1].gold) == "NOUN|Case=Nom|Number=Sing"
    assert corpus[0].id == "s1"


def test_ranges_and_empty_nodes_skipped(small_conllu):
    second = parse_corpus(small_conllu)[1]
    assert second.words == ["zu", "dem", "Haus"]


def test_canonical_rendering():
    text = conllu_line(1, "dog", "NOUN", "Number=Sing") + "\n"
    assert str(parse_corpus(text)[0].tokens[0].gold) == "NOUN|Number=Sing"
    assert str(T("NOUN|Number=Sing|Case=Nom")) == "NOUN|Case=Nom|Number=Sing"
    assert T("VERB").feats_field == "_"


def test_wrong_column_count():
    with pytest.raises(ParseError):
        parse_corpus("1\tdog\tNOUN\n")


def test_length_cap_excludes():
    lines = [conllu_line(i, f"w{i}", "NOUN") for i in range(1, 82)]
    short = [conllu_line(1, "ok", "NOUN")]
    stats = Counter()
    corpus = parse_corpus("\n".join(lines + [""] + short) + "\n", max_length=80, stats=stats)
    assert len(corpus) == 1
    assert stats["sentences_excluded"] == 1
    assert stats["sentences_read"] == 2


def test_serialize_round_trip(small_conllu):
    corpus = parse_corpus(small_conllu)
    again = parse_corpus(serialize_corpus(corpus))
    assert [[t.gold for t in s] for s in again] == [[t.gold for t in s] for s in corpus]
    assert serialize_corpus(again) == serialize_corpus(corpus)


def test_serialize_predicted_keeps_other_columns():
    text = "1\tdog\tdog-lemma\tNOUN\tNN\tNumber=Sing\t0\troot\t_\tSpaceAfter=No\n"
    corpus = parse_corpus(text)
    corpus[0].tokens[0].predicted = T("VERB|Tense=Past")
    out = serialize_corpus(corpus, use_predicted=True).splitlines()[0].split("\t")
    assert out == ["1", "dog", "dog-lemma", "VERB", "NN", "Tense=Past", "0", "root", "_", "SpaceAfter=No"]


def test_inventory_first_occurrence():
    inv = build_tag_inventory([tagged([("a", "A"), ("b", "B"), ("c", "A")])])
    assert inv.L == 2
    assert inv.lookup(T("A")) == 0 and inv.lookup(T("B")) == 1
    with pytest.raises(KeyError):
        inv.lookup(T("C"))
    assert TagInventory.from_strings(inv.to_strings()) == inv


def test_inventory_errors():
    with pytest.raises(ValueError):
        build_tag_inventory([])
    with pytest.raises(ValueError):
        build_tag_inventory([Sentence([Token("x")])])


def test_inventory_attribute_sets():
    inv = build_tag_inventory([tagged([("a", "NOUN|Case=Nom|Number=Sing"), ("b", "NOUN|Case=Acc")])])
    assert inv.attribute_types == {"Case", "Number"}
    assert len(inv.attribute_values) == 3


def test_restrict():
    assert T("NOUN|Case=Nom|Number=Sing").restrict({"Number"}) == T("NOUN|Number=Sing")
    assert T("PUNCT").restrict({"Case"}) == T("PUNCT")
    corpus = [tagged([("a", "NOUN|Case=Nom|Number=Sing"), ("b", "VERB|Tense=Past")])]
    same = restrict_to_attribute_types(corpus, {"Case", "Number", "Tense"})
    assert [t.gold for t in same[0]] == [t.gold for t in corpus[0]]


def test_first_n_tokens_cuts_mid_sentence():
    corpus = [tagged([(f"w{i}", "X") for i in range(6)]) for _ in range(3)]
    cut = first_n_tokens(corpus, 10)
    assert [len(s) for s in cut] == [6, 4]
    assert len(corpus[1]) == 6


def test_raw_corpus():
    stats = Counter()
    sents = parse_raw_corpus("a b c\n\n" + " ".join("x" * 5 for _ in range(3)) + "\n", max_length=2, stats=stats)
    assert sents == [] and stats["sentences_excluded"] == 2


names = st.text(alphabet="ABCDEFGHabcdefgh", min_size=1, max_size=5)


@given(st.dictionaries(names, names, max_size=5), st.sampled_from(["NOUN", "VERB", "ADJ"]))
def test_tag_round_trip_and_order(feats, pos):
    tag = MorphTag(pos, frozenset(AttributeValue(a, v) for a, v in feats.items()))
    assert MorphTag.parse(str(tag)) == tag
    shuffled = "|".join(f"{a}={v}" for a, v in reversed(list(feats.items())))
    if feats:
        assert MorphTag(pos, parse_feats(shuffled)) == tag


@given(st.dictionaries(names, names, max_size=5), st.sets(names, max_size=4))
def test_restrict_idempotent(feats, keep):
    tag = MorphTag("NOUN", frozenset(AttributeValue(a, v) for a, v in feats.items()))
    once = tag.restrict(keep)
    assert once.restrict(keep) == once
    assert set(once.attributes()) <= set(keep)
