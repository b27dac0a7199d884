import pytest

from morphproj.corpus import AttributeValue
from morphproj.evaluation import (AttributeScore, EvalConfig, intersected_filter, score, score_pairs,
                                  standard_filter, standard_remap_pos)

from conftest import T, tagged

FIXTURE_REPORT = (
    "Case\t1\t1\t1\t0.500000\t0.500000\t0.500000\n"
    "POS\t2\t0\t0\t1.000000\t1.000000\t1.000000\n"
    "MACRO_F1\t0.750000\n"
    "POS_ACC\t1.000000\n"
)


def fixture_corpora():
    gold = [tagged([("a", "NOUN|Case=Nom"), ("b", "NOUN|Case=Acc")])]
    pred = [tagged([("a", "NOUN|Case=Nom"), ("b", "NOUN|Case=Dat")])]
    return gold, pred


def open_config(mode="standard", macro_over="observed"):
    pairs = frozenset({("POS", "NOUN"), ("Case", "Nom"), ("Case", "Acc"), ("Case", "Dat")})
    return EvalConfig(mode, pairs, pairs, frozenset({"NOUN"}), macro_over)


def test_macro_fixture():
    gold, pred = fixture_corpora()
    report = score(gold, pred, open_config())
    case = report.per_attribute["Case"]
    assert (case.tp, case.fp, case.fn) == (1, 1, 1)
    assert case.precision == case.recall == case.f1 == 0.5
    assert report.per_attribute["POS"].f1 == 1.0
    assert report.macro_f1 == 0.75
    assert report.pos_accuracy == 1.0


def test_report_byte_stable():
    gold, pred = fixture_corpora()
    first = score(gold, pred, open_config()).to_lines()
    assert first == FIXTURE_REPORT
    assert score(gold, pred, open_config()).to_lines().encode() == first.encode()


@pytest.mark.parametrize("predicted, inventory, expected", [
    ("PROPN", {"NOUN", "VERB"}, "NOUN"),
    ("X", {"NOUN", "PUNCT"}, "PUNCT"),
    ("PROPN", {"PROPN", "NOUN"}, "PROPN"),
    ("SYM", {"X", "PUNCT"}, "X"),
    ("SYM", {"PUNCT"}, "PUNCT"),
    ("AUX", {"VERB"}, "AUX"),
])
def test_pos_remap(predicted, inventory, expected):
    assert standard_remap_pos(predicted, inventory) == expected


def test_remap_applied_in_scoring():
    gold = [tagged([("Oslo", "NOUN")])]
    pred = [tagged([("Oslo", "PROPN")])]
    config = EvalConfig("pos", target_pos_inventory=frozenset({"NOUN"}))
    assert score(gold, pred, config).pos_accuracy == 1.0


def test_standard_filter():
    gold, pred = standard_filter(T("NOUN|Case=Nom|Gender=Neut"), T("NOUN|Case=Ess"), {"POS", "Case"})
    assert gold == {"POS": "NOUN", "Case": "Nom"}
    assert pred == {"POS": "NOUN", "Case": "Ess"}
    everything = {"POS", "Case", "Gender"}
    assert standard_filter(T("NOUN|Case=Nom|Gender=Neut"), T("VERB"), everything)[0] == \
        {"POS": "NOUN", "Case": "Nom", "Gender": "Neut"}


def test_intersected_filter():
    shared = {("POS", "NOUN"), ("Case", "Nom")}
    gold, pred = intersected_filter(T("NOUN|Case=Ess"), T("NOUN|Case=Nom"), shared)
    assert gold == {"POS": "NOUN"}
    assert pred == {"POS": "NOUN", "Case": "Nom"}
    assert intersected_filter(T("NOUN|Case=Ess"), T("NOUN"), [AttributeValue("Case", "Ess")])[0] == {"Case": "Ess"}


def test_value_mismatch_is_fp_and_fn():
    scores, _ = score_pairs([({"Case": "Ess"}, {"Case": "Nom"})])
    assert (scores["Case"].tp, scores["Case"].fp, scores["Case"].fn) == (0, 1, 1)


def test_zero_division():
    assert AttributeScore().f1 == 0.0
    assert AttributeScore(fn=3).precision == 0.0


def test_identical_corpora():
    gold = [tagged([("a", "NOUN|Case=Nom|Number=Sing"), ("b", "VERB|Tense=Past")])]
    config = EvalConfig.from_corpora(gold, gold)
    report = score(gold, gold, config)
    assert report.macro_f1 == 1.0 and report.pos_accuracy == 1.0


def test_from_corpora_shared_sets():
    source = [tagged([("a", "NOUN|Case=Nom|Number=Sing")])]
    target = [tagged([("a", "NOUN|Case=Ess|Gender=Neut")])]
    config = EvalConfig.from_corpora(source, target)
    assert config.shared_attribute_types == {"POS", "Case"}
    assert config.shared_attribute_values == {("POS", "NOUN")}


def test_intersected_mode_scoring():
    source = [tagged([("a", "NOUN|Case=Nom")])]
    target = [tagged([("a", "NOUN|Case=Nom"), ("b", "NOUN|Case=Ess")])]
    gold = [tagged([("x", "NOUN|Case=Ess")])]
    pred = [tagged([("x", "NOUN|Case=Nom")])]
    config = EvalConfig.from_corpora(source, target, mode="intersected")
    report = score(gold, pred, config)
    assert (report.per_attribute["Case"].fp, report.per_attribute["Case"].fn) == (1, 0)
    standard = score(gold, pred, EvalConfig.from_corpora(source, target))
    assert (standard.per_attribute["Case"].fp, standard.per_attribute["Case"].fn) == (1, 1)


def test_macro_scope():
    gold = [tagged([("a", "NOUN")])]
    pairs = frozenset({("POS", "NOUN"), ("Case", "Nom")})
    observed = score(gold, gold, EvalConfig("standard", pairs, pairs, frozenset({"NOUN"})))
    shared = score(gold, gold, EvalConfig("standard", pairs, pairs, frozenset({"NOUN"}), "shared"))
    assert observed.macro_f1 == 1.0
    assert shared.macro_f1 == 0.5


def test_mismatched_corpora():
    gold, pred = fixture_corpora()
    with pytest.raises(ValueError):
        score(gold, pred + pred, open_config())
    with pytest.raises(ValueError):
        score(gold, [tagged([("a", "NOUN")])], open_config())
    with pytest.raises(ValueError):
        EvalConfig("loose")


def test_pos_mode_report():
    gold, pred = fixture_corpora()
    report = score(gold, pred, open_config("pos"))
    assert report.to_lines() == "POS_ACC\t1.000000\n"
    assert "POS accuracy" in report.to_table()


def test_tp_plus_fn_counts_gold_pairs():
    gold = [tagged([("a", "NOUN|Case=Nom|Number=Sing"), ("b", "VERB|Tense=Past"), ("c", "NOUN|Case=Acc")])]
    pred = [tagged([("a", "NOUN|Case=Acc"), ("b", "NOUN|Number=Plur"), ("c", "VERB")])]
    pairs = frozenset({("POS", "NOUN"), ("POS", "VERB"), ("Case", "Nom"), ("Case", "Acc"), ("Number", "Sing"),
                       ("Number", "Plur"), ("Tense", "Past")})
    report = score(gold, pred, EvalConfig("standard", pairs, pairs, frozenset({"NOUN", "VERB"})))
    expected = {"POS": 3, "Case": 2, "Number": 1, "Tense": 1}
    assert {a: s.tp + s.fn for a, s in report.per_attribute.items()} == expected
