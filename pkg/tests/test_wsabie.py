import numpy as np
import pytest

from morphproj.corpus import Sentence, TagInventory, Token
from morphproj.features import EmbeddingTable, FeatureVector, FeatureVocabulary
from morphproj.projection import ConstraintLattice, gold_lattices
from morphproj.wsabie import (WsabieConfig, WsabieModel, harmonic, predict, predict_indices, score_tags, train,
                              warp_step)

from conftest import T, tagged


def bare_model(W, V=None, dense=0, config=None, names=None):
    W = np.asarray(W, dtype=float)
    D, L = W.shape
    V = np.eye(D) if V is None else np.asarray(V, dtype=float)
    inv = TagInventory(T(f"T{i}") for i in range(L))
    vocab = FeatureVocabulary(names or [f"f{i}" for i in range(V.shape[1] - dense)]).freeze()
    return WsabieModel(V, W, inv, vocab, config or WsabieConfig(D=D), dense_dim=dense)


class ScriptedRng:
    """Returns the given integers in order, ignoring the bounds."""

    def __init__(self, values):
        self.values = list(values)

    def integers(self, n):
        return self.values.pop(0)


def test_scores():
    model = bare_model([[0.5, 0.0], [0.5, 0.0]])
    x = FeatureVector(np.zeros(0), (0,), 2)
    np.testing.assert_allclose(score_tags(model, x), [0.5, 0.0])
    zero = FeatureVector(np.zeros(0), (), 2)
    np.testing.assert_array_equal(score_tags(model, zero), [0, 0])


def test_harmonic():
    assert harmonic(5) == pytest.approx(1 + 1 / 2 + 1 / 3 + 1 / 4 + 1 / 5, abs=1e-15)
    assert harmonic(5) == pytest.approx(2.283333, abs=1e-6)
    assert harmonic(1) == 1.0


def test_violation_on_first_draw():
    # f_y = 1.0, f_ybar = 0.95 > 1.0 - 0.1
    W = np.array([[1.0, 0.95, 0.0]])
    model = bare_model(W, V=[[1.0]], config=WsabieConfig(D=1, learning_rate=0.0))
    x = FeatureVector(np.zeros(0), (0,), 1)
    report = warp_step(model, x, [0], ScriptedRng([0, 0]))
    assert report.violated and report.draws == 1 and report.negative == 1
    assert report.rank == 2 and report.weight == pytest.approx(1.5)


def test_non_violation_keeps_sampling():
    W = np.array([[1.0, 0.85, 0.95]])
    model = bare_model(W, V=[[1.0]], config=WsabieConfig(D=1, learning_rate=0.0))
    x = FeatureVector(np.zeros(0), (0,), 1)
    report = warp_step(model, x, [0], ScriptedRng([0, 0, 1]))
    assert report.violated and report.draws == 2 and report.negative == 2


def test_warp_weight_fixture():
    # L = 11, one allowed tag, violator found on the second draw
    W = np.zeros((1, 11))
    W[0, 0] = 1.0
    W[0, 5] = 0.95
    model = bare_model(W, V=[[1.0]], config=WsabieConfig(D=1, learning_rate=0.0))
    x = FeatureVector(np.zeros(0), (0,), 1)
    # positive index, then negatives[0] = tag 1 (score 0, no violation), negatives[4] = tag 5
    report = warp_step(model, x, [0], ScriptedRng([0, 0, 4]))
    assert report.draws == 2 and report.negative == 5
    assert report.rank == 5
    assert report.weight == pytest.approx(2.283333, abs=1e-6)
    uniform = warp_step(model, x, [0], ScriptedRng([0, 0, 4]), rank_weighting=False)
    assert uniform.weight == 1.0


def test_no_violation_after_all_draws():
    model = bare_model([[1.0, 0.0, 0.0]], V=[[1.0]])
    x = FeatureVector(np.zeros(0), (0,), 1)
    report = warp_step(model, x, [0], np.random.default_rng(0))
    assert not report.violated and report.draws == 2


def test_full_set_skipped():
    model = bare_model([[1.0, 0.0]], V=[[1.0]])
    report = warp_step(model, FeatureVector(np.zeros(0), (0,), 1), [0, 1], np.random.default_rng(0))
    assert report.skipped


def random_instance(rng, L=8, D=5, dense=4, vocab=6):
    W = rng.uniform(-0.3, 0.3, size=(D, L))
    V = rng.uniform(-0.3, 0.3, size=(D, dense + vocab))
    cfg = WsabieConfig(D=D, learning_rate=1e-3, margin=1.0)
    model = bare_model(W, V, dense=dense, config=cfg)
    x = FeatureVector(rng.normal(size=dense) * 0.5, tuple(sorted(rng.choice(vocab, 3, replace=False))), vocab)
    allowed = sorted(rng.choice(L, int(rng.integers(1, 4)), replace=False))
    return model, x, allowed




def test_single_step_improves_pair_margin():
    rng = np.random.default_rng(11)
    for _ in range(100):
        model, x, allowed = random_instance(rng)
        W0, V0 = model.W.copy(), model.V.copy()
        report = warp_step(model, x, allowed, rng)
        y, ybar = report.positive, report.negative
        old = bare_model(W0, V0, dense=model.dense_dim, config=model.config)
        before = score_tags(old, x)
        after = score_tags(model, x)
        assert after[y] - after[ybar] > before[y] - before[ybar]


def suffix_language(seed, n_sent, fresh=False):
    rng = np.random.default_rng(seed)
    suffixes = {"NOUN": "ok", "VERB": "ed", "ADJ": "ish", "ADV": "ly"}
    tags = list(suffixes)
    sentences = []
    for _ in range(n_sent):
        words = []
        for _ in range(int(rng.integers(3, 8))):
            tag = tags[int(rng.integers(4))]
            stem = "".join(rng.choice(list("bdfgkmnprst"), 2)) + ("u" if fresh else "a")
            words.append((stem + suffixes[tag], tag))
        sentences.append(tagged(words))
    return sentences


def test_separable_suffix_language():
    train_sents = suffix_language(0, 300)
    test_sents = suffix_language(1, 100, fresh=True)
    inv = TagInventory(T(t) for t in ["NOUN", "VERB", "ADJ", "ADV"])
    model = train(gold_lattices(train_sents, inv), inv, WsabieConfig(epochs=5))
    correct = total = 0
    for s in test_sents:
        for token, tag in zip(s.tokens, predict(model, s)):
            correct += token.gold == tag
            total += 1
    assert correct / total >= 0.99


def test_norm_invariant_after_training():
    sents = suffix_language(2, 60)
    inv = TagInventory(T(t) for t in ["NOUN", "VERB", "ADJ", "ADV"])
    emb = EmbeddingTable(3, {w: np.full(3, 2.0) for s in sents for w in s.words})
    for cap in (1.0, 0.3):
        model = train(gold_lattices(sents, inv), inv, WsabieConfig(D=8, epochs=3, norm_cap=cap, learning_rate=0.5),
                      embeddings=emb)
        assert np.linalg.norm(model.V, axis=0).max() <= cap + 1e-6
        assert np.linalg.norm(model.W, axis=0).max() <= cap + 1e-6


def test_defaults():
    cfg = WsabieConfig()
    assert (cfg.epochs, cfg.learning_rate, cfg.margin, cfg.D) == (25, 0.01, 0.1, 50)


def test_argmax_ties_and_zero_model():
    model = bare_model([[0.2, 0.9, 0.1]], V=[[1.0]], names=["p1=x"])
    assert predict_indices(model, ["x"]) == [1]
    assert predict_indices(model, ["y"]) == [0]  # no known feature: all scores zero
    tie = bare_model([[0.5, 0.1, 0.5]], V=[[1.0]], names=["p1=x"])
    assert predict_indices(tie, ["x"]) == [0]
    zero = bare_model(np.zeros((2, 3)), V=np.zeros((2, 1)))
    assert predict_indices(zero, ["a", "b"]) == [0, 0]


def test_save_load_bit_identical(tmp_path):
    sents = suffix_language(3, 40)
    inv = TagInventory(T(t) for t in ["NOUN", "VERB", "ADJ", "ADV"])
    cfg = WsabieConfig(D=6, epochs=2, seed=5)
    paths = []
    for k in range(2):
        model = train(gold_lattices(sents, inv), inv, cfg)
        path = tmp_path / f"m{k}.bin"
        model.save(path)
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    loaded = WsabieModel.load(paths[0])
    np.testing.assert_array_equal(loaded.V, model.V)
    assert predict(loaded, sents[0]) == predict(model, sents[0])


def test_embedding_dimension_checked():
    sents = suffix_language(4, 10)
    inv = TagInventory(T(t) for t in ["NOUN", "VERB", "ADJ", "ADV"])
    emb = EmbeddingTable(3, {})
    model = train(gold_lattices(sents, inv), inv, WsabieConfig(D=4, epochs=1), embeddings=emb)
    with pytest.raises(ValueError):
        predict(model, sents[0])
    with pytest.raises(ValueError):
        predict(model, sents[0], EmbeddingTable(2, {}))


def test_untrainable_corpus():
    inv = TagInventory([T("A"), T("B")])
    lat = ConstraintLattice(Sentence([Token("x")]), [frozenset({0, 1})], 2)
    with pytest.raises(ValueError):
        train([lat], inv)


def test_no_violator_leaves_model_unchanged():
    model = bare_model([[1.0, 0.0, -0.5]], V=[[1.0]])
    W, V = model.W.copy(), model.V.copy()
    warp_step(model, FeatureVector(np.zeros(0), (0,), 1), [0], np.random.default_rng(1))
    assert model.W.tobytes() == W.tobytes() and model.V.tobytes() == V.tobytes()


def test_zero_model_violates_on_first_draw():
    rng = np.random.default_rng(2)
    for _ in range(20):
        model = bare_model(np.zeros((3, 6)), V=np.zeros((3, 2)), config=WsabieConfig(D=3, learning_rate=0.0))
        report = warp_step(model, FeatureVector(np.zeros(0), (1,), 2), [int(rng.integers(6))], rng)
        assert report.violated and report.draws == 1


def test_predict_invariant_to_positive_rescaling():
    rng = np.random.default_rng(3)
    model = bare_model(rng.normal(size=(4, 5)), V=rng.normal(size=(4, 3)), names=["p1=a", "s1=b", "p1=c"])
    words = ["ab", "cb", "zz"]
    before = predict_indices(model, words)
    model.W *= 7.5
    assert predict_indices(model, words) == before
