import numpy as np
import pytest

from emocues.knowledge import KnowledgeBase, RelationKind
from emocues.kwrt import (importance_matrices, load_lexicon, scale_text_features,
                          squeeze_importance, tag_matrix, token_scores)
from emocues.nn.tensor import Tensor, parameter

I, H, C = RelationKind.IS_A, RelationKind.HAS_CONTEXT, RelationKind.CAUSES
LEX = frozenset({"the", "was", "i", "a"})


def test_asleep_kangaroo_example():
    kb = KnowledgeBase.from_triples([("asleep", H, "kangaroo")])
    tokens = ["[s1]", "the", "kangaroo", "was", "asleep", "[s2]", "i", "saw", "a", "kangaroo"]
    mats = importance_matrices(tokens, LEX, kb)
    words = [w.surface for w in mats.words]
    assert words == ["the", "kangaroo", "was", "asleep", "i", "saw", "a", "kangaroo"]
    # hand-derived: kangaroo(1)~kangaroo(7) recur; asleep(3) relates to both kangaroos
    expect = np.zeros((8, 8), dtype=int)
    expect[1, 7] = expect[7, 1] = 1
    np.testing.assert_array_equal(mats.m_rec, expect)
    rel = np.zeros((8, 8), dtype=int)
    for k in (1, 7):
        rel[3, k] = rel[k, 3] = 1
    np.testing.assert_array_equal(mats.m_rel, rel)
    tags = tag_matrix(mats, kb)
    assert tags[1][3] == "0/H" and tags[1][7] == "1/N" and tags[0][1] == "0/N"
    scores = squeeze_importance(mats)
    np.testing.assert_allclose(scores, (expect + rel).sum(axis=1) / 8)
    assert scores[0] == 0 and scores[3] == 2 / 8


def test_multiple_relations_sum_and_tag_in_order():
    kb = KnowledgeBase.from_triples([("rain", C, "wet"), ("wet", H, "rain"), ("rain", I, "wet")])
    mats = importance_matrices(["[s1]", "rain", "wet"], LEX, kb)
    assert mats.m_rel[0, 1] == 3 and mats.m[0, 1] == 3
    assert tag_matrix(mats, kb)[0][1] == "0/IHC"


def test_permuting_words_permutes_matrices(rng):
    kb = KnowledgeBase.from_triples([("rain", C, "wet"), ("cat", I, "animal"), ("bed", H, "sleep")])
    vocab = ["rain", "wet", "cat", "animal", "bed", "sleep", "the", "a"]
    words = list(rng.choice(vocab, size=15))
    perm = rng.permutation(15)
    a = importance_matrices(["[s1]"] + words, LEX, kb)
    b = importance_matrices(["[s1]"] + [words[p] for p in perm], LEX, kb)
    np.testing.assert_array_equal(b.m, a.m[np.ix_(perm, perm)])


def test_empty_and_function_only():
    kb = KnowledgeBase.from_triples([])
    mats = importance_matrices(["[s1]", "the", "a"], LEX, kb)
    assert mats.m.shape == (2, 2) and not mats.m.any()
    assert importance_matrices(["[s1]"], LEX, kb).m.shape == (0, 0)
    assert squeeze_importance(importance_matrices(["[s1]"], LEX, kb)).shape == (0,)


def test_token_scores_zero_on_speaker_tokens():
    kb = KnowledgeBase.from_triples([])
    tokens = ["[s1]", "cat", "cat", "[s2]", "dog"]
    mats = importance_matrices(tokens, LEX, kb)
    s = token_scores(len(tokens), mats.words, squeeze_importance(mats))
    np.testing.assert_allclose(s, [0, 1 / 3, 1 / 3, 0, 0])


def test_scaling_identity_and_constant_gate(rng):
    h = rng.normal(size=(4, 3))
    scores = np.array([0.0, 0.5, 1.0, 2.0])
    out = scale_text_features(Tensor(h), scores, parameter(np.zeros(1)), parameter(np.ones(1)))
    np.testing.assert_array_equal(out.data, h)
    out = scale_text_features(Tensor(h), scores, parameter(np.zeros(1)), parameter(np.full(1, 2.5)))
    np.testing.assert_allclose(out.data, 2.5 * h)
    out = scale_text_features(Tensor(h), scores, parameter(np.full(1, 2.0)), parameter(np.zeros(1)))
    np.testing.assert_allclose(out.data, h * (2 * scores)[:, None])
    with pytest.raises(ValueError):
        scale_text_features(Tensor(h), scores[:3], parameter(np.ones(1)), parameter(np.ones(1)))


def test_bundled_lexicon():
    lex = load_lexicon()
    assert {"the", "a", "and", "i"} <= lex
    assert "kangaroo" not in lex


def test_classification_and_word_count():
    kb = KnowledgeBase.from_triples([])
    words = importance_matrices(["[s1]", "the", "kangaroo"], frozenset({"the"}), kb).words
    assert [(w.surface, w.is_content) for w in words] == [("the", False), ("kangaroo", True)]
    only = importance_matrices(["[s1]", "the", "a", "[s2]", "the"], LEX, kb).words
    assert not any(w.is_content for w in only)
    text = ["[s1]"] + ["the", "cat"] * 3 + ["[s2]"] + ["a", "dog", "ran"] * 2 + ["[s1]", "ok", "i", "go", "the", "end"]
    assert importance_matrices(text, LEX, kb).k == 17


def test_recurrence_examples():
    kb = KnowledgeBase.from_triples([])
    tokens = ["[s1]", "the", "movie", "was", "great", "[s2]", "i", "saw", "a", "movie"]
    m = importance_matrices(tokens, LEX, kb).m_rec
    assert m[1, 7] == m[7, 1] == 1 and m.sum() == 2
    assert not importance_matrices(["[s1]", "red", "blue", "green"], LEX, kb).m_rec.any()
    m = importance_matrices(["[s1]", "the", "cat", "the"], LEX, kb).m_rec
    assert not m[0].any() and not m[2].any()


def test_relation_and_combination_examples():
    kb = KnowledgeBase.from_triples([("rain", I, "wet"), ("wet", C, "rain")])
    assert importance_matrices(["[s1]", "rain", "wet"], LEX, kb).m_rel[0, 1] == 2
    assert not importance_matrices(["[s1]", "rain", "wet"], LEX, KnowledgeBase.from_triples([])).m_rel.any()
    full = KnowledgeBase.from_triples([("rain", I, "rain"), ("rain", H, "rain"), ("rain", C, "rain")])
    mats = importance_matrices(["[s1]", "rain", "[s2]", "rain"], LEX, full)
    assert mats.m_rec[0, 1] == 1 and mats.m_rel[0, 1] == 3 and mats.m[0, 1] == 4
    assert mats.m[0, 0] == 0


def test_combine_shapes():
    from emocues.kwrt import combine_matrices
    z = np.zeros((3, 3), dtype=int)
    assert not combine_matrices(z, z).m.any()
    rec = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]])
    np.testing.assert_array_equal(combine_matrices(rec, z).m, rec)
    with pytest.raises(ValueError):
        combine_matrices(z, np.zeros((2, 2), dtype=int))


def test_squeeze_closed_form_and_oracle(rng):
    from emocues.kwrt import ImportanceMatrices
    k, c = 40, 3
    m = np.full((k, k), c)
    np.fill_diagonal(m, 0)
    s = squeeze_importance(ImportanceMatrices(m * 0, m, m, ()))
    np.testing.assert_allclose(s, c * (k - 1) / k)
    for _ in range(20):
        k = int(rng.integers(1, 9))
        m = rng.integers(0, 5, size=(k, k))
        s = squeeze_importance(ImportanceMatrices(m, m, m, ()))
        for i in range(k):
            assert s[i] == pytest.approx(sum(m[i, j] for j in range(k)) / k, abs=1e-15)


def test_scaling_examples_and_linearity(rng):
    h = rng.normal(size=(5, 4))
    ones = np.ones(5)
    out = scale_text_features(Tensor(h), ones, parameter(np.ones(1)), parameter(np.zeros(1)))
    np.testing.assert_array_equal(out.data, h)
    out = scale_text_features(Tensor(h), np.zeros(5), parameter(np.full(1, 3.7)), parameter(np.zeros(1)))
    assert not out.data.any()
    s = rng.uniform(size=5)
    w, b = parameter(rng.normal(size=1)), parameter(rng.normal(size=1))
    a = scale_text_features(Tensor(h), s, w, b).data
    np.testing.assert_allclose(scale_text_features(Tensor(2.5 * h), s, w, b).data, 2.5 * a, atol=1e-14)
