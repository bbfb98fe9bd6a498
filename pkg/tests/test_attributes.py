import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attrgrasp.attributes import (COLORS, SHAPES, DimensionMismatch, DuplicateToken, UnknownToken, Vocabulary,
                                  extend_vocabulary, label_of_text, mixed_similarity, similarity,
                                  similarity_matrix, text_of_label, tokenize)


@pytest.fixture
def toy_vocab():
    # dictionary {"eos":0, "red":1, "black":2, "yellow":3, "cylinder":4, "cube":5}
    return Vocabulary.from_tokens(["red", "black", "yellow", "cylinder", "cube"])


def brute_similarity(a, b):
    hits = 0
    for x, y in zip(a, b):
        if x == y and x != 0:
            hits += 1
    return hits / len(a)


def test_similarity_examples():
    assert similarity([1, 4], [1, 5]) == 0.5
    assert similarity([1, 0], [2, 0]) == 0.0
    assert similarity([3, 7], [3, 7]) == 1.0
    assert similarity([0, 0], [0, 0]) == 0.0


def test_similarity_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        similarity([1, 2], [1, 2, 3])


@settings(max_examples=200)
@given(st.integers(1, 4).flatmap(lambda n: st.tuples(st.lists(st.integers(0, 6), min_size=n, max_size=n),
                                                    st.lists(st.integers(0, 6), min_size=n, max_size=n))))
def test_similarity_symmetric_and_matches_brute_force(pair):
    a, b = pair
    assert similarity(a, b) == similarity(b, a)
    assert similarity(a, b) == pytest.approx(brute_similarity(a, b), abs=0)
    n = len(a)
    assert round(similarity(a, b) * n) == pytest.approx(similarity(a, b) * n)


def test_similarity_matrix_matches_pairwise():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 5, (20, 3))
    b = rng.integers(0, 5, (15, 3))
    m = similarity_matrix(a, b)
    for i in range(20):
        for j in range(15):
            assert m[i, j] == brute_similarity(a[i], b[j])


def test_label_of_text_paper_dictionary(toy_vocab):
    assert list(label_of_text("red cylinder", toy_vocab)) == [1, 4]
    assert list(label_of_text("red", toy_vocab)) == [1, 0]
    assert list(label_of_text("cylinder red", toy_vocab)) == [1, 4]


def test_label_of_text_unknown_token(toy_vocab):
    with pytest.raises(UnknownToken):
        label_of_text("purple cube", toy_vocab)


def test_extend_vocabulary(toy_vocab):
    v = extend_vocabulary(toy_vocab, "apple")
    assert v.id("apple") == 6
    for tok, idx in toy_vocab.token_to_id.items():
        assert v.id(tok) == idx
    with pytest.raises(DuplicateToken):
        extend_vocabulary(toy_vocab, "red")
    # the original is untouched (copy on extend)
    assert "apple" not in toy_vocab


def test_named_label_three_slots():
    v = Vocabulary.basic().extend("apple")
    lab = label_of_text("apple, red sphere", v, 3)
    assert list(lab) == [v.id("red"), v.id("sphere"), v.id("apple")]
    assert text_of_label(lab, v) == "apple, red sphere"


def test_label_text_roundtrip_on_canonical_labels():
    v = Vocabulary.basic()
    for c in COLORS:
        for s in SHAPES:
            lab = label_of_text(f"{c} {s}", v)
            assert np.array_equal(label_of_text(text_of_label(lab, v), v), lab)
        lab = label_of_text(c, v)
        assert np.array_equal(label_of_text(text_of_label(lab, v), v), lab)


def test_mixed_similarity_normalizes_by_larger_n():
    assert mixed_similarity([1, 4], [1, 4, 9]) == pytest.approx(2 / 3)


def test_tokenize_separators():
    assert tokenize("apple,  red sphere") == ["apple", "red", "sphere"]
    with pytest.raises(ValueError):
        tokenize("  ")


def test_vocabulary_file_roundtrip(tmp_path, toy_vocab):
    v = toy_vocab.extend("apple")
    v.save(tmp_path / "vocab.txt")
    first = (tmp_path / "vocab.txt").read_text().splitlines()[0].split()
    assert first[:2] == ["eos", "0"]
    back = Vocabulary.load(tmp_path / "vocab.txt")
    assert back.token_to_id == v.token_to_id
    assert back.slot("apple") == "name"
