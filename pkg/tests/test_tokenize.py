import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from medroute.dataset import Dataset
from medroute.tokenize import (
    CLS,
    PAD,
    UNK,
    Vocabulary,
    VocabularyError,
    build_vocab,
    decode_ids,
    encode_batch,
    encode_sequence,
)

words = st.text(alphabet="абвгде", min_size=1, max_size=3)


def test_min_freq_hand_count():
    v = build_vocab(["боль в горле", "боль в ухе"], min_freq=2)
    assert set(v.id_to_token[3:]) == {"боль", "в"}
    assert v.id_to_token[:3] == ("[PAD]", "[UNK]", "[CLS]")


def test_all_words_present():
    texts = ["a b c", "c d", "e"]
    v = build_vocab(texts, min_freq=1, max_size=1000)
    assert set(v.id_to_token[3:]) == set("abcde")


def test_ranking_and_max_size():
    v = build_vocab(["b a a c c", "c"], max_size=5)
    assert v.id_to_token[3:] == ("c", "a")


def test_specials_only_warns():
    with pytest.warns(RuntimeWarning):
        v = build_vocab(["", "  "])
    assert len(v) == 3


def test_empty_dataset_rejected():
    with pytest.raises(VocabularyError):
        build_vocab(Dataset([]))


@given(st.lists(st.lists(words, max_size=6).map(" ".join), min_size=1, max_size=10), st.randoms())
def test_vocab_order_independent(texts, rnd):
    shuffled = list(texts)
    rnd.shuffle(shuffled)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        assert build_vocab(texts) == build_vocab(shuffled)


def test_encode_three_words():
    v = build_vocab(["один два три"])
    s = encode_sequence(v, "один два три", max_len=6)
    t = [v.lookup(w) for w in ("один", "два", "три")]
    assert s.ids.tolist() == [CLS, *t, PAD, PAD]
    assert s.mask.tolist() == [1, 1, 1, 1, 0, 0]
    assert s.true_length == 4


def test_cap_counts_cls():
    text = " ".join(f"w{i}" for i in range(200))
    v = build_vocab([text])
    s = encode_sequence(v, text, max_len=128)
    assert s.true_length == 128
    assert decode_ids(v, s) == [f"w{i}" for i in range(127)]


def test_unknown_words_become_unk():
    v = build_vocab(["известно"])
    s = encode_sequence(v, "неизвестно совсем", max_len=5)
    assert s.ids[1:3].tolist() == [UNK, UNK]


def test_max_len_too_small():
    with pytest.raises(ValueError):
        encode_sequence(build_vocab(["a"]), "a", max_len=1)


@given(st.lists(words, max_size=20), st.integers(2, 12))
def test_encode_shape_and_round_trip(tokens, max_len):
    text = " ".join(tokens)
    v = build_vocab([text]) if tokens else Vocabulary(("[PAD]", "[UNK]", "[CLS]"))
    s = encode_sequence(v, text, max_len)
    assert s.ids.shape == s.mask.shape == (max_len,)
    assert s.true_length == min(len(tokens), max_len - 1) + 1
    again = encode_sequence(v, " ".join(decode_ids(v, s)), max_len)
    assert again.true_length == s.true_length
    assert np.array_equal(again.ids, s.ids)


def test_encode_batch_shapes():
    v = build_vocab(["a b"])
    ids, mask = encode_batch(v, ["a", "a b", ""], 4)
    assert ids.shape == mask.shape == (3, 4)
    assert mask.sum(axis=1).tolist() == [2, 3, 1]


def test_vocab_file_round_trip(tmp_path):
    v = build_vocab(["боль в горле"])
    v.save(tmp_path / "vocab.txt")
    assert Vocabulary.load(tmp_path / "vocab.txt").id_to_token == v.id_to_token
    assert (tmp_path / "vocab.txt").read_text(encoding="utf-8").splitlines()[:3] == ["[PAD]", "[UNK]", "[CLS]"]


def test_vocab_rejects_bad_specials():
    with pytest.raises(VocabularyError):
        Vocabulary(("a", "b", "c"))
