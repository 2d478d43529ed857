"""
Tests for the split-space BPE tokenizer
"""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from kern_strategies import kern_documents
from kernforge.bpe import (
    BASE_SIZE,
    BOS_ID,
    EOS_ID,
    BpeVocab,
    EmptyCorpus,
    UnknownId,
    WORD_CACHE_SIZE,
    base_vocab,
    byte_id,
    split_words,
    train,
)

CORPUS = [
    "**kern\n*clefG2\n*M4/4\n4c 4e 4g\n4c 4e 4g\n4d\t4f\n=1\n4c 4e 4g\n*-\n",
    "**kern\t**kern\n*clefF4\t*clefG2\n4C\t4c 4e 4g\n4C\t4cc\n*-\t*-\n",
]


@pytest.fixture(scope="module")
def vocab() -> BpeVocab:
    return train(CORPUS, vocab_size=320)


def test_split_words():
    assert split_words(b"4c 4e\t*\n") == [b"4c", b" ", b"4e", b"\t", b"*", b"\n"]
    assert split_words(b"") == []


def test_reserved_ids(vocab):
    assert (vocab.bos_id, vocab.eos_id) == (BOS_ID, EOS_ID) == (0, 1)
    assert vocab.tokens[BOS_ID] == vocab.tokens[EOS_ID] == b""
    assert vocab.tokens[byte_id(ord("c"))] == b"c"
    assert len(base_vocab()) == BASE_SIZE


def test_boundaries_never_merged(vocab):
    for token in vocab.tokens[BASE_SIZE:]:
        assert not set(token) & set(b" \t\n")


def test_merges_learned(vocab):
    assert len(vocab) > BASE_SIZE
    assert len(vocab) <= 320
    assert b"4c" in vocab.tokens
    assert len(vocab.merges) >= len(vocab) - BASE_SIZE


def test_chord_spelled_note_by_note(vocab):
    ids = vocab.encode("4c 4e 4g")
    assert vocab.encode(" ") == [byte_id(ord(" "))]
    assert ids.count(byte_id(ord(" "))) == 2
    assert vocab.decode(ids) == "4c 4e 4g"


def test_training_is_deterministic():
    a = train(CORPUS, vocab_size=300)
    b = train(list(CORPUS), vocab_size=300)
    assert a.tokens == b.tokens
    assert a.merges == b.merges


def test_min_frequency_stops_training():
    vocab = train(["abcd"], vocab_size=400, min_frequency=2)
    assert len(vocab) == BASE_SIZE
    vocab = train(["abcd"], vocab_size=400, min_frequency=1)
    assert b"abcd" in vocab.tokens


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        train([""], vocab_size=300)


def test_vocab_size_too_small():
    with pytest.raises(ValueError):
        train(CORPUS, vocab_size=100)


def test_unknown_id(vocab):
    with pytest.raises(UnknownId):
        vocab.decode([len(vocab)])


def test_specials_decode_to_nothing(vocab):
    ids = [BOS_ID] + vocab.encode("4c") + [EOS_ID]
    assert vocab.decode(ids) == "4c"


def test_word_cache_is_bounded():
    vocab = base_vocab()
    words = [f"{i}c" for i in range(WORD_CACHE_SIZE + 100)]
    vocab.encode(" ".join(words))
    info = vocab._encode_word.cache_info()
    assert info.maxsize == WORD_CACHE_SIZE
    assert info.currsize == WORD_CACHE_SIZE
    assert vocab.encode("4c 4c") == vocab.encode("4c") + [byte_id(ord(" "))] + vocab.encode("4c")


def test_save_and_load(vocab, tmp_path):
    path = tmp_path / "vocab.json"
    vocab.save(path)
    loaded = BpeVocab.load(path)
    assert loaded.tokens == vocab.tokens
    assert loaded.merges == vocab.merges
    assert loaded.encode(CORPUS[0]) == vocab.encode(CORPUS[0])


def test_load_rejects_other_versions(vocab):
    payload = vocab.to_json()
    payload["version"] = 99
    with pytest.raises(ValueError):
        BpeVocab.from_json(payload)


@given(kern_documents(normalized=True))
def test_encode_decode_kern(vocab, text):
    assert vocab.decode(vocab.encode(text)) == text


@given(st.binary(max_size=64))
def test_decode_bytes_inverts_encode(vocab, data):
    assert vocab.decode_bytes(vocab.encode(data)) == data
