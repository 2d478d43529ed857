"""
Split-space BPE tokenizer for kernforge

Byte-level byte pair encoding where space, TAB and LF are never merged with
anything: each stays a singleton token, so a chord "4c 4e 4g" is always
spelled note by note. Ids 0 and 1 are reserved for BOS and EOS; the 256 byte
tokens follow, then the learned merges in the order they were learned.
"""

import heapq
import json
import logging
from collections import Counter
from collections.abc import Iterable
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

logger = logging.getLogger(__name__)

BOS_ID = 0
EOS_ID = 1
SPECIAL_IDS = {"bos": BOS_ID, "eos": EOS_ID}
BYTE_OFFSET = 2
BASE_SIZE = BYTE_OFFSET + 256
BOUNDARY_BYTES = frozenset(b" \t\n")
DEFAULT_VOCAB_SIZE = 3000
FORMAT_VERSION = 1
WORD_CACHE_SIZE = 1 << 14


class EmptyCorpus(ValueError):
    pass


class UnknownId(ValueError):
    def __init__(self, token_id: int):
        self.token_id = token_id
        super().__init__(f"token id {token_id} is not in the vocabulary")


def byte_id(b: int) -> int:
    return BYTE_OFFSET + b


def split_words(data: bytes) -> list[bytes]:
    """Cut bytes into boundary singletons and the runs between them"""
    words: list[bytes] = []
    start = 0
    for i, b in enumerate(data):
        if b in BOUNDARY_BYTES:
            if start < i:
                words.append(data[start:i])
            words.append(data[i : i + 1])
            start = i + 1
    if start < len(data):
        words.append(data[start:])
    return words


@dataclass
class BpeVocab:
    """
    A trained vocabulary. `tokens[i]` is the byte string of id i (empty for
    BOS/EOS); `merges` lists (left id, right id) pairs in rank order.
    """

    tokens: list[bytes]
    merges: list[tuple[int, int]]
    vocab_size: int = DEFAULT_VOCAB_SIZE
    _ranks: dict[tuple[int, int], tuple[int, int]] = field(
        default_factory=dict, init=False, repr=False, compare=False
    )

    def __post_init__(self):
        by_bytes = {tok: i for i, tok in enumerate(self.tokens) if i >= BYTE_OFFSET}
        for rank, (left, right) in enumerate(self.merges):
            merged = self.tokens[left] + self.tokens[right]
            if merged not in by_bytes:
                raise ValueError(f"merge {rank} produces bytes missing from the token table")
            self._ranks.setdefault((left, right), (rank, by_bytes[merged]))
        self._encode_word = lru_cache(maxsize=WORD_CACHE_SIZE)(self._merge_word)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def bos_id(self) -> int:
        return BOS_ID

    @property
    def eos_id(self) -> int:
        return EOS_ID

    def token_bytes(self, token_id: int) -> bytes:
        if not 0 <= token_id < len(self.tokens):
            raise UnknownId(token_id)
        return self.tokens[token_id]

    def _merge_word(self, word: bytes) -> tuple[int, ...]:
        ids = [byte_id(b) for b in word]
        while len(ids) > 1:
            best = None
            for pair in zip(ids, ids[1:]):
                entry = self._ranks.get(pair)
                if entry is not None and (best is None or entry[0] < best[1][0]):
                    best = (pair, entry)
            if best is None:
                break
            (left, right), (_, merged) = best
            out = []
            i = 0
            while i < len(ids):
                if i + 1 < len(ids) and ids[i] == left and ids[i + 1] == right:
                    out.append(merged)
                    i += 2
                else:
                    out.append(ids[i])
                    i += 1
            ids = out
        return tuple(ids)

    def encode(self, text: str | bytes) -> list[int]:
        data = text.encode("utf-8") if isinstance(text, str) else text
        ids: list[int] = []
        for word in split_words(data):
            ids.extend(self._encode_word(word))
        return ids

    def decode_bytes(self, ids: Iterable[int]) -> bytes:
        """Concatenate token bytes; BOS and EOS contribute nothing"""
        return b"".join(self.token_bytes(i) for i in ids)

    def decode(self, ids: Iterable[int]) -> str:
        return self.decode_bytes(ids).decode("utf-8", errors="replace")

    def to_json(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "vocab_size": self.vocab_size,
            "specials": SPECIAL_IDS,
            "merges": [list(m) for m in self.merges],
            "tokens": [tok.decode("latin-1") for tok in self.tokens],
        }

    @classmethod
    def from_json(cls, payload: dict) -> "BpeVocab":
        if payload.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported vocab format version {payload.get('version')!r}")
        tokens = [tok.encode("latin-1") for tok in payload["tokens"]]
        if len(tokens) < BASE_SIZE or any(tokens[i] for i in SPECIAL_IDS.values()):
            raise ValueError("vocab file does not start with the special and byte tokens")
        merges = [(int(left), int(right)) for left, right in payload["merges"]]
        return cls(tokens, merges, int(payload["vocab_size"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), ensure_ascii=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "BpeVocab":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def base_vocab(vocab_size: int = DEFAULT_VOCAB_SIZE) -> BpeVocab:
    return BpeVocab([b"", b""] + [bytes([b]) for b in range(256)], [], vocab_size)


def _pairs(word: tuple[int, ...]) -> Counter:
    return Counter(zip(word, word[1:]))


def train(
    corpus: Iterable[str | bytes], vocab_size: int = DEFAULT_VOCAB_SIZE, min_frequency: int = 2
) -> BpeVocab:
    """
    Learn merges greedily by pair frequency, counting pairs only inside the
    runs between boundary bytes. Equal counts are broken by the byte order
    of (left, right), so the same corpus always yields the same merge list.
    """
    if vocab_size < BASE_SIZE:
        raise ValueError(f"vocab_size must be at least {BASE_SIZE}")

    word_counts: Counter = Counter()
    total_bytes = 0
    for text in corpus:
        data = text.encode("utf-8") if isinstance(text, str) else text
        total_bytes += len(data)
        for word in split_words(data):
            if len(word) > 1:
                word_counts[word] += 1
    if total_bytes == 0:
        raise EmptyCorpus("cannot train a vocabulary on an empty corpus")

    vocab = base_vocab(vocab_size)
    tokens = vocab.tokens
    by_bytes = {tok: i for i, tok in enumerate(tokens) if i >= BYTE_OFFSET}
    merges: list[tuple[int, int]] = []

    words = [tuple(byte_id(b) for b in w) for w in word_counts]
    freqs = list(word_counts.values())
    pair_counts: Counter = Counter()
    where: dict[tuple[int, int], set[int]] = {}
    for index, word in enumerate(words):
        for pair, n in _pairs(word).items():
            pair_counts[pair] += n * freqs[index]
            where.setdefault(pair, set()).add(index)

    def entry(pair: tuple[int, int]) -> tuple:
        return (-pair_counts[pair], tokens[pair[0]], tokens[pair[1]], pair)

    heap = [entry(pair) for pair in pair_counts]
    heapq.heapify(heap)

    while len(tokens) < vocab_size and heap:
        neg_count, _, _, pair = heapq.heappop(heap)
        if -neg_count != pair_counts.get(pair, 0):
            continue
        if -neg_count < min_frequency:
            break

        left, right = pair
        merged = tokens[left] + tokens[right]
        new_id = by_bytes.get(merged)
        if new_id is None:
            new_id = len(tokens)
            tokens.append(merged)
            by_bytes[merged] = new_id
        merges.append(pair)

        changed: set[tuple[int, int]] = set()
        for index in where.pop(pair, set()):
            word = words[index]
            if pair not in zip(word, word[1:]):
                continue
            freq = freqs[index]
            for p, n in _pairs(word).items():
                pair_counts[p] -= n * freq
                changed.add(p)
            out = []
            i = 0
            while i < len(word):
                if i + 1 < len(word) and word[i] == left and word[i + 1] == right:
                    out.append(new_id)
                    i += 2
                else:
                    out.append(word[i])
                    i += 1
            word = tuple(out)
            words[index] = word
            for p, n in _pairs(word).items():
                pair_counts[p] += n * freq
                where.setdefault(p, set()).add(index)
                changed.add(p)

        for p in changed:
            if pair_counts[p] > 0:
                heapq.heappush(heap, entry(p))
            else:
                del pair_counts[p]

    logger.info(f"Trained BPE vocabulary: {len(tokens)} tokens, {len(merges)} merges")
    return BpeVocab(tokens, merges, vocab_size)
