"""
Decode harness for kernforge

Greedy autoregressive decoding driven by synthetic logit sources, used to
fuzz the constraint engine and to reproduce runaway-loop behaviour in
miniature. Loop rates measured here describe the synthetic sources only.
"""

import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field

import numpy as np

from .bpe import BOS_ID, EOS_ID, BpeVocab
from .constraints import ConstraintEngine, init_state
from .filters import structural_check

logger = logging.getLogger(__name__)

DEFAULT_MAX_LENGTH = 2048
LOOP_FACTOR = 4
MIN_REPEATS = 3

MODES = ("uniform", "adversarial", "replay")
ADVERSARIAL_RULES = ("always-tab", "always-lf", "always-split", "longest-token")

FAVOURED = 10.0


@dataclass(frozen=True)
class LogitSource:
    """
    Reproducible logit stream. Every call to `stream` starts over from the
    same seed, rule or sequence.
    """

    mode: str
    seed: int = 0
    rule: str | None = None
    sequence: tuple[int, ...] = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown logit source mode {self.mode!r}")
        if self.mode == "adversarial" and self.rule not in ADVERSARIAL_RULES:
            raise ValueError(f"unknown adversarial rule {self.rule!r}")

    @classmethod
    def uniform(cls, seed: int) -> "LogitSource":
        return cls("uniform", seed=seed)

    @classmethod
    def adversarial(cls, rule: str, seed: int = 0) -> "LogitSource":
        return cls("adversarial", seed=seed, rule=rule)

    @classmethod
    def replay(cls, ids: Sequence[int]) -> "LogitSource":
        return cls("replay", sequence=tuple(ids))

    def _bias(self, tokens: list[bytes]) -> np.ndarray:
        bias = np.zeros(len(tokens))
        if self.rule == "longest-token":
            return np.array([float(len(t)) for t in tokens])
        for i, data in enumerate(tokens):
            if self.rule == "always-tab" and data == b"\t":
                bias[i] = FAVOURED
            elif self.rule == "always-lf" and data == b"\n":
                bias[i] = FAVOURED
            elif self.rule == "always-split" and b"*^" in data:
                bias[i] = FAVOURED * 2 if data == b"*^" else FAVOURED
        return bias

    def stream(self, tokens: list[bytes]) -> Iterator[np.ndarray]:
        size = len(tokens)
        if self.mode == "replay":
            for token_id in (*self.sequence, EOS_ID):
                logits = np.zeros(size)
                logits[token_id] = FAVOURED
                yield logits
            while True:
                logits = np.zeros(size)
                logits[EOS_ID] = FAVOURED
                yield logits

        rng = np.random.default_rng(self.seed)
        bias = self._bias(tokens) if self.mode == "adversarial" else np.zeros(size)
        while True:
            yield bias + rng.random(size)


@dataclass
class DecodeRun:
    tokens: list[int]
    terminated_by: str
    valid: bool
    output: bytes = b""


@dataclass
class LoopSummary:
    runs: int = 0
    runaway: int = 0
    loop_fraction: float = 0.0
    max_window: int = 0
    windows: list[int] = field(default_factory=list)


def run_decode(
    source: LogitSource,
    vocab: BpeVocab,
    constrained: bool,
    max_length: int = DEFAULT_MAX_LENGTH,
    engine: ConstraintEngine | None = None,
) -> DecodeRun:
    """Greedy argmax decoding; constrained runs add the engine's mask as -inf"""
    if constrained and engine is None:
        engine = ConstraintEngine(vocab)
    state = init_state()
    emitted: list[int] = []
    terminated_by = "max_length"

    for logits in source.stream(vocab.tokens):
        if len(emitted) >= max_length:
            break
        scores = logits.astype(float)
        scores[BOS_ID] = -np.inf
        if constrained:
            scores = np.where(engine.mask(state), scores, -np.inf)
        token_id = int(np.argmax(scores))
        if not np.isfinite(scores[token_id]):
            raise RuntimeError("no token is allowed; the vocabulary cannot spell every byte")
        if token_id == EOS_ID:
            terminated_by = "eos"
            break
        emitted.append(token_id)
        if constrained:
            state = engine.advance(state, token_id)

    output = vocab.decode_bytes(emitted)
    valid = terminated_by == "eos" and structural_check(output).accepted
    return DecodeRun(emitted, terminated_by, valid, output)


def repeated_window(tokens: Sequence[int], min_repeats: int = MIN_REPEATS) -> int:
    """Smallest period repeated at least `min_repeats` times at the tail, or 0"""
    for period in range(1, len(tokens) // min_repeats + 1):
        tail = tokens[len(tokens) - period * min_repeats :]
        if all(tail[i] == tail[i + period] for i in range(len(tail) - period)):
            return period
    return 0


def loop_stats(runs: Sequence[DecodeRun], target_lengths: Sequence[int]) -> LoopSummary:
    if len(runs) != len(target_lengths):
        raise ValueError("one target length is needed per run")
    if not runs:
        return LoopSummary()
    runaway = sum(
        1 for run, target in zip(runs, target_lengths) if len(run.tokens) > LOOP_FACTOR * target
    )
    windows = [repeated_window(run.tokens) for run in runs]
    return LoopSummary(
        runs=len(runs),
        runaway=runaway,
        loop_fraction=runaway / len(runs),
        max_window=max(windows),
        windows=windows,
    )
