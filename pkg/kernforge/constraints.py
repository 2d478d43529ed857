"""
Constrained decoding for kernforge

Tracks the global state of a **kern document being generated token by token
(active spine count, fields emitted in the current record, pending spine
manipulations) together with a byte-level recognizer for the cell grammar,
and masks every vocabulary token whose bytes cannot lead to a formally valid
document.

The generated language is a strict subset of what the parser accepts:
    - the header is one or more "**kern" fields; no later exclusive records
    - no comments
    - data tokens are spelled in normal-form component order with no residue
    - spines are only ever split, merged or terminated by *^, *v and *-

Validity here is structural only. Measure arithmetic and clef presence need
lookahead a prefix cannot provide.
"""

import logging
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .bpe import BOS_ID, EOS_ID
from .filters import structural_check
from .kern import BEAM_CHARS, PITCH_LETTERS, RecordKind
from .normalizer import (
    CELL_PATTERNS,
    MAX_DOTS,
    MAX_DURATION_DIGITS,
    MAX_OCTAVE_RUN,
    MAX_REPEAT,
)

logger = logging.getLogger(__name__)

TAB = 0x09
LF = 0x0A
HEADER = "**kern"

# Component stages after the pitch, in normal-form order
SUFFIX_STAGES = ("#-n", "[_]", ")", "'`~^;", "LJKk", "/\\", "(")
_STAGE_OF = {ch: i for i, chars in enumerate(SUFFIX_STAGES) for ch in chars}
_ACCIDENTALS = frozenset({"#", "##", "-", "--", "n"})
_TIES = frozenset({"[", "_", "]", "[_", "_]"})
_OPAQUE_EXCLUDED = "*^v-x+"

# UTF-8 lead byte -> (continuation bytes owed, range of the next byte)
_UTF8_LEADS: dict[int, tuple[int, int, int]] = {}
for _b in range(0xC2, 0xE0):
    _UTF8_LEADS[_b] = (1, 0x80, 0xBF)
for _b in range(0xE0, 0xF0):
    _UTF8_LEADS[_b] = (2, 0xA0 if _b == 0xE0 else 0x80, 0x9F if _b == 0xED else 0xBF)
for _b in range(0xF0, 0xF5):
    _UTF8_LEADS[_b] = (3, 0x90 if _b == 0xF0 else 0x80, 0x8F if _b == 0xF4 else 0xBF)


class IllegalAdvance(ValueError):
    pass


class CellState(NamedTuple):
    """
    Recognizer position inside one field.

    `count` and `mark` are phase-specific: matched header characters,
    duration digits, dots, pitch letter repeats, or the current suffix stage
    and the characters written in it.
    """

    phase: str
    count: int = 0
    mark: str = ""
    note: bool = False
    utf8: tuple[int, int, int] = (0, 0, 0)


@dataclass(frozen=True)
class DecodeState:
    automaton: CellState | None = None
    active_spines: int = 0
    fields_in_record: int = 0
    record_kind: RecordKind | None = None
    pending_width: int = 0
    merge_run: int = 0
    opened: bool = False
    terminated: bool = False


def init_state() -> DecodeState:
    return DecodeState()


def _stage_ok(stage: int, run: str) -> bool:
    if stage == 0:
        return run in _ACCIDENTALS
    if stage == 1:
        return run in _TIES
    if stage == 3:
        ranks = [SUFFIX_STAGES[3].index(ch) for ch in run]
        return all(a < b for a, b in zip(ranks, ranks[1:]))
    if stage == 4:
        ranks = [BEAM_CHARS.index(ch) for ch in run]
        return ranks == sorted(ranks) and all(run.count(ch) <= MAX_REPEAT for ch in set(run))
    if stage == 5:
        return len(run) == 1
    return len(run) <= MAX_REPEAT


def _suffix_step(cell: CellState, ch: str) -> CellState | None:
    stage = _STAGE_OF.get(ch)
    if stage is None or stage < cell.count:
        return None
    # accidentals and ties belong to notes
    if not cell.note and stage < 2:
        return None
    run = cell.mark + ch if stage == cell.count else ch
    if not _stage_ok(stage, run):
        return None
    return cell._replace(count=stage, mark=run)


def _after_duration(ch: str) -> CellState | None:
    if ch in "qQ":
        return CellState("grace", mark=ch)
    if ch in PITCH_LETTERS:
        return CellState("pitch", 1, ch, note=True)
    if ch == "r":
        return CellState("suffix")
    return None


def _token_step(cell: CellState, ch: str) -> CellState | None:
    phase = cell.phase
    if phase == "start":
        if ch == "0":
            return CellState("duration", 1, "0")
        if ch in "123456789":
            return CellState("duration", 1)
        if ch in "qQ":
            return CellState("grace", mark=ch)
        return None
    if phase == "duration":
        if ch in "0123456789":
            if cell.mark == "0" or cell.count >= MAX_DURATION_DIGITS:
                return None
            return cell._replace(count=cell.count + 1)
        if ch == ".":
            return CellState("dots", 1)
        return _after_duration(ch)
    if phase == "dots":
        if ch == ".":
            return cell._replace(count=cell.count + 1) if cell.count < MAX_DOTS else None
        return _after_duration(ch)
    if phase == "grace":
        if ch == "q" and cell.mark == "q":
            return cell._replace(mark="qq")
        if ch in PITCH_LETTERS:
            return CellState("pitch", 1, ch, note=True)
        return None
    if phase == "pitch":
        if ch == cell.mark:
            return cell._replace(count=cell.count + 1) if cell.count < MAX_OCTAVE_RUN else None
        return _suffix_step(CellState("suffix", note=True), ch)
    if phase == "suffix":
        return _suffix_step(cell, ch)
    return None


def _opaque_step(cell: CellState, b: int, first: bool) -> CellState | None:
    owed, lo, hi = cell.utf8
    if owed:
        if not lo <= b <= hi:
            return None
        return cell._replace(utf8=(owed - 1, 0x80, 0xBF) if owed > 1 else (0, 0, 0))
    if b < 0x80:
        if first:
            ok = 0x21 <= b <= 0x7E and chr(b) not in _OPAQUE_EXCLUDED
        else:
            ok = 0x20 <= b <= 0x7E
        return cell._replace(phase="opaque") if ok else None
    lead = _UTF8_LEADS.get(b)
    return cell._replace(phase="opaque", utf8=lead) if lead else None


def _cell_step(cell: CellState, b: int) -> CellState | None:
    phase = cell.phase
    if phase == "exclusive":
        if cell.count < len(HEADER) and b == ord(HEADER[cell.count]):
            return cell._replace(count=cell.count + 1)
        return None
    if phase == "star":
        if b == ord("^"):
            return CellState("split")
        if b == ord("v"):
            return CellState("merge")
        if b == ord("-"):
            return CellState("terminate")
        return _opaque_step(cell, b, first=True)
    if phase == "opaque":
        return _opaque_step(cell, b, first=False)
    if phase == "barline":
        return cell if 0x21 <= b <= 0x7E else None
    if phase in ("split", "merge", "terminate", "null"):
        return None
    if b >= 0x80:
        return None
    ch = chr(b)
    if ch == " ":
        return CellState("start") if _cell_complete(cell) else None
    return _token_step(cell, ch)


def _open_cell(kind: RecordKind, b: int) -> CellState | None:
    if kind is RecordKind.EXCLUSIVE_INTERP:
        return CellState("exclusive", 1) if b == ord("*") else None
    if kind is RecordKind.TANDEM_INTERP:
        return CellState("star") if b == ord("*") else None
    if kind is RecordKind.BARLINE:
        return CellState("barline") if b == ord("=") else None
    if b >= 0x80:
        return None
    if b == ord("."):
        return CellState("null")
    return _token_step(CellState("start"), chr(b))


def _cell_complete(cell: CellState | None) -> bool:
    if cell is None:
        return False
    if cell.phase == "exclusive":
        return cell.count == len(HEADER)
    if cell.phase in ("start", "duration", "dots", "grace"):
        return False
    return cell.utf8[0] == 0


def _live(state: DecodeState) -> bool:
    """A manipulator record must never be left with a lone *v"""
    if state.record_kind is not RecordKind.TANDEM_INTERP or state.automaton is None:
        return True
    phase = state.automaton.phase
    if state.merge_run == 1 and phase not in ("star", "merge"):
        return False
    last_field = state.fields_in_record == state.active_spines
    return not (phase == "merge" and state.merge_run == 0 and last_field)


def _close_cell(state: DecodeState, end_of_record: bool) -> DecodeState | None:
    cell = state.automaton
    if not _cell_complete(cell):
        return None
    if state.record_kind is RecordKind.EXCLUSIVE_INTERP:
        if end_of_record:
            return DecodeState(active_spines=state.fields_in_record, opened=True)
        return replace(state, automaton=None)

    width = state.active_spines
    if end_of_record != (state.fields_in_record == width):
        return None
    if state.record_kind is not RecordKind.TANDEM_INTERP:
        if end_of_record:
            return DecodeState(active_spines=width, opened=True)
        return replace(state, automaton=None)

    pending, run = state.pending_width, state.merge_run
    if cell.phase == "merge":
        run += 1
    else:
        if run == 1:
            return None
        if run > 1:
            pending += 1
        run = 0
        pending += {"split": 2, "terminate": 0}.get(cell.phase, 1)
    if end_of_record:
        if run == 1:
            return None
        if run > 1:
            pending += 1
        return DecodeState(active_spines=pending, opened=True, terminated=pending == 0)
    return replace(state, automaton=None, pending_width=pending, merge_run=run)


@lru_cache(maxsize=1 << 16)
def step(state: DecodeState, b: int) -> DecodeState | None:
    """Consume one byte; None when no valid document continues this way"""
    if state.terminated:
        return None
    if b in (TAB, LF):
        return _close_cell(state, b == LF)

    kind = state.record_kind
    if kind is None:
        if not state.opened:
            kind = RecordKind.EXCLUSIVE_INTERP
        elif b == ord("*"):
            kind = RecordKind.TANDEM_INTERP
        elif b == ord("="):
            kind = RecordKind.BARLINE
        else:
            kind = RecordKind.DATA

    if state.automaton is None:
        cell = _open_cell(kind, b)
        fields = state.fields_in_record + 1
    else:
        cell = _cell_step(state.automaton, b)
        fields = state.fields_in_record
    if cell is None:
        return None
    nxt = replace(state, automaton=cell, record_kind=kind, fields_in_record=fields)
    return nxt if _live(nxt) else None


def advance(state: DecodeState, token_bytes: bytes) -> DecodeState:
    """Feed a token's bytes; raises IllegalAdvance if the token was masked"""
    if not token_bytes:
        raise IllegalAdvance("special tokens carry no bytes; use ConstraintEngine.advance")
    current = state
    for offset, b in enumerate(token_bytes):
        nxt = step(current, b)
        if nxt is None:
            raise IllegalAdvance(f"byte {offset} of {token_bytes!r} leaves the decoder language")
        current = nxt
    return current


def state_after(prefix: str | bytes) -> DecodeState:
    data = prefix.encode("utf-8") if isinstance(prefix, str) else prefix
    return advance(init_state(), data) if data else init_state()


class _TrieNode:
    __slots__ = ("ids", "children")

    def __init__(self):
        self.ids: list[int] = []
        self.children: dict[int, "_TrieNode"] = {}


class ConstraintEngine:
    """
    Mask computation over one vocabulary. The byte trie and mask cache are
    shared by every decode stream using this engine; states are immutable.
    """

    def __init__(self, vocab, cache_size: int = 4096):
        self.tokens: list[bytes] = list(getattr(vocab, "tokens", vocab))
        self.cache_size = cache_size
        self._masks: dict[DecodeState, np.ndarray] = {}
        self.hits = 0
        self.misses = 0
        self._root = _TrieNode()
        for token_id, data in enumerate(self.tokens):
            if token_id in (BOS_ID, EOS_ID) or not data:
                continue
            node = self._root
            for b in data:
                node = node.children.setdefault(b, _TrieNode())
            node.ids.append(token_id)

    def __len__(self) -> int:
        return len(self.tokens)

    def mask(self, state: DecodeState) -> np.ndarray:
        cached = self._masks.get(state)
        if cached is not None:
            self.hits += 1
            return cached
        self.misses += 1

        allowed = np.zeros(len(self.tokens), dtype=bool)
        allowed[EOS_ID] = state.terminated
        if not state.terminated:
            stack = [(self._root, state)]
            while stack:
                node, current = stack.pop()
                for b, child in node.children.items():
                    nxt = step(current, b)
                    if nxt is None:
                        continue
                    allowed[child.ids] = True
                    if child.children:
                        stack.append((child, nxt))

        allowed.flags.writeable = False
        if len(self._masks) >= self.cache_size:
            logger.debug(f"Mask cache full ({self.hits} hits, {self.misses} misses), clearing")
            self._masks.clear()
        self._masks[state] = allowed
        return allowed

    def allowed_ids(self, state: DecodeState) -> list[int]:
        return np.flatnonzero(self.mask(state)).tolist()

    def advance(self, state: DecodeState, token_id: int) -> DecodeState:
        if token_id == EOS_ID:
            if not state.terminated:
                raise IllegalAdvance("end of sequence before every spine is terminated")
            return state
        if token_id == BOS_ID or not 0 <= token_id < len(self.tokens):
            raise IllegalAdvance(f"token id {token_id} can never be emitted")
        return advance(state, self.tokens[token_id])


def compute_mask(state: DecodeState, vocab) -> np.ndarray:
    """One-off mask; decode loops should hold a ConstraintEngine instead"""
    return ConstraintEngine(vocab).mask(state)


def in_decoder_language(text: str | bytes) -> bool:
    """
    Membership test for the generated language, written against the
    parser and per-field patterns instead of the byte recognizer.
    """
    data = text.encode("utf-8") if isinstance(text, str) else text
    if not structural_check(data).accepted:
        return False
    lines = data.decode("utf-8").split("\n")
    if lines.pop() != "":
        return False
    for index, line in enumerate(lines):
        fields = line.split("\t")
        if index == 0:
            kinds = [RecordKind.EXCLUSIVE_INTERP]
        else:
            kinds = [RecordKind.TANDEM_INTERP, RecordKind.BARLINE, RecordKind.DATA]
        if not any(all(CELL_PATTERNS[k].fullmatch(f) for f in fields) for k in kinds):
            return False
    return True
