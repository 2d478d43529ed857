"""
Tests for the constraint engine

Masks are checked against an oracle built from the parser's spine
arithmetic and the normal-form field patterns, without the byte recognizer:
a masked token must leave no way to finish the document, and every allowed
token must be finishable into text that `in_decoder_language` accepts.
"""

from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kern_strategies import kern_documents
from kernforge.bpe import BOS_ID, EOS_ID, train
from kernforge.constraints import (
    ConstraintEngine,
    DecodeState,
    IllegalAdvance,
    advance,
    compute_mask,
    in_decoder_language,
    init_state,
    state_after,
    step,
)
from kernforge.kern import KernError, RecordKind, apply_manipulators
from kernforge.normalizer import CELL_PATTERNS

TOY = [
    "*", "k", "e", "r", "n", "\t", "\n", "-", "v", "^", "=", "1", "4", "0", ".", "c", "C",
    "#", "[", "]", "_", "L", "J", "q", " ", "(", ")", "'", "/", "M", "3", "!",
    "**kern", "*-", "*v", "4c", "\t*", "\n*", "=1", ".\t", "8cc#", "4r", "*^\t", "kern\n",
    "c\n", "*clefG2", "\n=", "*M3/4", "4.", "cL", "**", "!!",
]  # fmt: skip
TOY_TOKENS = [b"", b""] + [t.encode() for t in TOY]

# Smaller vocabulary for the exhaustive prefix search
SEARCH = [
    "**kern", "**", "*", "kern\n", "\t", "\n", "\t*", "*^", "*v", "*-", "*-\n", "=", "=1\n",
    ".", "4", "0", "c", "C", "#", "[", "]", "L", " ", "q", "r", "'", ")", "*clefG2", "4c\n",
    "!",
]  # fmt: skip
SEARCH_TOKENS = [b"", b""] + [t.encode() for t in SEARCH]
MAX_PREFIX_TOKENS = 12

HEADER = "**kern"
RECORD_KINDS = (RecordKind.TANDEM_INTERP, RecordKind.BARLINE, RecordKind.DATA)

# Any field prefix of the language is finished by one of these
ENDINGS = {
    RecordKind.TANDEM_INTERP: ("", "*", "v", "^", "-", "*v", "*^", "*-", "I", "*I"),
    RecordKind.BARLINE: ("", "="),
    RecordKind.DATA: ("", ".", "c", "4c"),
}

_seen_bytes = set(b"".join(TOY_TOKENS + SEARCH_TOKENS))
FINISH_ORDER = bytes(b"\n\t*-.=c4kern") + bytes(sorted(_seen_bytes - set(b"\n\t*-.=c4kern")))
MAX_COMPLETION = 512


@pytest.fixture(scope="module")
def engine() -> ConstraintEngine:
    return ConstraintEngine(TOY_TOKENS)


def tid(token: str) -> int:
    return TOY.index(token) + 2


def allowed_tokens(engine: ConstraintEngine, prefix: str) -> set[str]:
    return {TOY[i - 2] for i in engine.allowed_ids(state_after(prefix)) if i >= 2}


def row_fits(fields: list[str], kind: RecordKind, width: int) -> bool:
    if len(fields) != width or not all(CELL_PATTERNS[kind].fullmatch(f) for f in fields):
        return False
    if kind is RecordKind.TANDEM_INTERP:
        try:
            apply_manipulators(fields, [HEADER] * width, [str(i) for i in range(width)])
        except KernError:
            return False
    return True


def next_width(fields: list[str], kind: RecordKind, width: int) -> int:
    if kind is not RecordKind.TANDEM_INTERP:
        return width
    interps, _ = apply_manipulators(fields, [HEADER] * width, [str(i) for i in range(width)])
    return len(interps)


@lru_cache(maxsize=None)
def finished_width(head: str) -> int | None:
    """Active spines after the complete records of `head`, or None if one is outside the language"""
    body, _, line = head[:-1].rpartition("\n")
    fields = line.split("\t")
    if "\n" not in head[:-1]:
        return len(fields) if all(f == HEADER for f in fields) else None
    width = finished_width(body + "\n")
    if not width:
        return None
    for kind in RECORD_KINDS:
        if row_fits(fields, kind, width):
            return next_width(fields, kind, width)
    return None


def fills(kind: RecordKind, missing: int) -> list[list[str]]:
    if kind is RecordKind.TANDEM_INTERP:
        rows = [["*"] * missing]
        if missing:
            rows.append(["*v"] + ["*"] * (missing - 1))
        return rows
    return [["=" if kind is RecordKind.BARLINE else "."] * missing]


def viable(text: str) -> bool:
    """Whether some document in the language starts with `text`"""
    head, newline, partial = text.rpartition("\n")
    head += newline
    if not head:
        fields = partial.split("\t")
        return all(f == HEADER for f in fields[:-1]) and HEADER.startswith(fields[-1])
    width = finished_width(head)
    if width is None:
        return False
    if width == 0:
        return partial == ""
    if not partial:
        return True
    fields = partial.split("\t")
    missing = width - len(fields)
    if missing < 0:
        return False
    for kind, endings in ENDINGS.items():
        for ending in endings:
            done = fields[:-1] + [fields[-1] + ending]
            if any(row_fits(done + fill, kind, width) for fill in fills(kind, missing)):
                return True
    return False


@lru_cache(maxsize=None)
def finish(state: DecodeState) -> bytes | None:
    """Bytes taking `state` to a finished document, by depth-first search over the grammar"""
    stack = [(state, b"")]
    seen = {state}
    while stack:
        current, path = stack.pop()
        if current.terminated:
            return path
        if len(path) >= MAX_COMPLETION:
            continue
        for b in reversed(FINISH_ORDER):
            nxt = step(current, b)
            if nxt is not None and nxt not in seen:
                seen.add(nxt)
                stack.append((nxt, path + bytes([b])))
    return None


def check_masks(engine: ConstraintEngine, vocab: list[str], state: DecodeState, prefix: str):
    """Yield the states behind allowed tokens after checking every token at `state`"""
    mask = engine.mask(state)
    assert not mask[BOS_ID]
    assert mask[EOS_ID] == state.terminated
    for index, token in enumerate(vocab):
        text = prefix + token
        if not mask[index + 2]:
            with pytest.raises(IllegalAdvance):
                engine.advance(state, index + 2)
            assert not viable(text), text
            continue
        yield engine.advance(state, index + 2), text


def assert_finishable(state: DecodeState, text: str) -> None:
    path = finish(state)
    assert path is not None, text
    assert in_decoder_language(text.encode() + path), text


@st.composite
def document_prefixes(draw) -> str:
    text = draw(kern_documents(normalized=True))
    return text[: draw(st.integers(0, min(len(text), 160)))]


# =============================================================================
# Hand-checked masks
# =============================================================================


def test_document_start(engine):
    assert allowed_tokens(engine, "") == {"*", "**kern", "**"}
    assert not engine.mask(init_state())[EOS_ID]


def test_after_single_spine_header(engine):
    allowed = allowed_tokens(engine, "**kern\n")
    assert {"4c", "*-", "=", "=1", ".", "*", "*clefG2", "*M3/4", "4.", "8cc#", "4r"} <= allowed
    assert not {"\t", "\n", ".\t", "*^\t", "*v", "!", "!!", "**", "**kern", "\t*"} & allowed


def test_header_can_widen(engine):
    allowed = allowed_tokens(engine, "**kern")
    assert {"\t", "\n", "\t*"} <= allowed
    assert "kern\n" not in allowed


def test_lone_merge_needs_a_partner(engine):
    allowed = allowed_tokens(engine, "**kern\t**kern\n*v\t")
    assert {"*", "*v"} <= allowed
    assert not {"*-", "*clefG2", "4c", "\t", "\n", "*^\t"} & allowed


def test_inside_a_note(engine):
    allowed = allowed_tokens(engine, "**kern\n*clefG2\n4c")
    assert {"\n", "#", " ", "c", "[", "L", "'", "/", "(", ")", "c\n", "cL"} <= allowed
    assert not {"\t", "4", "C", "r", ".", "q", "!"} & allowed


def test_inside_a_duration(engine):
    allowed = allowed_tokens(engine, "**kern\n4")
    assert {"c", "C", ".", "4", "0", "q", "r", "cL"} <= allowed
    assert not {"\n", "\t", " ", "#", "L"} & allowed


def test_rests_take_no_accidentals(engine):
    allowed = allowed_tokens(engine, "**kern\n4r")
    assert {"\n", "L", ")"} <= allowed
    assert not {"#", "[", "_", "c"} & allowed


def test_articulations_in_canonical_order(engine):
    assert "'" not in allowed_tokens(engine, "**kern\n4cL")
    assert "L" in allowed_tokens(engine, "**kern\n4c'")


def test_terminated_document(engine):
    state = state_after("**kern\n*-\n")
    assert state.terminated
    assert engine.allowed_ids(state) == [EOS_ID]


def test_partial_termination(engine):
    allowed = allowed_tokens(engine, "**kern\t**kern\n*-\t*\n")
    assert "\t" not in allowed
    assert "*-" in allowed
    assert not state_after("**kern\t**kern\n*-\t*\n").terminated


# =============================================================================
# Engine mechanics
# =============================================================================


def test_advance_rejects_masked_tokens(engine):
    state = state_after("**kern\n")
    with pytest.raises(IllegalAdvance):
        engine.advance(state, tid("\t"))
    with pytest.raises(IllegalAdvance):
        engine.advance(state, EOS_ID)
    with pytest.raises(IllegalAdvance):
        engine.advance(state, BOS_ID)
    with pytest.raises(IllegalAdvance):
        engine.advance(state, len(TOY_TOKENS))
    with pytest.raises(IllegalAdvance):
        advance(state, b"")


def test_eos_after_termination(engine):
    state = state_after("**kern\n*-\n")
    assert engine.advance(state, EOS_ID) == state


def test_mask_cache(engine):
    state = state_after("**kern\n4")
    first = engine.mask(state)
    hits = engine.hits
    second = engine.mask(state_after("**kern\n4"))
    assert second is first
    assert engine.hits == hits + 1
    assert not first.flags.writeable


def test_cache_eviction():
    small = ConstraintEngine(TOY_TOKENS, cache_size=2)
    for prefix in ["", "*", "**", "**k"]:
        small.mask(state_after(prefix))
    assert len(small._masks) <= 2


def test_compute_mask_matches_engine(engine):
    state = state_after("**kern\n4c")
    assert np.array_equal(compute_mask(state, TOY_TOKENS), engine.mask(state))


def test_engine_accepts_trained_vocab():
    vocab = train(["**kern\n*clefG2\n4c\n4c\n*-\n"], vocab_size=270)
    engine = ConstraintEngine(vocab)
    assert len(engine) == len(vocab)
    state = state_after("**kern\n*clefG2\n")
    starts = set(b"*=.qQ0123456789")
    assert all(vocab.tokens[i][0] in starts for i in engine.allowed_ids(state))


def test_non_ascii_tandem():
    text = "**kern\n*I\"Violín\n*-\n"
    assert state_after(text).terminated
    assert in_decoder_language(text)
    state = state_after(b"**kern\n*I")
    assert step(state, 0xED) is not None
    assert step(step(state, 0xC3), 0x28) is None


# =============================================================================
# Properties
# =============================================================================


@given(kern_documents(normalized=True))
def test_normal_form_is_in_the_decoder_language(text):
    assert in_decoder_language(text)
    data = text.encode()
    state = init_state()
    for b in data:
        state = step(state, b)
        assert state is not None
    assert state.terminated


def test_masks_agree_with_exhaustive_search():
    """
    Every sequence of up to twelve search tokens, breadth first. A sequence
    reaching a state already visited is not extended: masks depend on the
    state alone.
    """
    engine = ConstraintEngine(SEARCH_TOKENS)
    frontier = {init_state(): ""}
    visited = set(frontier)
    for depth in range(MAX_PREFIX_TOKENS + 1):
        following: dict[DecodeState, str] = {}
        for state, prefix in frontier.items():
            for nxt, text in check_masks(engine, SEARCH, state, prefix):
                if nxt in visited:
                    continue
                visited.add(nxt)
                assert_finishable(nxt, text)
                if depth < MAX_PREFIX_TOKENS:
                    following[nxt] = text
        frontier = following
    assert any(s.terminated for s in visited)
    assert any(s.active_spines > 2 for s in visited)


@given(document_prefixes())
@settings(max_examples=30)
def test_masks_agree_on_document_prefixes(engine, prefix):
    for nxt, text in check_masks(engine, TOY, state_after(prefix), prefix):
        assert_finishable(nxt, text)


@pytest.mark.parametrize(
    "text,expected",
    [
        ("", True),
        ("**ke", True),
        ("**kern\t**", True),
        ("**kern\t\t", False),
        ("**kern\n4c\t", False),
        ("**kern\t**kern\n*v\t", True),
        ("**kern\t**kern\n*v\t*c", False),
        ("**kern\t**kern\n*\t*v", False),
        ("**kern\n4c 4", True),
        ("**kern\n4cC", False),
        ("**kern\n4r#", False),
        ("**kern\n*-\n", True),
        ("**kern\n*-\n*", False),
    ],
)
def test_oracle_sanity(text, expected):
    assert viable(text) is expected
