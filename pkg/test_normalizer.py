"""
Tests for target normalization
"""

import pytest
from hypothesis import given

from kern_strategies import kern_documents
from kernforge.constraints import in_decoder_language, state_after
from kernforge.filters import check_measures, filter_text
from kernforge.kern import (
    lex_cell,
    lex_token,
    parse_document,
    pitch_of,
    serialize_document,
    token_duration,
)
from kernforge.metrics import omr_ned
from kernforge.normalizer import (
    PASSES,
    EmptyDocument,
    NormalizationConflict,
    normalize_document,
    remove_zero_length_ties,
    render_token,
    repair_accidentals,
    sort_chord,
    spelling_problem,
    strip_nonkern_spines,
    strip_nonvisual,
    strip_residue,
)


def kern(*rows: str) -> str:
    return "".join(row + "\n" for row in rows)


def normalize(text: str) -> tuple[str, dict[str, int]]:
    doc, trace = normalize_document(parse_document(text))
    return serialize_document(doc), trace.counts


def one_cell(*cells: str) -> str:
    return kern("**kern", "*clefG2", "*M4/4", *cells, "*-")


# =============================================================================
# Single-token passes
# =============================================================================


@pytest.mark.parametrize(
    "raw,expected",
    [
        ("[8fJ", "8f[J"),
        ("8fJ[", "8f[J"),
        (";4c'", "4c';"),
        ("(4c)", "4c)("),
        ("/L8e", "8eL/"),
        ("4c#", "4c#"),
        ("8qqc", "8qqc"),
        ("4.r", "4.r"),
    ],
)
def test_canonical_component_order(raw, expected):
    assert render_token(lex_token(raw)) == expected


@pytest.mark.parametrize("raw,expected", [("4c#n", "4cn"), ("4cn#", "4c#"), ("4d-n", "4dn")])
def test_repair_accidentals(raw, expected):
    assert repair_accidentals(lex_token(raw)).text == expected


def test_accidentals_left_alone():
    tok = lex_token("4c##")
    assert repair_accidentals(tok) is tok


def test_sharp_with_flat_is_a_conflict():
    with pytest.raises(NormalizationConflict):
        repair_accidentals(lex_token("4c#-n"))


@pytest.mark.parametrize("raw,expected", [("4G[]", "4G"), ("4G][", "4G_"), ("4G[", "4G[")])
def test_zero_length_ties(raw, expected):
    assert remove_zero_length_ties(lex_token(raw)).text == expected


@pytest.mark.parametrize(
    "raw,expected", [("4ct", "4c"), ("4ryy", "4r"), ("8rGG", "8r"), ("t4c", "4c"), ("4c", "4c")]
)
def test_residue_stripped(raw, expected):
    assert strip_residue(lex_token(raw)).text == expected


@pytest.mark.parametrize("raw,expected", [("4c''", "4c'"), ("4c;';", "4c';"), ("^4c^", "4c^")])
def test_repeated_articulations_written_once(raw, expected):
    assert render_token(lex_token(raw)) == expected


@pytest.mark.parametrize("raw,expected", [("4cnn", "4cn"), ("4c#nn", "4cn"), ("4cn", "4cn")])
def test_doubled_natural(raw, expected):
    assert repair_accidentals(lex_token(raw)).text == expected


@pytest.mark.parametrize("raw", ["4c", "8qr", "4ct", "4c''", "4cnn", "[4c]", "4c#n"])
def test_normalization_can_spell(raw):
    assert spelling_problem(lex_token(raw)) is None


@pytest.mark.parametrize("raw", ["4....c", "4c__", "4r#", "4r[", "4cccccc", "1024c", "4cLLLL", "4c//"])
def test_normalization_cannot_spell(raw):
    assert "no normal-form spelling" in spelling_problem(lex_token(raw))


def test_chords_sorted_ascending():
    assert [t.text for t in sort_chord(lex_cell("4g 4e 4c"))] == ["4c", "4e", "4g"]
    assert [t.text for t in sort_chord(lex_cell("4c# 4d-"))] == ["4c#", "4d-"]
    assert [t.text for t in sort_chord(lex_cell("4cc 4C"))] == ["4C", "4cc"]


# =============================================================================
# Whole-document pipeline
# =============================================================================


def test_chord_order_in_document():
    text, counts = normalize(one_cell("4g 4e 4c", "4c# 4d-", "2c"))
    assert "4c 4e 4g\n4c# 4d-\n" in text
    assert counts["sort-chord"] == 1


def test_meter_duplicate_removed():
    text, counts = normalize(kern("**kern", "*clefG2", "*met(c)", "*M4/4", "1c", "*-"))
    assert text == kern("**kern", "*clefG2", "*M4/4", "1c", "*-")
    assert counts["dedupe-meter"] == 1
    assert counts["renumber-manipulators"] == 1


def test_repeated_clef_removed():
    text, counts = normalize(kern("**kern", "*clefG2", "*clefG2", "*M4/4", "1c", "*-"))
    assert text == kern("**kern", "*clefG2", "*M4/4", "1c", "*-")
    assert counts["dedupe-metadata"] == 1


def test_clef_change_kept():
    raw = kern("**kern", "*clefG2", "*clefF4", "*M4/4", "1C", "*-")
    text, _ = normalize(raw)
    assert "*clefF4" in text


def test_grace_rests_and_comments_dropped():
    raw = kern("!!!OTL: test", "**kern", "*clefG2", "*M2/4", "! hidden", "8qr", "2c", "*-")
    text, counts = normalize(raw)
    assert text == kern("**kern", "*clefG2", "*M2/4", "2c", "*-")
    assert counts["strip-comments"] == 2
    assert counts["strip-grace-rests"] == 1
    assert counts["repad-nulls"] == 1


def test_grace_rest_in_chord_cell():
    text, _ = normalize(one_cell("8qr 1c"))
    assert "\n1c\n" in text


def test_non_kern_spines_stripped():
    raw = kern(
        "**dynam\t**kern\t**dynam",
        "*\t*clefG2\t*",
        "*\t*M1/4\t*",
        "p\t4c\t.",
        "*-\t*-\t*-",
    )
    text, counts = normalize(raw)
    assert text == kern("**kern", "*clefG2", "*M1/4", "4c", "*-")
    assert counts["strip-spines"] == 2


def test_no_kern_spine():
    with pytest.raises(EmptyDocument):
        normalize_document(parse_document(kern("**dynam", "p", "*-")))


def test_conflict_reports_pass_and_line():
    with pytest.raises(NormalizationConflict) as info:
        normalize_document(parse_document(one_cell("1c#-")))
    assert info.value.pass_id == "repair-accidentals"
    assert info.value.line == 4


def test_residue_articulations_and_naturals_in_document():
    text, counts = normalize(one_cell("4ct", "4ryy", "4c''", "4cnn"))
    assert text == one_cell("4c", "4r", "4c'", "4cn")
    assert counts["strip-residue"] == 2
    assert counts["sort-token"] == 1
    assert counts["repair-accidentals"] == 1
    assert state_after(text).terminated


def test_final_newline_added():
    text, counts = normalize("**kern\n*clefG2\n*M1/4\n4c\n*-")
    assert text == kern("**kern", "*clefG2", "*M1/4", "4c", "*-")
    assert counts["final-newline"] == 1


def test_clean_document_untouched():
    raw = kern("**kern", "*clefG2", "*M2/4", "4c# 4e", "8f[J", "8fL", "==", "*-")
    doc = parse_document(raw)
    out, trace = normalize_document(doc)
    assert out is doc
    assert trace.is_clean
    assert list(trace.counts) == list(PASSES)


def test_strip_helpers():
    raw = kern("**kern\t**dynam", "*clefG2\t*", "*met(c)\t*", "*M4/4\t*", "1c[]\tp", "*-\t*-")
    doc = strip_nonkern_spines(parse_document(raw))
    assert serialize_document(doc).startswith("**kern\n")
    visual = serialize_document(strip_nonvisual(doc))
    assert visual == kern("**kern", "*clefG2", "*M4/4", "1c", "*-")


# =============================================================================
# Properties
# =============================================================================


@given(kern_documents(normalized=True))
def test_normal_form_is_a_fixed_point(text):
    out, counts = normalize(text)
    assert out == text
    assert sum(counts.values()) == 0


@given(kern_documents(normalized=False))
def test_idempotent(text):
    once, _ = normalize(text)
    twice, counts = normalize(once)
    assert twice == once
    assert sum(counts.values()) == 0


@given(kern_documents(normalized=False))
def test_output_passes_filter_and_decoder_language(text):
    out, _ = normalize(text)
    assert filter_text(out).accepted
    assert in_decoder_language(out)


@given(kern_documents(normalized=False))
def test_output_replays_through_the_decoder(text):
    assert filter_text(text).accepted
    out, _ = normalize(text)
    assert state_after(out).terminated


def profile(doc) -> list[tuple]:
    """Sorted pitches and durations of every data cell, accidentals repaired"""
    rows = []
    for record in doc.data_records():
        cells = []
        for cell in record.cells:
            tokens = [repair_accidentals(t) for t in cell.tokens if not t.null]
            pitches = sorted(pitch_of(t).semitone for t in tokens if t.is_note)
            durations = sorted(token_duration(t) for t in tokens)
            cells.append((tuple(pitches), tuple(durations)))
        rows.append(tuple(cells))
    return rows


@given(kern_documents(normalized=False))
def test_passes_keep_pitches_and_durations(text):
    before = strip_nonvisual(strip_nonkern_spines(parse_document(text)))
    after, _ = normalize_document(before)
    assert len(after.data_records()) == len(before.data_records())
    assert profile(after) == profile(before)
    assert check_measures(after) == check_measures(before) == []


@given(kern_documents(normalized=False, artifacts=False))
def test_reordering_alone_scores_zero(text):
    out, counts = normalize(text)
    assert {p for p, n in counts.items() if n} <= {"sort-token", "sort-chord"}
    assert omr_ned(parse_document(out), parse_document(text)).omr_ned == 0
