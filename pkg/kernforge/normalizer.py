"""
Target normalization for kernforge

Maps every filter-accepted document to one normal form, so that a rendered
score has exactly one token sequence. The pass list below is a deterministic
reconstruction: it is idempotent and reproduces every published example,
but it is not claimed to be the original 21-stage pipeline.

Canonical token order:
    duration, dots, grace, pitch (or r), accidental, tie, slur close,
    articulations, beams, stem, slur open

Normal-form output is exactly the language the constrained decoder emits;
`CELL_PATTERNS` spells that language out field by field and
`spelling_problem` tells the filter which tokens can never reach it.
"""

import logging
import re
from dataclasses import dataclass, field, replace

from .kern import (
    ACCIDENTAL_CHARS,
    NULL_TOKEN,
    PITCH_LETTERS,
    KernDocument,
    KernError,
    MANIPULATORS,
    NoteToken,
    RecordKind,
    accidental_groups,
    lex_token,
    pitch_of,
)

logger = logging.getLogger(__name__)

PASSES = (
    "strip-spines",
    "strip-comments",
    "strip-grace-rests",
    "strip-residue",
    "dedupe-meter",
    "dedupe-metadata",
    "repair-accidentals",
    "remove-zero-length-ties",
    "sort-token",
    "sort-chord",
    "repad-nulls",
    "renumber-manipulators",
    "final-newline",
)

GRACE_RANK = "qQ"
TIE_RANK = "[_]"
ARTICULATION_RANK = "'`~^;"
BEAM_RANK = "LJKk"
STEM_RANK = "/\\"

MAX_DURATION_DIGITS = 3
MAX_DOTS = 3
MAX_OCTAVE_RUN = 5
MAX_REPEAT = 3

# *met spellings and the *M signature they duplicate
METER_EQUIVALENTS = {"*met(c)": "*M4/4", "*met(c|)": "*M2/2"}

_TANDEM_FAMILY = re.compile(r"^\*(clef|k\[|met\(|MM|M(?=\d))")

_DURATION = rf"(?:0|[1-9][0-9]{{0,{MAX_DURATION_DIGITS - 1}}})\.{{0,{MAX_DOTS}}}"
_GRACE = r"(?:qq|q|Q)"
_PITCH = "(?:" + "|".join(f"{ch}{{1,{MAX_OCTAVE_RUN}}}" for ch in PITCH_LETTERS) + ")"
_SHARED_SUFFIX = (
    rf"\){{0,{MAX_REPEAT}}}'?`?~?\^?;?"
    + "".join(f"{ch}{{0,{MAX_REPEAT}}}" for ch in BEAM_RANK)
    + rf"[/\\]?\({{0,{MAX_REPEAT}}}"
)
_NOTE = (
    rf"(?:{_DURATION}{_GRACE}?|{_GRACE}){_PITCH}(?:##?|--?|n)?(?:\[_?|_\]?|\])?{_SHARED_SUFFIX}"
)
_REST = rf"{_DURATION}r{_SHARED_SUFFIX}"
_TOKEN = f"(?:{_NOTE}|{_REST})"

NORMAL_TOKEN = re.compile(_TOKEN)

# Every field of a normal-form record matches the pattern of its record kind
CELL_PATTERNS = {
    RecordKind.EXCLUSIVE_INTERP: re.compile(r"\*\*kern"),
    RecordKind.TANDEM_INTERP: re.compile(
        r"\*(?:|\^|v|-|(?![*^v\-x+])[!-~\x80-\U0010ffff][ -~\x80-\U0010ffff]*)"
    ),
    RecordKind.BARLINE: re.compile(r"=[!-~]*"),
    RecordKind.DATA: re.compile(rf"\.|{_TOKEN}(?: {_TOKEN})*"),
}


class NormalizationConflict(KernError):
    def __init__(self, pass_id: str, line: int | None, message: str):
        self.pass_id = pass_id
        self.message = message
        super().__init__(f"{pass_id}: {message}", line)


class EmptyDocument(KernError):
    pass


@dataclass
class NormalizationTrace:
    """Edits applied per pass; all zero when the input was already normal"""

    counts: dict[str, int] = field(default_factory=lambda: dict.fromkeys(PASSES, 0))

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def is_clean(self) -> bool:
        return self.total == 0


def _ranked(chars: str, rank: str) -> str:
    return "".join(sorted(chars, key=rank.index))


def render_token(tok: NoteToken) -> str:
    """Spell a token's components in canonical order, each articulation once"""
    if tok.null:
        return "."
    head = tok.duration_digits + "." * tok.dots + _ranked(tok.grace, GRACE_RANK)
    body = ("r" if tok.rest else tok.pitch_letters) + tok.accidental
    tail = (
        _ranked(tok.tie, TIE_RANK)
        + tok.slur_close
        + _ranked(set(tok.articulations), ARTICULATION_RANK)
        + _ranked(tok.beams, BEAM_RANK)
        + _ranked(tok.stem, STEM_RANK)
        + tok.slur_open
        + tok.unknown_trailing
    )
    return head + body + tail


def sort_token(tok: NoteToken) -> NoteToken:
    text = render_token(tok)
    if text == tok.text:
        return tok
    return lex_token(text)


def sort_chord(tokens: tuple[NoteToken, ...]) -> tuple[NoteToken, ...]:
    """Ascending pitch; equal pitches and rests keep their written order"""
    if len(tokens) < 2:
        return tokens

    def key(tok: NoteToken) -> tuple[int, int]:
        if tok.is_note:
            return (0, pitch_of(tok).semitone)
        return (1, 0)

    return tuple(sorted(tokens, key=key))


def strip_residue(tok: NoteToken) -> NoteToken:
    """
    Drop characters the lexer could not place: OCR debris, terminal string
    markers and rest display positions ("8rGG" becomes "8r").
    """
    if tok.null or not tok.unknown_trailing:
        return tok
    return lex_token(render_token(replace(tok, unknown_trailing="")))


def repair_accidentals(tok: NoteToken) -> NoteToken:
    """
    Collapse a sharp/flat written together with a natural: the last-written
    accidental group wins. Sharps mixed with flats cannot be repaired. A
    doubled natural is written once.
    """
    groups = accidental_groups(tok.accidental)
    families = {g[0] for g in groups}
    if len(families) > 1 and ("n" not in families or len(families) == 3):
        raise NormalizationConflict(
            "repair-accidentals", None, f"irreconcilable accidentals in {tok.text!r}"
        )
    if not groups:
        return tok
    keep = "n" if groups[-1][0] == "n" else groups[-1]
    if keep == tok.accidental:
        return tok
    keep_from = len(tok.accidental) - len(keep)
    seen = 0
    chars = []
    for ch in tok.text:
        if ch in ACCIDENTAL_CHARS:
            if seen >= keep_from:
                chars.append(ch)
            seen += 1
        else:
            chars.append(ch)
    return lex_token("".join(chars))


def remove_zero_length_ties(tok: NoteToken) -> NoteToken:
    """Drop "[]" ties that open and close on one note; "][" becomes a continuation"""
    text = tok.text
    while "[" in text and "]" in text:
        start, end = text.index("["), text.index("]")
        if start < end:
            text = text[:start] + text[start + 1 : end] + text[end + 1 :]
        else:
            text = text[:end] + "_" + text[end + 1 : start] + text[start + 1 :]
    if text == tok.text:
        return tok
    return lex_token(text)


def normal_token(tok: NoteToken) -> NoteToken:
    """The token-level passes in pipeline order"""
    tok = strip_residue(tok)
    tok = repair_accidentals(tok)
    tok = remove_zero_length_ties(tok)
    return sort_token(tok)


def spelling_problem(tok: NoteToken) -> str | None:
    """
    Why a token has no normal-form spelling, or None if normalization can
    write it. Grace rests are dropped, so they never have a problem.
    """
    if tok.null or (tok.rest and tok.grace):
        return None
    try:
        text = normal_token(tok).text
    except KernError as e:
        return str(e)
    if not NORMAL_TOKEN.fullmatch(text):
        return f"token {tok.text!r} has no normal-form spelling ({text!r})"
    return None
def _rebuild(doc: KernDocument, rows: list[list[str]]) -> KernDocument:
    return KernDocument.from_rows(rows, doc.source_name, doc.trailing_newline)


def _map_kern_cells(doc: KernDocument, pass_id: str, fn) -> tuple[KernDocument, int]:
    """Apply `fn(tokens) -> tokens` to every non-null **kern data cell"""
    rows = []
    edits = 0
    for record in doc.records:
        if record.kind is not RecordKind.DATA:
            rows.append(record.texts)
            continue
        row = []
        for i, cell in enumerate(record.cells):
            if record.interps[i] != "**kern" or cell.is_null:
                row.append(cell.text)
                continue
            try:
                tokens = fn(cell.tokens)
            except NormalizationConflict as e:
                raise NormalizationConflict(pass_id, record.line, e.message) from e
            text = " ".join(t.text for t in tokens)
            if text != cell.text:
                edits += 1
            row.append(text)
        rows.append(row)
    if not edits:
        return doc, 0
    return _rebuild(doc, rows), edits


def _strip_spines(doc: KernDocument) -> tuple[KernDocument, int]:
    opening = [r for r in doc.records if r.kind is RecordKind.EXCLUSIVE_INTERP]
    if not opening or "**kern" not in opening[0].texts:
        raise EmptyDocument(f"{doc.source_name} has no **kern spine")
    removed = sum(1 for t in opening[0].texts if t != "**kern")
    if not removed:
        return doc, 0
    rows = []
    for record in doc.records:
        if record.is_global_comment:
            rows.append(record.texts)
            continue
        keep = [c.text for i, c in enumerate(record.cells) if record.interps[i] == "**kern"]
        if keep:
            rows.append(keep)
    return _rebuild(doc, rows), removed


def _strip_comments(doc: KernDocument) -> tuple[KernDocument, int]:
    rows = [r.texts for r in doc.records if r.kind is not RecordKind.COMMENT]
    removed = len(doc.records) - len(rows)
    if not removed:
        return doc, 0
    return _rebuild(doc, rows), removed


def _drop_grace_rests(tokens: tuple[NoteToken, ...]) -> tuple[NoteToken, ...]:
    kept = tuple(t for t in tokens if not (t.rest and t.grace))
    return kept or (NULL_TOKEN,)


def _interp_blocks(doc: KernDocument) -> list[list[int]]:
    """
    Runs of interpretation records between sounding records. Rows holding
    only nulls and comments do not split a run.
    """
    blocks: list[list[int]] = [[]]
    for index, record in enumerate(doc.records):
        if record.kind in (RecordKind.TANDEM_INTERP, RecordKind.SPINE_MANIPULATOR):
            blocks[-1].append(index)
        elif record.kind is RecordKind.BARLINE or (
            record.kind is RecordKind.DATA and not all(c.text == "." for c in record.cells)
        ):
            if blocks[-1]:
                blocks.append([])
    return [b for b in blocks if b]


def _blank_cells(doc: KernDocument, blanks: set[tuple[int, int]]) -> KernDocument:
    rows = [
        ["*" if (r, i) in blanks else text for i, text in enumerate(record.texts)]
        for r, record in enumerate(doc.records)
    ]
    return _rebuild(doc, rows)


def _dedupe_meter(doc: KernDocument) -> tuple[KernDocument, int]:
    blanks: set[tuple[int, int]] = set()
    for block in _interp_blocks(doc):
        signatures = {
            (doc.records[r].voices[i], text)
            for r in block
            for i, text in enumerate(doc.records[r].texts)
        }
        for r in block:
            record = doc.records[r]
            for i, text in enumerate(record.texts):
                equivalent = METER_EQUIVALENTS.get(text)
                if equivalent and (record.voices[i], equivalent) in signatures:
                    blanks.add((r, i))
    if not blanks:
        return doc, 0
    return _blank_cells(doc, blanks), len(blanks)


def _dedupe_metadata(doc: KernDocument) -> tuple[KernDocument, int]:
    blanks: set[tuple[int, int]] = set()
    for block in _interp_blocks(doc):
        last: dict[tuple[str, str], str] = {}
        for r in block:
            record = doc.records[r]
            for i, text in enumerate(record.texts):
                if text == "*" or text in MANIPULATORS:
                    continue
                match = _TANDEM_FAMILY.match(text)
                family = match.group(1) if match else text
                key = (record.voices[i], family)
                if last.get(key) == text:
                    blanks.add((r, i))
                last[key] = text
    if not blanks:
        return doc, 0
    return _blank_cells(doc, blanks), len(blanks)


def _repad_nulls(doc: KernDocument) -> tuple[KernDocument, int]:
    rows = [
        r.texts
        for r in doc.records
        if not (r.kind is RecordKind.DATA and all(c.text == "." for c in r.cells))
    ]
    removed = len(doc.records) - len(rows)
    if not removed:
        return doc, 0
    return _rebuild(doc, rows), removed


def _renumber_manipulators(doc: KernDocument) -> tuple[KernDocument, int]:
    rows = [
        r.texts
        for r in doc.records
        if not (r.kind is RecordKind.TANDEM_INTERP and all(c.text == "*" for c in r.cells))
    ]
    removed = len(doc.records) - len(rows)
    if not removed:
        return doc, 0
    return _rebuild(doc, rows), removed


def _final_newline(doc: KernDocument) -> tuple[KernDocument, int]:
    if doc.trailing_newline or not doc.records:
        return doc, 0
    return KernDocument.from_rows(doc.rows(), doc.source_name), 1


_PIPELINE = {
    "strip-spines": _strip_spines,
    "strip-comments": _strip_comments,
    "strip-grace-rests": lambda d: _map_kern_cells(d, "strip-grace-rests", _drop_grace_rests),
    "strip-residue": lambda d: _map_kern_cells(
        d, "strip-residue", lambda toks: tuple(strip_residue(t) for t in toks)
    ),
    "dedupe-meter": _dedupe_meter,
    "dedupe-metadata": _dedupe_metadata,
    "repair-accidentals": lambda d: _map_kern_cells(
        d, "repair-accidentals", lambda toks: tuple(repair_accidentals(t) for t in toks)
    ),
    "remove-zero-length-ties": lambda d: _map_kern_cells(
        d, "remove-zero-length-ties", lambda toks: tuple(remove_zero_length_ties(t) for t in toks)
    ),
    "sort-token": lambda d: _map_kern_cells(
        d, "sort-token", lambda toks: tuple(sort_token(t) for t in toks)
    ),
    "sort-chord": lambda d: _map_kern_cells(d, "sort-chord", sort_chord),
    "repad-nulls": _repad_nulls,
    "renumber-manipulators": _renumber_manipulators,
    "final-newline": _final_newline,
}


def normalize_document(doc: KernDocument) -> tuple[KernDocument, NormalizationTrace]:
    """Run every pass in order and record how many edits each one made"""
    trace = NormalizationTrace()
    for pass_id in PASSES:
        doc, edits = _PIPELINE[pass_id](doc)
        trace.counts[pass_id] = edits
        if edits:
            logger.debug(f"{doc.source_name}: {pass_id} made {edits} edit(s)")
    return doc, trace


def strip_nonkern_spines(doc: KernDocument) -> KernDocument:
    return _strip_spines(doc)[0]


def strip_nonvisual(doc: KernDocument) -> KernDocument:
    """
    Remove comments, grace rests, residue, zero-length ties and duplicated
    *met signatures
    """
    doc, _ = _strip_comments(doc)
    doc, _ = _PIPELINE["strip-grace-rests"](doc)
    doc, _ = _PIPELINE["strip-residue"](doc)
    doc, _ = _PIPELINE["remove-zero-length-ties"](doc)
    doc, _ = _dedupe_meter(doc)
    doc, _ = _repad_nulls(doc)
    doc, _ = _renumber_manipulators(doc)
    return doc
