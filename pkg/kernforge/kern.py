"""
Humdrum **kern core for kernforge

Lossless parsing and serialization of **kern text, plus the duration and
pitch arithmetic that filtering, normalization and scoring build on.
Documents are immutable once parsed.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

logger = logging.getLogger(__name__)

# Exact fractions of a whole note
Rational = Fraction

KNOWN_EXCLUSIVE_INTERPS = frozenset(
    {
        "kern",
        "text",
        "silbe",
        "dynam",
        "dyn",
        "harm",
        "root",
        "fing",
        "fb",
        "mxhm",
        "recip",
        "mens",
        "cdata",
        "tabla",
        "color",
        "function",
        "phrase",
        "deg",
    }
)

SPLIT = "*^"
MERGE = "*v"
TERMINATE = "*-"
MANIPULATORS = frozenset({SPLIT, MERGE, TERMINATE})
UNSUPPORTED_MANIPULATORS = frozenset({"*x", "*+"})

PITCH_LETTERS = "abcdefgABCDEFG"
ACCIDENTAL_CHARS = "#-n"
TIE_CHARS = "[_]"
SLUR_CHARS = "()"
BEAM_CHARS = "LJKk"
ARTICULATION_CHARS = "'`~^;"
STEM_CHARS = "/\\"
GRACE_CHARS = "qQ"

_LETTER_SEMITONE = {"c": 0, "d": 2, "e": 4, "f": 5, "g": 7, "a": 9, "b": 11}


class KernError(ValueError):
    """Base class for **kern parse and arithmetic errors"""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class NotUtf8(KernError):
    pass


class RecordWidthMismatch(KernError):
    def __init__(self, line: int, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{actual} fields but {expected} active spines", line)


class MixedRecordKind(KernError):
    pass


class UnknownExclusiveInterp(KernError):
    def __init__(self, line: int, name: str):
        self.name = name
        super().__init__(f"unknown exclusive interpretation {name!r}", line)


class LexError(KernError):
    def __init__(self, line: int | None, cell: str, reason: str):
        self.cell = cell
        self.reason = reason
        super().__init__(f"cannot lex {cell!r}: {reason}", line)


class NoDuration(KernError):
    pass


class MixedCasePitch(KernError):
    pass


class NotANote(KernError):
    pass


class RecordKind(Enum):
    EXCLUSIVE_INTERP = "exclusive"
    TANDEM_INTERP = "tandem"
    SPINE_MANIPULATOR = "manipulator"
    BARLINE = "barline"
    DATA = "data"
    COMMENT = "comment"


@dataclass(frozen=True)
class NoteToken:
    """
    One lexed **kern data token.

    Components are kept as written. `text` is the raw spelling, so a token
    that nobody touched serializes byte-identically.
    """

    text: str
    duration_digits: str = ""
    dots: int = 0
    grace: str = ""
    pitch_letters: str = ""
    rest: bool = False
    accidental: str = ""
    tie: str = ""
    slur: str = ""
    beams: str = ""
    articulations: str = ""
    stem: str = ""
    unknown_trailing: str = ""
    null: bool = False

    @property
    def is_note(self) -> bool:
        return bool(self.pitch_letters) and not self.rest

    @property
    def slur_open(self) -> str:
        return "(" * self.slur.count("(")

    @property
    def slur_close(self) -> str:
        return ")" * self.slur.count(")")


NULL_TOKEN = NoteToken(text=".", null=True)


@dataclass(frozen=True)
class Pitch:
    semitone: int
    spelling: str


@dataclass(frozen=True)
class Cell:
    """One field of a record: raw text and, for **kern data, its tokens"""

    text: str
    tokens: tuple[NoteToken, ...] = ()

    @property
    def is_null(self) -> bool:
        return len(self.tokens) == 1 and self.tokens[0].null

    @classmethod
    def from_tokens(cls, tokens: tuple[NoteToken, ...]) -> "Cell":
        return cls(" ".join(t.text for t in tokens), tokens)


@dataclass(frozen=True)
class Record:
    """
    One line of a document.

    `interps` and `voices` describe the columns this record spans: the
    exclusive interpretation each column descends from and its voice key
    ("1", "1.2" after a split). Both are empty for global comments.
    """

    kind: RecordKind
    cells: tuple[Cell, ...]
    line: int
    interps: tuple[str, ...] = ()
    voices: tuple[str, ...] = ()

    @property
    def texts(self) -> list[str]:
        return [c.text for c in self.cells]

    @property
    def is_global_comment(self) -> bool:
        return self.kind is RecordKind.COMMENT and self.cells[0].text.startswith("!!")


@dataclass(frozen=True)
class KernDocument:
    records: tuple[Record, ...]
    source_name: str = "<text>"
    trailing_newline: bool = True
    final_width: int = 0

    def rows(self) -> list[list[str]]:
        return [r.texts for r in self.records]

    @classmethod
    def from_rows(
        cls, rows: list[list[str]], source_name: str = "<text>", trailing_newline: bool = True
    ) -> "KernDocument":
        """Rebuild a document from cell text, re-validating it on the way"""
        text = "\n".join("\t".join(row) for row in rows)
        if rows and trailing_newline:
            text += "\n"
        return parse_document(text, source_name)

    def data_records(self) -> list[Record]:
        return [r for r in self.records if r.kind is RecordKind.DATA]


def decode_kern_bytes(data: bytes) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise NotUtf8(f"invalid UTF-8 at byte {e.start}") from e


def accidental_groups(accidental: str) -> list[str]:
    """Split an accidental spelling into runs of one repeated character"""
    groups: list[str] = []
    for ch in accidental:
        if groups and groups[-1][0] == ch:
            groups[-1] += ch
        else:
            groups.append(ch)
    return groups


def lex_token(text: str, line: int | None = None) -> NoteToken:
    """Decompose one **kern data token. Unrecognized characters are kept."""
    if text == ".":
        return NULL_TOKEN
    if not text:
        raise LexError(line, text, "empty token")

    parts: dict[str, str] = {
        "duration": "",
        "grace": "",
        "pitch": "",
        "accidental": "",
        "tie": "",
        "slur": "",
        "beams": "",
        "articulations": "",
        "stem": "",
        "unknown": "",
    }
    dots = 0
    rest = False
    # 0 = no digits yet, 1 = inside the duration run, 2 = run closed
    digit_state = 0
    letters_closed = False
    prev_letter = False

    for ch in text:
        is_letter = ch in PITCH_LETTERS
        if parts["pitch"] and prev_letter and not is_letter:
            letters_closed = True
        prev_letter = is_letter

        if ch.isascii() and ch.isdigit():
            if digit_state == 2:
                parts["unknown"] += ch
            else:
                digit_state = 1
                parts["duration"] += ch
            continue
        if digit_state == 1:
            digit_state = 2

        if ch == ".":
            dots += 1
        elif ch in GRACE_CHARS:
            parts["grace"] += ch
        elif ch == "r" and not rest:
            rest = True
        elif is_letter:
            pitch = parts["pitch"]
            if pitch and (letters_closed or ch.lower() != pitch[0].lower()):
                raise LexError(line, text, "pitch letters must form one run of a single letter")
            parts["pitch"] += ch
        elif ch in ACCIDENTAL_CHARS:
            parts["accidental"] += ch
        elif ch in TIE_CHARS:
            parts["tie"] += ch
        elif ch in SLUR_CHARS:
            parts["slur"] += ch
        elif ch in BEAM_CHARS:
            parts["beams"] += ch
        elif ch in ARTICULATION_CHARS:
            parts["articulations"] += ch
        elif ch in STEM_CHARS:
            parts["stem"] += ch
        else:
            parts["unknown"] += ch

    unknown = parts["unknown"]
    pitch = parts["pitch"]
    if rest and pitch:
        # Rest display positions ("8rGG") carry no pitch
        unknown += pitch
        pitch = ""
    if not rest and not pitch:
        raise LexError(line, text, "token has neither pitch nor rest")

    return NoteToken(
        text=text,
        duration_digits=parts["duration"],
        dots=dots,
        grace=parts["grace"],
        pitch_letters=pitch,
        rest=rest,
        accidental=parts["accidental"],
        tie=parts["tie"],
        slur=parts["slur"],
        beams=parts["beams"],
        articulations=parts["articulations"],
        stem=parts["stem"],
        unknown_trailing=unknown,
    )


def lex_cell(text: str, line: int | None = None) -> tuple[NoteToken, ...]:
    """Lex a **kern data cell: a null token or a space-separated chord"""
    if text == ".":
        return (NULL_TOKEN,)
    pieces = text.split(" ")
    if any(p == "" for p in pieces):
        raise LexError(line, text, "chord notes must be separated by single spaces")
    if len(pieces) > 1 and "." in pieces:
        raise LexError(line, text, "null token inside a chord")
    return tuple(lex_token(p, line) for p in pieces)


def _cell_kind(text: str, line: int) -> RecordKind:
    if not text:
        raise LexError(line, text, "empty field")
    if text.startswith("**"):
        return RecordKind.EXCLUSIVE_INTERP
    if text.startswith("*"):
        return RecordKind.TANDEM_INTERP
    if text.startswith("!"):
        return RecordKind.COMMENT
    if text.startswith("="):
        return RecordKind.BARLINE
    return RecordKind.DATA


def _merged_voice(keys: list[str]) -> str:
    parents = {k.rsplit(".", 1)[0] for k in keys if "." in k}
    if len(parents) == 1 and all("." in k for k in keys):
        return parents.pop()
    return keys[0]


def apply_manipulators(
    cells: list[str], interps: list[str], voices: list[str], line: int | None = None
) -> tuple[list[str], list[str]]:
    """Spine layout after an interpretation record"""
    new_interps: list[str] = []
    new_voices: list[str] = []
    i = 0
    while i < len(cells):
        cell = cells[i]
        if cell in UNSUPPORTED_MANIPULATORS:
            raise LexError(line, cell, "unsupported spine manipulator")
        if cell == SPLIT:
            new_interps += [interps[i], interps[i]]
            new_voices += [f"{voices[i]}.1", f"{voices[i]}.2"]
            i += 1
        elif cell == TERMINATE:
            i += 1
        elif cell == MERGE:
            j = i
            while j < len(cells) and cells[j] == MERGE:
                j += 1
            if j - i < 2:
                raise LexError(line, cell, "*v must merge at least two adjacent spines")
            if len(set(interps[i:j])) > 1:
                raise LexError(line, cell, "cannot merge spines of different interpretations")
            new_interps.append(interps[i])
            new_voices.append(_merged_voice(voices[i:j]))
            i = j
        else:
            new_interps.append(interps[i])
            new_voices.append(voices[i])
            i += 1
    return new_interps, new_voices


def carry_columns(cells: list[str], values: list, merge=None) -> list:
    """
    Carry one value per column through an already-validated interpretation
    record. Split columns copy their value, terminated ones drop it, and a
    merge keeps `merge(group)` (the leftmost value by default).
    """
    out = []
    i = 0
    while i < len(cells):
        cell = cells[i]
        if cell == SPLIT:
            out += [values[i], values[i]]
            i += 1
        elif cell == TERMINATE:
            i += 1
        elif cell == MERGE:
            j = i
            while j < len(cells) and cells[j] == MERGE:
                j += 1
            group = values[i:j]
            out.append(merge(group) if merge else group[0])
            i = j
        else:
            out.append(values[i])
            i += 1
    return out


def parse_document(text: str, source_name: str = "<text>") -> KernDocument:
    """
    Parse **kern text into a KernDocument.

    Records are split on LF and fields on TAB. Spine topology is tracked
    through the manipulators and every record's width is checked against it.
    A document whose spines are never terminated still parses; the corpus
    filter is the one that rejects it.
    """
    if text == "":
        return KernDocument((), source_name, trailing_newline=False)

    trailing_newline = text.endswith("\n")
    lines = text.split("\n")
    if trailing_newline:
        lines.pop()

    interps: list[str] = []
    voices: list[str] = []
    opened = False
    records: list[Record] = []

    for line_no, line in enumerate(lines, start=1):
        if line == "":
            raise LexError(line_no, line, "empty record")
        if line.startswith("!!"):
            records.append(Record(RecordKind.COMMENT, (Cell(line),), line_no))
            continue

        texts = line.split("\t")
        kinds = {_cell_kind(t, line_no) for t in texts}
        if len(kinds) > 1:
            names = ", ".join(sorted(k.value for k in kinds))
            raise MixedRecordKind(f"record mixes {names} fields", line_no)
        kind = kinds.pop()

        if kind is RecordKind.EXCLUSIVE_INTERP:
            if interps or opened:
                raise LexError(line_no, texts[0], "exclusive interpretation outside document start")
            for t in texts:
                if t[2:] not in KNOWN_EXCLUSIVE_INTERPS:
                    raise UnknownExclusiveInterp(line_no, t)
            interps = list(texts)
            voices = [str(i + 1) for i in range(len(texts))]
            opened = True
            records.append(
                Record(kind, tuple(Cell(t) for t in texts), line_no, tuple(interps), tuple(voices))
            )
            continue

        if len(texts) != len(interps):
            raise RecordWidthMismatch(line_no, len(interps), len(texts))

        before = (tuple(interps), tuple(voices))
        if kind is RecordKind.TANDEM_INTERP:
            if any(t in MANIPULATORS for t in texts):
                kind = RecordKind.SPINE_MANIPULATOR
            interps, voices = apply_manipulators(texts, interps, voices, line_no)
            cells = tuple(Cell(t) for t in texts)
        elif kind is RecordKind.DATA:
            cells = tuple(
                Cell(t, lex_cell(t, line_no)) if interps[i] == "**kern" else Cell(t)
                for i, t in enumerate(texts)
            )
        else:
            cells = tuple(Cell(t) for t in texts)
        records.append(Record(kind, cells, line_no, *before))

    logger.debug(f"Parsed {source_name}: {len(records)} records, final width {len(interps)}")
    return KernDocument(tuple(records), source_name, trailing_newline, final_width=len(interps))


def serialize_document(doc: KernDocument) -> str:
    text = "\n".join("\t".join(c.text for c in r.cells) for r in doc.records)
    if doc.records and doc.trailing_newline:
        text += "\n"
    return text


def token_duration(tok: NoteToken) -> Rational:
    """Written duration as a fraction of a whole note ("0" is a breve)"""
    digits = tok.duration_digits
    if not digits:
        raise NoDuration(f"token {tok.text!r} has no duration")
    value = int(digits)
    if value == 0:
        base = Fraction(2 ** len(digits))
    else:
        base = Fraction(1, value)
    return base * (2 - Fraction(1, 2**tok.dots))


def sounding_duration(tok: NoteToken) -> Rational:
    """Duration a token occupies in its voice; nulls and grace notes take none"""
    if tok.null or tok.grace:
        return Fraction(0)
    return token_duration(tok)


def pitch_of(tok: NoteToken) -> Pitch:
    """
    MIDI-style pitch of a note: "c" is middle C (60), each repeated lowercase
    letter adds an octave, "C" is the octave below and each repeated
    uppercase letter lowers it further.
    """
    if tok.null or tok.rest or not tok.pitch_letters:
        raise NotANote(f"token {tok.text!r} is not a note")
    letters = tok.pitch_letters
    if not (letters.islower() or letters.isupper()):
        raise MixedCasePitch(f"token {tok.text!r} mixes octave cases")
    base = _LETTER_SEMITONE[letters[0].lower()]
    if letters.islower():
        semitone = 60 + base + 12 * (len(letters) - 1)
    else:
        semitone = 48 + base - 12 * (len(letters) - 1)
    semitone += tok.accidental.count("#") - tok.accidental.count("-")
    return Pitch(semitone, letters + tok.accidental)
