"""
Corpus filtering for kernforge

Decides whether a **kern file is fit to become a training target. Rules run
in a fixed order and every failure becomes a report entry; nothing here
raises for a bad file.
"""

import logging
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

from .kern import (
    KernDocument,
    KernError,
    NoDuration,
    Rational,
    RecordKind,
    carry_columns,
    decode_kern_bytes,
    parse_document,
    sounding_duration,
    token_duration,
)
from .normalizer import CELL_PATTERNS, spelling_problem

logger = logging.getLogger(__name__)

TIME_SIGNATURE = re.compile(r"^\*M(\d+)/(\d+)$")
MAX_RESIDUE = 2
MAX_ACCIDENTAL_RUN = 2

RULE_UTF8 = "utf8"
RULE_PARSE = "parse"
RULE_ARTIFACT = "conversion-artifact"
RULE_TERMINATOR = "missing-terminator"
RULE_CLEF = "missing-clef"
RULE_ACCIDENTAL = "accidental-run"
RULE_OCTAVE = "octave-spelling"
RULE_MEASURE = "measure-math"
RULE_NO_METER = "no-time-signature"


class NoTimeSignature(KernError):
    pass


@dataclass(frozen=True)
class FilterReason:
    rule: str
    line: int | None
    message: str


@dataclass
class FilterReport:
    """Verdict for one file: rejected exactly when there are reasons"""

    reasons: list[FilterReason] = field(default_factory=list)
    path: str | None = None

    @property
    def verdict(self) -> str:
        return "reject" if self.reasons else "accept"

    @property
    def accepted(self) -> bool:
        return not self.reasons

    def add(self, rule: str, line: int | None, message: str) -> None:
        self.reasons.append(FilterReason(rule, line, message))


class MeasureMismatch(NamedTuple):
    measure: int
    voice: str
    expected: Rational
    actual: Rational
    # barline closing the measure, or the last data record of an unclosed one
    line: int | None = None


def parse_meter(text: str) -> Rational | None:
    match = TIME_SIGNATURE.match(text)
    if not match or int(match.group(2)) == 0:
        return None
    return Fraction(int(match.group(1)), int(match.group(2)))


def check_measures(doc: KernDocument) -> list[MeasureMismatch]:
    """
    Compare every voice's measure sums with the active time signature.

    Voices created by a split carry the sum accumulated so far and are summed
    independently afterwards. The first and last measures holding data may
    fall short of the signature (pickups and their completions).
    """
    meter: list[Rational | None] = []
    expected: list[Rational | None] = []
    sums: list[Rational] = []
    closed: list[MeasureMismatch] = []
    data_measures: set[int] = set()
    measure = 0
    in_measure = False
    last_voices: tuple[str, ...] = ()
    last_interps: tuple[str, ...] = ()
    last_line: int | None = None

    def close_measure(
        voices: tuple[str, ...], interps: tuple[str, ...], line: int | None
    ) -> None:
        for i, voice in enumerate(voices):
            if interps[i] == "**kern" and expected[i] is not None:
                closed.append(MeasureMismatch(measure, voice, expected[i], sums[i], line))

    for record in doc.records:
        kind = record.kind
        if kind is RecordKind.EXCLUSIVE_INTERP:
            width = len(record.cells)
            meter, expected, sums = [None] * width, [None] * width, [Fraction(0)] * width
        elif kind in (RecordKind.TANDEM_INTERP, RecordKind.SPINE_MANIPULATOR):
            for i, text in enumerate(record.texts):
                value = parse_meter(text)
                if value is not None and record.interps[i] == "**kern":
                    meter[i] = value
            texts = record.texts
            meter = carry_columns(texts, meter)
            expected = carry_columns(texts, expected)
            sums = carry_columns(texts, sums)
        elif kind is RecordKind.BARLINE:
            if in_measure:
                close_measure(record.voices, record.interps, record.line)
            measure += 1
            in_measure = False
            expected = [None] * len(expected)
            sums = [Fraction(0)] * len(sums)
        elif kind is RecordKind.DATA:
            for i, cell in enumerate(record.cells):
                if record.interps[i] != "**kern":
                    continue
                if expected[i] is None:
                    if meter[i] is None:
                        raise NoTimeSignature(
                            f"data in spine {record.voices[i]} with no *M in effect", record.line
                        )
                    expected[i] = meter[i]
                try:
                    sums[i] += sounding_duration(cell.tokens[0])
                except NoDuration:
                    raise NoDuration(f"token {cell.text!r} has no duration", record.line)
            in_measure = True
            data_measures.add(measure)
            last_voices = record.voices
            last_interps = record.interps
            last_line = record.line

    if in_measure:
        close_measure(last_voices, last_interps, last_line)

    if not data_measures:
        return []
    first, last = min(data_measures), max(data_measures)
    return [
        m
        for m in closed
        if m.actual != m.expected and not (m.measure in (first, last) and m.actual < m.expected)
    ]


def _accidental_problem(acc: str) -> bool:
    return any(acc.count(ch) > MAX_ACCIDENTAL_RUN for ch in "#-n") or ("#" in acc and "-" in acc)


def _octave_problem(letters: str) -> bool:
    return not (letters.islower() or letters.isupper())


def _artifact_reasons(doc: KernDocument, report: FilterReport) -> None:
    """
    Residue, longas and anything else normalization cannot spell. Accidental
    and octave spellings are left to their own rules.
    """
    for record in doc.records:
        kind = record.kind
        if kind in (RecordKind.TANDEM_INTERP, RecordKind.SPINE_MANIPULATOR, RecordKind.BARLINE):
            pattern = CELL_PATTERNS[
                RecordKind.BARLINE if kind is RecordKind.BARLINE else RecordKind.TANDEM_INTERP
            ]
            for i, text in enumerate(record.texts):
                if record.interps[i] == "**kern" and not pattern.fullmatch(text):
                    report.add(RULE_ARTIFACT, record.line, f"{text!r} has no normal-form spelling")
            continue
        if kind is not RecordKind.DATA:
            continue
        for cell in record.cells:
            for tok in cell.tokens:
                if len(tok.unknown_trailing) > MAX_RESIDUE:
                    report.add(
                        RULE_ARTIFACT,
                        record.line,
                        f"token {tok.text!r} carries unrecognized residue {tok.unknown_trailing!r}",
                    )
                    continue
                digits = tok.duration_digits
                if len(digits) > 1 and set(digits) == {"0"}:
                    report.add(RULE_ARTIFACT, record.line, f"unsupported longa in {tok.text!r}")
                    continue
                if tok.is_note and (
                    _accidental_problem(tok.accidental) or _octave_problem(tok.pitch_letters)
                ):
                    continue
                problem = spelling_problem(tok)
                if problem:
                    report.add(RULE_ARTIFACT, record.line, problem)



def _structural_reasons(data: bytes, report: FilterReport) -> KernDocument | None:
    """Encoding, parse, artifact and terminator rules; returns the document if it parsed"""
    try:
        text = decode_kern_bytes(data)
    except KernError as e:
        report.add(RULE_UTF8, None, str(e))
        return None
    if "\r" in text:
        line = text[: text.index("\r")].count("\n") + 1
        report.add(RULE_UTF8, line, "carriage return in record terminator")
        return None

    try:
        doc = parse_document(text, report.path or "<bytes>")
    except KernError as e:
        report.add(RULE_PARSE, e.line, str(e))
        return None

    opening = [r for r in doc.records if r.kind is RecordKind.EXCLUSIVE_INTERP]
    if not opening or "**kern" not in opening[0].texts:
        report.add(RULE_PARSE, None, "no **kern spine")
        return None

    _artifact_reasons(doc, report)

    if doc.final_width != 0:
        report.add(
            RULE_TERMINATOR,
            doc.records[-1].line,
            f"{doc.final_width} spine(s) never reach a *- terminator",
        )
    return doc


def _clef_reasons(doc: KernDocument, report: FilterReport) -> None:
    clef: list[bool] = []
    for record in doc.records:
        if record.kind is RecordKind.EXCLUSIVE_INTERP:
            clef = [False] * len(record.cells)
        elif record.kind in (RecordKind.TANDEM_INTERP, RecordKind.SPINE_MANIPULATOR):
            for i, text in enumerate(record.texts):
                if text.startswith("*clef"):
                    clef[i] = True
            clef = carry_columns(record.texts, clef, merge=all)
        elif record.kind is RecordKind.DATA:
            for i, seen in enumerate(clef):
                if not seen and record.interps[i] == "**kern":
                    report.add(
                        RULE_CLEF,
                        record.line,
                        f"spine {record.voices[i]} has data before any *clef",
                    )
                    clef[i] = True


def _token_reasons(doc: KernDocument, report: FilterReport) -> None:
    accidental: list[FilterReason] = []
    octave: list[FilterReason] = []
    for record in doc.data_records():
        for cell in record.cells:
            for tok in cell.tokens:
                if not tok.is_note:
                    continue
                acc = tok.accidental
                if _accidental_problem(acc):
                    accidental.append(
                        FilterReason(RULE_ACCIDENTAL, record.line, f"impossible accidental {acc!r}")
                    )
                if _octave_problem(tok.pitch_letters):
                    octave.append(
                        FilterReason(RULE_OCTAVE, record.line, f"corrupted octave {tok.text!r}")
                    )
    report.reasons += accidental + octave


def _measure_reasons(doc: KernDocument, report: FilterReport) -> None:
    for record in doc.data_records():
        for cell in record.cells:
            notes = [t for t in cell.tokens if not t.null and not t.grace]
            if len(notes) < 2:
                continue
            try:
                durations = {token_duration(t) for t in notes}
            except NoDuration:
                continue
            if len(durations) > 1:
                report.add(RULE_MEASURE, record.line, f"chord {cell.text!r} mixes durations")

    try:
        mismatches = check_measures(doc)
    except NoTimeSignature as e:
        report.add(RULE_NO_METER, e.line, str(e))
        return
    except NoDuration as e:
        report.add(RULE_MEASURE, e.line, str(e))
        return
    for m in mismatches:
        report.add(
            RULE_MEASURE,
            m.line,
            f"measure {m.measure} voice {m.voice}: expected {m.expected}, got {m.actual}",
        )


def filter_file(data: bytes, path: str | None = None) -> FilterReport:
    """
    Run the full rule chain over one file's bytes: encoding, parseability and
    conversion artifacts, terminators, clefs, accidental runs, octave
    spellings, then measure mathematics.
    """
    report = FilterReport(path=path)
    doc = _structural_reasons(data, report)
    if doc is not None:
        _clef_reasons(doc, report)
        _token_reasons(doc, report)
        _measure_reasons(doc, report)
    if report.reasons:
        logger.debug(f"Rejected {path}: {report.reasons[0].rule}")
    return report


def filter_text(text: str, path: str | None = None) -> FilterReport:
    return filter_file(text.encode("utf-8"), path)


def structural_check(data: bytes, path: str | None = None) -> FilterReport:
    """Only the structural rules: encoding, parseability, artifacts, terminators"""
    report = FilterReport(path=path)
    _structural_reasons(data, report)
    return report
