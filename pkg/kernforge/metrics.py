"""
OMR evaluation metrics for kernforge

CER compares raw text. OMR-NED compares the musical symbols of two
documents: a predicted symbol only counts when an identical symbol sits at the
same offset of the same (ordinal) measure in the reference. Anything left
over is an insertion or a deletion; there is no partial credit.
"""

import logging
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

import numpy as np

from .filters import TIME_SIGNATURE
from .kern import (
    KernDocument,
    KernError,
    NoteToken,
    Rational,
    RecordKind,
    carry_columns,
    parse_document,
    sounding_duration,
)

logger = logging.getLogger(__name__)


class EmptyReference(ValueError):
    pass


class EventKind(Enum):
    NOTE = "note"
    REST = "rest"
    BARLINE = "barline"
    CLEF = "clef"
    TIMESIG = "timesig"
    KEYSIG = "keysig"


@dataclass(frozen=True)
class SymbolEvent:
    measure_index: int
    offset: Rational
    kind: EventKind
    attrs: str


@dataclass(frozen=True)
class MetricReport:
    omr_ned: Rational
    matched: int
    inserted: int
    deleted: int
    cer: Rational | None = None
    prediction_parsed: bool = True

    @property
    def percent(self) -> float:
        return round(float(self.omr_ned) * 100, 2)


def levenshtein(a: str, b: str) -> int:
    """Character edit distance, one numpy row at a time"""
    if not a:
        return len(b)
    if not b:
        return len(a)
    target = np.frombuffer(b.encode("utf-32-le"), dtype=np.uint32)
    steps = np.arange(len(b) + 1)
    row = steps.copy()
    for i, ch in enumerate(a, start=1):
        cost = (target != ord(ch)).astype(np.int64)
        nxt = np.empty_like(row)
        nxt[0] = i
        nxt[1:] = np.minimum(row[1:] + 1, row[:-1] + cost)
        # insertions: nxt[j] = min over k <= j of nxt[k] + (j - k)
        row = np.minimum.accumulate(nxt - steps) + steps
    return int(row[-1])


def cer(reference: str, prediction: str) -> Rational:
    if not reference:
        if prediction:
            raise EmptyReference("character error rate is undefined for an empty reference")
        return Fraction(0)
    return Fraction(levenshtein(reference, prediction), len(reference))


def _note_attrs(tok: NoteToken) -> str:
    timing = tok.duration_digits + "." * tok.dots + "".join(sorted(tok.grace))
    if tok.rest:
        return f"r|{timing}"
    return f"{tok.pitch_letters}{tok.accidental}|{timing}|{''.join(sorted(tok.tie))}"


def _metadata_kind(text: str) -> EventKind | None:
    if text.startswith("*clef"):
        return EventKind.CLEF
    if TIME_SIGNATURE.match(text):
        return EventKind.TIMESIG
    if text.startswith("*k["):
        return EventKind.KEYSIG
    return None


def extract_events(doc: KernDocument) -> list[SymbolEvent]:
    """
    Musical symbols of the **kern spines with their measure and offset.

    Each voice keeps its own offset, so split voices advance independently.
    Chords yield one event per note at a shared offset. Clefs, meters and key
    signatures belong to offset 0 of the measure that follows them.
    """
    events: list[SymbolEvent] = []
    offsets: list[Rational] = []
    measure = 0

    for record in doc.records:
        kind = record.kind
        if kind is RecordKind.EXCLUSIVE_INTERP:
            offsets = [Fraction(0)] * len(record.cells)
        elif kind in (RecordKind.TANDEM_INTERP, RecordKind.SPINE_MANIPULATOR):
            for i, text in enumerate(record.texts):
                event_kind = _metadata_kind(text)
                if event_kind is None or record.interps[i] != "**kern":
                    continue
                target = measure if offsets[i] == 0 else measure + 1
                events.append(SymbolEvent(target, Fraction(0), event_kind, text[1:]))
            offsets = carry_columns(record.texts, offsets)
        elif kind is RecordKind.BARLINE:
            measure += 1
            style = "".join(ch for ch in record.cells[0].text if not ch.isdigit())
            events.append(SymbolEvent(measure, Fraction(0), EventKind.BARLINE, style))
            offsets = [Fraction(0)] * len(offsets)
        elif kind is RecordKind.DATA:
            for i, cell in enumerate(record.cells):
                if record.interps[i] != "**kern" or cell.is_null:
                    continue
                for tok in cell.tokens:
                    event_kind = EventKind.REST if tok.rest else EventKind.NOTE
                    events.append(SymbolEvent(measure, offsets[i], event_kind, _note_attrs(tok)))
                offsets[i] += sounding_duration(cell.tokens[0])
    return events


def compare_events(reference: list[SymbolEvent], prediction: list[SymbolEvent]) -> MetricReport:
    ref, pred = Counter(reference), Counter(prediction)
    matched = sum((ref & pred).values())
    deleted = len(reference) - matched
    inserted = len(prediction) - matched
    total = len(reference) + len(prediction)
    ned = Fraction(inserted + deleted, total) if total else Fraction(0)
    return MetricReport(ned, matched, inserted, deleted)


def omr_ned(reference: KernDocument, prediction: KernDocument) -> MetricReport:
    return compare_events(extract_events(reference), extract_events(prediction))


def score_texts(reference: str, prediction: str, source_name: str = "<pair>") -> MetricReport:
    """
    Score a prediction against its reference. The reference must parse; a
    prediction that does not is scored as if it held no symbols.
    """
    ref_events = extract_events(parse_document(reference, source_name))
    parsed = True
    try:
        pred_events = extract_events(parse_document(prediction, source_name))
    except KernError as e:
        logger.warning(f"{source_name}: prediction is not scorable ({e}), counting it as empty")
        pred_events = []
        parsed = False
    report = compare_events(ref_events, pred_events)
    return MetricReport(
        report.omr_ned,
        report.matched,
        report.inserted,
        report.deleted,
        cer=cer(reference, prediction),
        prediction_parsed=parsed,
    )
