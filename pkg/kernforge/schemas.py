"""
Report and request models for kernforge

Every JSONL line the CLI prints and every HTTP body the server exchanges is
one of these models.
"""

from fractions import Fraction

from pydantic import BaseModel

from .filters import FilterReport
from .metrics import MetricReport
from .normalizer import NormalizationTrace


def rational(value: Fraction) -> str:
    return f"{value.numerator}/{value.denominator}"


def percent(value: Fraction) -> float:
    return round(float(value) * 100, 2)


class ReasonLine(BaseModel):
    rule: str
    line: int | None = None
    message: str


class FilterLine(BaseModel):
    path: str | None = None
    verdict: str
    reasons: list[ReasonLine] = []

    @classmethod
    def from_report(cls, report: FilterReport) -> "FilterLine":
        return cls(
            path=report.path,
            verdict=report.verdict,
            reasons=[
                ReasonLine(rule=r.rule, line=r.line, message=r.message) for r in report.reasons
            ],
        )


class NormalizeLine(BaseModel):
    path: str | None = None
    status: str = "ok"
    edits: int = 0
    passes: dict[str, int] = {}
    error: str | None = None

    @classmethod
    def from_trace(cls, path: str | None, trace: NormalizationTrace) -> "NormalizeLine":
        return cls(path=path, edits=trace.total, passes=dict(trace.counts))


class TrainLine(BaseModel):
    vocab: str
    files: int
    tokens: int
    merges: int


class EncodeLine(BaseModel):
    path: str | None = None
    ids: list[int]


class DecodeLine(BaseModel):
    path: str | None = None
    text: str


class MaskLine(BaseModel):
    prefix_bytes: int
    allowed: list[int]
    eos_allowed: bool
    terminated: bool = False


class SimulateLine(BaseModel):
    seed: int
    mode: str
    rule: str | None = None
    constrained: bool
    tokens: int
    terminated_by: str
    valid: bool


class ScoreLine(BaseModel):
    pair: str
    cer: float | None = None
    omr_ned: float
    omr_ned_exact: str
    matched: int
    inserted: int
    deleted: int
    prediction_parsed: bool = True

    @classmethod
    def from_report(cls, pair: str, report: MetricReport) -> "ScoreLine":
        return cls(
            pair=pair,
            cer=percent(report.cer) if report.cer is not None else None,
            omr_ned=report.percent,
            omr_ned_exact=rational(report.omr_ned),
            matched=report.matched,
            inserted=report.inserted,
            deleted=report.deleted,
            prediction_parsed=report.prediction_parsed,
        )


class AggregateLine(BaseModel):
    pairs: int
    mean_cer: float | None = None
    mean_omr_ned: float


class TextRequest(BaseModel):
    text: str


class NormalizeResponse(BaseModel):
    text: str
    edits: int
    passes: dict[str, int]


class MaskRequest(BaseModel):
    prefix: str = ""


class ScoreRequest(BaseModel):
    reference: str
    prediction: str
