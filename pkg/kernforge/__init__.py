"""
kernforge - deterministic **kern data engine

Parsing, corpus filtering, normal-form canonicalization, split-space BPE,
constrained decoding masks and OMR metrics for image-to-kern training targets.
"""

__version__ = "1.0.0"

from .kern import KernDocument, parse_document, serialize_document
from .filters import filter_file, structural_check
from .normalizer import normalize_document
from .bpe import BpeVocab, train
from .constraints import ConstraintEngine, DecodeState, init_state
from .metrics import cer, omr_ned

__all__ = [
    "KernDocument",
    "parse_document",
    "serialize_document",
    "filter_file",
    "structural_check",
    "normalize_document",
    "BpeVocab",
    "train",
    "ConstraintEngine",
    "DecodeState",
    "init_state",
    "cer",
    "omr_ned",
]
