"""
Corpus ingestion, tokenization and calibration sampling.
"""

from .corpus import (
    CalibrationSet,
    Corpus,
    fingerprint,
    load_corpus,
    random_windows,
    sample_calibration,
)
from .tokenizer import Tokenizer

__all__ = [
    "CalibrationSet",
    "Corpus",
    "Tokenizer",
    "fingerprint",
    "load_corpus",
    "random_windows",
    "sample_calibration",
]
