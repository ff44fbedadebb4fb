"""Radiology report de-identification: detection, hide-in-plain-sight surrogates and evaluation."""

from radeid.corpus import (
    PHI_CATEGORIES,
    AnnotatedReport,
    Corpus,
    CorpusError,
    PhiCategory,
    PhiSpan,
    Provenance,
    count_tokens_by_class,
    load_corpus,
    save_corpus,
    validate_report,
)

__version__ = "0.1.0"

__all__ = [
    "PHI_CATEGORIES",
    "AnnotatedReport",
    "Corpus",
    "CorpusError",
    "PhiCategory",
    "PhiSpan",
    "Provenance",
    "count_tokens_by_class",
    "load_corpus",
    "save_corpus",
    "validate_report",
]
