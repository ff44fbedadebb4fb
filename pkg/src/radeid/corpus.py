"""Annotated-report data model and its JSONL on-disk format.

A corpus file holds one report per line::

    {"id": "r1", "text": "...", "spans": [{"start": 0, "end": 4,
     "category": "DATE", "provenance": "GOLD"}], "metadata": {}}

Offsets count Unicode code points (Python ``str`` indices), end-exclusive.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping


class PhiCategory(str, Enum):
    """The eight PHI classes plus ``O``, the non-PHI token label."""

    AGE = "AGE"
    DATE = "DATE"
    HCW = "HCW"
    HOSPITAL = "HOSPITAL"
    ID = "ID"
    PATIENT = "PATIENT"
    PHONE = "PHONE"
    VENDOR = "VENDOR"
    O = "O"

    @classmethod
    def _missing_(cls, value):
        # some annotation exports call the ID class "UNIQUE"
        if value == "UNIQUE":
            return cls.ID
        return None

    @property
    def is_phi(self) -> bool:
        return self is not PhiCategory.O

    def __str__(self) -> str:
        return self.value


PHI_CATEGORIES: tuple[PhiCategory, ...] = tuple(c for c in PhiCategory if c.is_phi)


class Provenance(str, Enum):
    GOLD = "GOLD"
    PREDICTED = "PREDICTED"
    SYNTHETIC = "SYNTHETIC"
    VENDOR = "VENDOR"

    def __str__(self) -> str:
        return self.value


class CorpusError(ValueError):
    """Raised for unreadable or structurally invalid corpus files."""

    def __init__(self, message: str, *, line: int | None = None, report_id: str | None = None):
        self.line = line
        self.report_id = report_id
        prefix = []
        if line is not None:
            prefix.append(f"line {line}")
        if report_id is not None:
            prefix.append(f"report {report_id!r}")
        super().__init__(f"{', '.join(prefix)}: {message}" if prefix else message)


@dataclass(frozen=True, order=True)
class PhiSpan:
    start: int
    end: int
    category: PhiCategory
    provenance: Provenance = Provenance.GOLD

    def __post_init__(self):
        # Accept plain strings from JSON and coerce to the enums.
        if not isinstance(self.category, PhiCategory):
            object.__setattr__(self, "category", PhiCategory(self.category))
        if not isinstance(self.provenance, Provenance):
            object.__setattr__(self, "provenance", Provenance(self.provenance))

    def __len__(self) -> int:
        return self.end - self.start

    def overlaps(self, other: PhiSpan) -> bool:
        return self.start < other.end and other.start < self.end

    def shifted(self, delta: int) -> PhiSpan:
        return replace(self, start=self.start + delta, end=self.end + delta)

    def to_dict(self) -> dict[str, Any]:
        return {
            "start": self.start,
            "end": self.end,
            "category": self.category.value,
            "provenance": self.provenance.value,
        }


def _span_sort_key(span: PhiSpan):
    return (span.start, span.end, span.provenance.value, span.category.value)


@dataclass(frozen=True)
class AnnotatedReport:
    """A report's text with standoff PHI spans.

    Spans are kept sorted by start offset regardless of the order passed in.
    Construction does not validate; call :func:`validate_report` for that.
    """

    id: str
    text: str
    spans: tuple[PhiSpan, ...] = ()
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "spans", tuple(sorted(self.spans, key=_span_sort_key)))
        object.__setattr__(self, "metadata", dict(self.metadata))

    def spans_of(self, provenance: Provenance | str) -> list[PhiSpan]:
        provenance = Provenance(provenance)
        return [s for s in self.spans if s.provenance is provenance]

    def with_spans(self, spans: Iterable[PhiSpan], *, replacing: Provenance | str | None = None) -> AnnotatedReport:
        """Return a copy with ``spans`` added, optionally dropping one provenance first."""
        keep = self.spans
        if replacing is not None:
            replacing = Provenance(replacing)
            keep = tuple(s for s in keep if s.provenance is not replacing)
        return replace(self, spans=keep + tuple(spans))

    def span_text(self, span: PhiSpan) -> str:
        return self.text[span.start : span.end]

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "text": self.text,
            "spans": [s.to_dict() for s in self.spans],
            "metadata": dict(self.metadata),
        }


@dataclass(frozen=True)
class Corpus:
    reports: tuple[AnnotatedReport, ...] = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "reports", tuple(self.reports))

    def __len__(self) -> int:
        return len(self.reports)

    def __iter__(self):
        return iter(self.reports)

    def by_id(self) -> dict[str, AnnotatedReport]:
        return {r.id: r for r in self.reports}


def validate_report(report: AnnotatedReport) -> list[str]:
    """Check a report against the data-model invariants.

    Returns one human-readable description per violation; an empty list means
    the report is valid. Never raises.
    """
    problems: list[str] = []
    if not isinstance(report.id, str) or not report.id:
        problems.append("id: must be a non-empty string")
    if not isinstance(report.text, str):
        problems.append("text: must be a string")
        return problems
    n = len(report.text)
    last_by_prov: dict[Provenance, tuple[int, PhiSpan]] = {}
    for i, span in enumerate(report.spans):
        where = f"spans[{i}]"
        if not isinstance(span.start, int) or not isinstance(span.end, int):
            problems.append(f"{where}: offsets must be integers")
            continue
        if span.category is PhiCategory.O:
            problems.append(f"{where}.category: O is not a PHI category")
        if span.start < 0:
            problems.append(f"{where}: 0 <= start violated (start={span.start})")
        if span.start >= span.end:
            problems.append(f"{where}: start < end violated (start={span.start}, end={span.end})")
        if span.end > n:
            problems.append(f"{where}: end <= len(text) violated (end={span.end}, len={n}) out of bounds")
        prev = last_by_prov.get(span.provenance)
        if prev is not None and prev[1].end > span.start:
            problems.append(
                f"{where}: overlaps spans[{prev[0]}] with the same provenance {span.provenance.value}"
            )
        if prev is None or span.end > prev[1].end:
            last_by_prov[span.provenance] = (i, span)
    return problems


def report_from_dict(obj: Any) -> AnnotatedReport:
    """Build a report from its decoded JSON object; raises ``CorpusError`` on shape errors."""
    if not isinstance(obj, dict):
        raise CorpusError("expected a JSON object")
    rid = obj.get("id")
    if not isinstance(rid, str):
        raise CorpusError("missing or non-string 'id'")
    text = obj.get("text")
    if not isinstance(text, str):
        raise CorpusError("missing or non-string 'text'", report_id=rid)
    raw_spans = obj.get("spans", [])
    if not isinstance(raw_spans, list):
        raise CorpusError("'spans' must be a list", report_id=rid)
    spans = []
    for i, s in enumerate(raw_spans):
        try:
            start, end = s["start"], s["end"]
            if type(start) is not int or type(end) is not int:
                raise TypeError("offsets must be integers")
            spans.append(PhiSpan(start, end, PhiCategory(s["category"]), Provenance(s.get("provenance", "GOLD"))))
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"spans[{i}]: {exc}", report_id=rid) from None
    metadata = obj.get("metadata", {})
    if not isinstance(metadata, dict):
        raise CorpusError("'metadata' must be an object", report_id=rid)
    return AnnotatedReport(rid, text, tuple(spans), metadata)


def load_corpus(path: str | Path, name: str | None = None) -> Corpus:
    """Read and validate a JSONL corpus.

    Raises:
        OSError: the file cannot be read.
        CorpusError: a line is not valid JSON, a report is malformed, a
            report id repeats, or a span breaks an invariant.
    """
    path = Path(path)
    reports = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"malformed JSON: {exc.msg}", line=lineno) from None
            try:
                report = report_from_dict(obj)
            except CorpusError as exc:
                raise CorpusError(str(exc), line=lineno) from None
            problems = validate_report(report)
            if problems:
                raise CorpusError("; ".join(problems), line=lineno, report_id=report.id)
            if report.id in seen:
                raise CorpusError("duplicate report id", line=lineno, report_id=report.id)
            seen.add(report.id)
            reports.append(report)
    return Corpus(tuple(reports), name if name is not None else path.stem)


def dumps_report(report: AnnotatedReport) -> str:
    return json.dumps(report.to_dict(), ensure_ascii=False, sort_keys=True)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write ``corpus`` as JSONL with sorted keys and sorted spans (byte-stable)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for report in corpus.reports:
            fh.write(dumps_report(report))
            fh.write("\n")


def count_tokens_by_class(corpus: Corpus, provenance: Provenance | str = Provenance.GOLD) -> dict[PhiCategory, int]:
    """Token counts per PHI class (and ``O``) under one provenance's spans.

    A token counts toward category ``c`` when any part of it falls inside a
    ``c`` span, otherwise toward ``O``.
    """
    from radeid.segmentation import spans_to_token_labels, tokenize

    counts: Counter[PhiCategory] = Counter({c: 0 for c in PhiCategory})
    for report in corpus.reports:
        tokens = tokenize(report.text)
        counts.update(spans_to_token_labels(report.spans_of(provenance), tokens))
    return dict(counts)
