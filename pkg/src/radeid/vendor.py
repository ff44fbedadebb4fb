"""Harmonize cloud-vendor PHI detections into the eight-category label space.

Vendor responses are parsed from recorded JSON (one file per report) so all
scoring runs offline. Offsets are normalized to code points:

* GCP Sensitive Data Protection (``content:inspect``): ``codepointRange`` when
  present, else ``byteRange`` (UTF-8 bytes).
* AWS Comprehend Medical (``DetectPHI``): ``BeginOffset``/``EndOffset`` are
  code points already.
* Azure Health De-identification (tag operation): ``offset``/``length`` are
  ``{"utf8", "utf16", "codePoint"}`` objects; plain integers are read as
  UTF-16 code units.

A fixture directory holds ``manifest.json`` (``{"vendor": "gcp", "corpus":
"deid.jsonl"}``) and one ``{report_id}.json`` response per report.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from radeid.corpus import PHI_CATEGORIES, Corpus, PhiCategory, PhiSpan, Provenance
from radeid.detection import CATEGORY_PRIORITY
from radeid.evaluation import Counts, EvalReport, EvaluationError, evaluate_tokens, merge_counts, summarize
from radeid.segmentation import spans_to_token_labels, tokenize

logger = logging.getLogger(__name__)

C = PhiCategory


class VendorResponseError(ValueError):
    pass


@dataclass(frozen=True)
class VendorMapping:
    """Vendor label -> set of PHI categories; an empty set marks a known but unmapped label."""

    vendor: str
    labels: Mapping[str, frozenset[PhiCategory]]
    version: str = "1"

    def __post_init__(self):
        object.__setattr__(self, "labels", {k: frozenset(v) for k, v in self.labels.items()})
        for label, cats in self.labels.items():
            if any(not c.is_phi for c in cats):
                raise ValueError(f"{self.vendor}: label {label!r} maps to O")

    @property
    def image(self) -> frozenset[PhiCategory]:
        return frozenset().union(*self.labels.values()) if self.labels else frozenset()

    @property
    def unmapped_categories(self) -> frozenset[PhiCategory]:
        return frozenset(PHI_CATEGORIES) - self.image

    def sources_for(self, category: PhiCategory) -> list[str]:
        return [label for label, cats in self.labels.items() if category in cats]


def builtin_mappings() -> list[VendorMapping]:
    return [
        VendorMapping(
            "gcp",
            {
                "DATE": {C.DATE},
                "GENERIC_ID": {C.ID},
                "PHONE_NUMBER": {C.PHONE},
                "PERSON_NAME": {C.PATIENT, C.HCW},
                "LOCATION": {C.HOSPITAL},
                "ORGANIZATION_NAME": {C.VENDOR},
            },
        ),
        VendorMapping(
            "aws",
            {
                "DATE": {C.DATE},
                "ID": {C.ID},
                "PHONE_OR_FAX": {C.PHONE},
                "NAME": {C.PATIENT, C.HCW},
                "ADDRESS": {C.HOSPITAL},
            },
        ),
        VendorMapping(
            "azure",
            {
                "Date": {C.DATE},
                "MedicalRecord": {C.ID},
                "IDNum": {C.ID},
                "Phone": {C.PHONE},
                "Patient": {C.PATIENT},
                "Doctor": {C.HCW},
                "Hospital": {C.HOSPITAL},
                "Organization": {C.VENDOR},
            },
        ),
    ]


def get_mapping(vendor: str) -> VendorMapping:
    for m in builtin_mappings():
        if m.vendor == vendor.lower():
            return m
    raise KeyError(f"no built-in mapping for vendor {vendor!r}")


def identity_mapping() -> VendorMapping:
    """Each category maps to itself; lets any span source be scored through the vendor path."""
    return VendorMapping("identity", {c.value: {c} for c in PHI_CATEGORIES})


@dataclass(frozen=True)
class VendorSpan:
    start: int
    end: int
    label: str
    confidence: float | None = None

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid vendor span range [{self.start}, {self.end})")


@dataclass
class HarmonizeResult:
    spans: list[PhiSpan]
    dropped: Counter = field(default_factory=Counter)
    expanded: int = 0


def _union_ranges(ranges: list[tuple[int, int]]) -> list[tuple[int, int]]:
    out: list[tuple[int, int]] = []
    for s, e in sorted(ranges):
        if out and s < out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], e))
        else:
            out.append((s, e))
    return out


def harmonize(spans: Iterable[VendorSpan], mapping: VendorMapping) -> HarmonizeResult:
    """Map vendor spans into PHI categories (provenance VENDOR).

    Each span yields one PhiSpan per mapped category; labels the mapping does
    not know, or maps to nothing, are dropped and counted. Overlapping results
    of one category are merged into their union. Different categories may
    still overlap (a dual-mapped label yields two spans over one range).
    """
    by_cat: dict[PhiCategory, list[tuple[int, int]]] = {}
    result = HarmonizeResult([])
    for span in spans:
        cats = mapping.labels.get(span.label)
        if not cats:
            result.dropped[span.label] += 1
            continue
        result.expanded += len(cats)
        for c in cats:
            by_cat.setdefault(c, []).append((span.start, span.end))
    for c, ranges in by_cat.items():
        result.spans.extend(PhiSpan(s, e, c, Provenance.VENDOR) for s, e in _union_ranges(ranges))
    result.spans.sort(key=lambda s: (s.start, s.end, s.category.value))
    return result


# --- offset conversion --------------------------------------------------------


class _OffsetIndex:
    """Maps UTF-8 byte or UTF-16 unit offsets to code-point offsets for one text."""

    def __init__(self, text: str):
        self.text = text
        self._utf8: dict[int, int] | None = None
        self._utf16: dict[int, int] | None = None

    @staticmethod
    def _build(text: str, width: Callable[[str], int]) -> dict[int, int]:
        table, pos = {0: 0}, 0
        for i, ch in enumerate(text, start=1):
            pos += width(ch)
            table[pos] = i
        return table

    def from_utf8(self, offset: int) -> int:
        if self._utf8 is None:
            self._utf8 = self._build(self.text, lambda ch: len(ch.encode("utf-8")))
        return self._lookup(self._utf8, offset, "UTF-8 byte")

    def from_utf16(self, offset: int) -> int:
        if self._utf16 is None:
            self._utf16 = self._build(self.text, lambda ch: 2 if ord(ch) > 0xFFFF else 1)
        return self._lookup(self._utf16, offset, "UTF-16 unit")

    def from_codepoint(self, offset: int) -> int:
        if not 0 <= offset <= len(self.text):
            raise VendorResponseError(f"code-point offset {offset} out of range for text of length {len(self.text)}")
        return offset

    @staticmethod
    def _lookup(table: dict[int, int], offset: int, unit: str) -> int:
        if offset not in table:
            raise VendorResponseError(f"{unit} offset {offset} is out of range or splits a character")
        return table[offset]


def _as_int(value: Any, what: str) -> int:
    # GCP serializes int64 as strings
    try:
        if isinstance(value, bool):
            raise TypeError
        return int(value)
    except (TypeError, ValueError):
        raise VendorResponseError(f"{what}: expected an integer, got {value!r}") from None


def _loads(body: str | bytes | Mapping) -> Any:
    if isinstance(body, Mapping):
        return body
    try:
        return json.loads(body)
    except ValueError as exc:
        raise VendorResponseError(f"response is not valid JSON: {exc}") from None


def _make_span(index: _OffsetIndex, start: int, end: int, label: str, confidence: float | None, quote: str | None):
    if not start < end:
        raise VendorResponseError(f"empty or inverted range [{start}, {end}) for label {label!r}")
    if quote is not None and index.text[start:end] != quote:
        logger.warning("vendor quote does not match text at [%d, %d) for label %s", start, end, label)
    return VendorSpan(start, end, label, confidence)


_GCP_LIKELIHOOD = {
    "VERY_UNLIKELY": 0.1,
    "UNLIKELY": 0.3,
    "POSSIBLE": 0.5,
    "LIKELY": 0.7,
    "VERY_LIKELY": 0.9,
}


def parse_gcp_response(body: str | bytes | Mapping, text: str) -> list[VendorSpan]:
    obj = _loads(body)
    if not isinstance(obj, Mapping) or not isinstance(obj.get("result"), Mapping):
        raise VendorResponseError("GCP response lacks a 'result' object")
    index = _OffsetIndex(text)
    spans = []
    for i, f in enumerate(obj["result"].get("findings", [])):
        try:
            label = f["infoType"]["name"]
            loc = f["location"]
        except (KeyError, TypeError):
            raise VendorResponseError(f"findings[{i}]: missing infoType.name or location") from None
        if "codepointRange" in loc:
            rng = loc["codepointRange"]
            start = index.from_codepoint(_as_int(rng.get("start", 0), f"findings[{i}].start"))
            end = index.from_codepoint(_as_int(rng.get("end"), f"findings[{i}].end"))
        elif "byteRange" in loc:
            rng = loc["byteRange"]
            start = index.from_utf8(_as_int(rng.get("start", 0), f"findings[{i}].start"))
            end = index.from_utf8(_as_int(rng.get("end"), f"findings[{i}].end"))
        else:
            raise VendorResponseError(f"findings[{i}]: no codepointRange or byteRange")
        spans.append(_make_span(index, start, end, label, _GCP_LIKELIHOOD.get(f.get("likelihood")), f.get("quote")))
    return spans


def parse_aws_response(body: str | bytes | Mapping, text: str) -> list[VendorSpan]:
    obj = _loads(body)
    if not isinstance(obj, Mapping) or not isinstance(obj.get("Entities"), list):
        raise VendorResponseError("AWS response lacks an 'Entities' list")
    index = _OffsetIndex(text)
    spans = []
    for i, e in enumerate(obj["Entities"]):
        try:
            label = e["Type"]
            start = index.from_codepoint(_as_int(e["BeginOffset"], f"Entities[{i}].BeginOffset"))
            end = index.from_codepoint(_as_int(e["EndOffset"], f"Entities[{i}].EndOffset"))
        except (KeyError, TypeError):
            raise VendorResponseError(f"Entities[{i}]: missing Type or offsets") from None
        spans.append(_make_span(index, start, end, label, e.get("Score"), e.get("Text")))
    return spans


def _azure_offset(index: _OffsetIndex, value: Any, what: str) -> int:
    if isinstance(value, Mapping):
        if "codePoint" in value:
            return index.from_codepoint(_as_int(value["codePoint"], what))
        if "utf16" in value:
            return index.from_utf16(_as_int(value["utf16"], what))
        if "utf8" in value:
            return index.from_utf8(_as_int(value["utf8"], what))
        raise VendorResponseError(f"{what}: no codePoint, utf16 or utf8 index")
    return index.from_utf16(_as_int(value, what))


def _azure_length_end(index: _OffsetIndex, offset: Any, length: Any, what: str) -> int:
    # end = offset + length, computed in whichever unit the response provides
    if isinstance(offset, Mapping) and isinstance(length, Mapping):
        for key, conv in (("codePoint", index.from_codepoint), ("utf16", index.from_utf16), ("utf8", index.from_utf8)):
            if key in offset and key in length:
                return conv(_as_int(offset[key], what) + _as_int(length[key], what))
        raise VendorResponseError(f"{what}: offset and length share no index unit")
    return index.from_utf16(_as_int(offset, what) + _as_int(length, what))


def parse_azure_response(body: str | bytes | Mapping, text: str) -> list[VendorSpan]:
    obj = _loads(body)
    tagger = obj.get("taggerResult") if isinstance(obj, Mapping) else None
    if not isinstance(tagger, Mapping) or not isinstance(tagger.get("entities", []), list):
        raise VendorResponseError("Azure response lacks a 'taggerResult.entities' list")
    index = _OffsetIndex(text)
    spans = []
    for i, e in enumerate(tagger.get("entities", [])):
        try:
            label, offset, length = e["category"], e["offset"], e["length"]
        except (KeyError, TypeError):
            raise VendorResponseError(f"entities[{i}]: missing category, offset or length") from None
        start = _azure_offset(index, offset, f"entities[{i}].offset")
        end = _azure_length_end(index, offset, length, f"entities[{i}].length")
        spans.append(_make_span(index, start, end, label, e.get("confidenceScore"), e.get("text")))
    return spans


PARSERS: dict[str, Callable[[Any, str], list[VendorSpan]]] = {
    "gcp": parse_gcp_response,
    "aws": parse_aws_response,
    "azure": parse_azure_response,
}


# --- scoring ------------------------------------------------------------------


def category_groups(mapping: VendorMapping) -> dict[PhiCategory, PhiCategory]:
    """Category -> group representative, joining categories that share a vendor label."""
    parent = {c: c for c in mapping.image}

    def find(c):
        while parent[c] is not c:
            c = parent[c]
        return c

    for cats in mapping.labels.values():
        cats = sorted(cats, key=PHI_CATEGORIES.index)
        for c in cats[1:]:
            a, b = find(cats[0]), find(c)
            if a is not b:
                lo, hi = sorted((a, b), key=PHI_CATEGORIES.index)
                parent[hi] = lo
    return {c: find(c) for c in parent}


_RANK = {c: i for i, c in enumerate(CATEGORY_PRIORITY)}


def _project_predictions(spans: Sequence[PhiSpan], tokens, groups: Mapping[PhiCategory, PhiCategory]) -> list[PhiCategory]:
    labels = [PhiCategory.O] * len(tokens)
    # where categories disagree on a token: longer span first, then category priority
    for span in sorted(spans, key=lambda s: (-(s.end - s.start), _RANK[s.category], s.start)):
        for i, tok in enumerate(tokens):
            if tok.start < span.end and span.start < tok.end and labels[i] is PhiCategory.O:
                labels[i] = groups[span.category]
    return labels


def evaluate_vendor(
    deid: Corpus,
    vendor_spans: Mapping[str, Sequence[VendorSpan]],
    mapping: VendorMapping,
    gold_provenance: Provenance | str = Provenance.SYNTHETIC,
) -> EvalReport:
    """Score harmonized vendor output against the corpus's synthetic labels.

    Categories sharing a vendor label (``PERSON_NAME`` -> PATIENT and HCW) are
    scored as one class against the union of their gold tokens, and each
    member row reports that class's numbers; the overall row counts the
    merged class once. Categories outside the mapping are reported as
    unmapped and their gold tokens are left out of the overall row.
    """
    ids = {r.id for r in deid.reports}
    if set(vendor_spans) != ids:
        extra = sorted(set(vendor_spans) - ids)[:5]
        missing = sorted(ids - set(vendor_spans))[:5]
        raise EvaluationError(f"vendor outputs do not align with corpus ids (missing {missing}, unexpected {extra})")
    groups = category_groups(mapping)
    counts: dict[PhiCategory, Counts] = {}
    for report in deid.reports:
        tokens = tokenize(report.text)
        gold = [groups.get(g, PhiCategory.O) for g in spans_to_token_labels(report.spans_of(gold_provenance), tokens)]
        pred = _project_predictions(harmonize(vendor_spans[report.id], mapping).spans, tokens, groups)
        counts = merge_counts(counts, evaluate_tokens(gold, pred))
    per_class = {c: counts[groups[c]] for c in groups}
    overall = Counts()
    for rep in set(groups.values()):
        overall = overall + counts[rep]
    return summarize(per_class, mapping.unmapped_categories, overall)


# --- fixtures -----------------------------------------------------------------


class VendorFixtureError(ValueError):
    def __init__(self, message: str, report_ids: Sequence[str] = ()):
        self.report_ids = list(report_ids)
        super().__init__(message)


@dataclass
class VendorFixtures:
    vendor: str
    corpus_path: Path | None
    responses: dict[str, Any]


def load_fixture_dir(path: str | Path) -> VendorFixtures:
    path = Path(path)
    manifest_path = path / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        vendor = str(manifest["vendor"]).lower()
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise VendorFixtureError(f"{manifest_path}: unreadable manifest ({exc})") from None
    if vendor not in PARSERS:
        raise VendorFixtureError(f"{manifest_path}: unknown vendor {vendor!r}")
    corpus_path = path / manifest["corpus"] if manifest.get("corpus") else None
    responses = {}
    for f in sorted(path.glob("*.json")):
        if f.name != "manifest.json":
            responses[f.stem] = f.read_text(encoding="utf-8")
    return VendorFixtures(vendor, corpus_path, responses)


def parse_fixtures(fixtures: VendorFixtures, corpus: Corpus) -> dict[str, list[VendorSpan]]:
    """Parse every report's response; all failing report ids are reported together."""
    parser = PARSERS[fixtures.vendor]
    by_id = corpus.by_id()
    missing = sorted(set(by_id) - set(fixtures.responses))
    extra = sorted(set(fixtures.responses) - set(by_id))
    if missing or extra:
        raise VendorFixtureError(
            f"fixtures do not match corpus: missing {missing[:5]}, unexpected {extra[:5]}", missing + extra
        )
    out, failed = {}, []
    for rid, body in fixtures.responses.items():
        try:
            out[rid] = parser(body, by_id[rid].text)
        except VendorResponseError as exc:
            failed.append(rid)
            logger.error("report %s: %s", rid, exc)
    if failed:
        raise VendorFixtureError(f"could not parse responses for reports: {', '.join(failed)}", failed)
    return out
