"""PHI detectors: a pattern/lexicon rule engine and a remote-inference adapter.

Any object with a ``name`` and a ``detect(text) -> list[PhiSpan]`` method can
fill the detector slot of :func:`detect_corpus`.

Rule files are JSON::

    {"rules": [{"category": "DATE", "pattern": "\\\\d{2}/\\\\d{2}/\\\\d{4}"},
               {"category": "HCW", "lexicon": "surnames", "context_before": "Dr\\\\.?"}],
     "lexicons": {"surnames": ["Smith", "Jones"]}}

Inside a pattern, ``{@name}`` expands to a case-insensitive alternation of
lexicon ``name`` with word boundaries on both sides. A pattern with a named
group ``phi`` reports only that group's range.
"""

from __future__ import annotations

import json
import logging
import re
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

from radeid.corpus import PHI_CATEGORIES, AnnotatedReport, Corpus, PhiCategory, PhiSpan, Provenance
from radeid.segmentation import (
    DEFAULT_MAX_LEN,
    TokenSeq,
    chunk_text,
    reconstruct_labels,
    spans_to_token_labels,
    token_labels_to_spans,
)

logger = logging.getLogger(__name__)

# Tie-break order when two candidate matches have equal length.
CATEGORY_PRIORITY: tuple[PhiCategory, ...] = (
    PhiCategory.ID,
    PhiCategory.PHONE,
    PhiCategory.DATE,
    PhiCategory.AGE,
    PhiCategory.PATIENT,
    PhiCategory.HCW,
    PhiCategory.HOSPITAL,
    PhiCategory.VENDOR,
)
_PRIORITY_RANK = {c: i for i, c in enumerate(CATEGORY_PRIORITY)}

_LEXICON_REF = re.compile(r"\{@(\w+)\}")
_CONTEXT_WINDOW = 64


class Detector(Protocol):
    name: str

    def detect(self, text: str) -> list[PhiSpan]: ...


class RuleSetError(ValueError):
    pass


class DetectionError(RuntimeError):
    """A detector failed on a specific report."""

    def __init__(self, report_id: str, cause: BaseException):
        self.report_id = report_id
        self.cause = cause
        super().__init__(f"report {report_id!r}: {type(cause).__name__}: {cause}")


def lexicon_regex(entries: Sequence[str]) -> str:
    """Case-insensitive, word-bounded alternation; longer entries are tried first."""
    alts = "|".join(re.escape(e) for e in sorted(set(entries), key=lambda e: (-len(e), e)))
    return rf"(?<![^\W_])(?i:{alts})(?![^\W_])"


@dataclass(frozen=True)
class Rule:
    category: PhiCategory
    pattern: str | None = None
    lexicon: str | None = None
    context_before: str | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"category": self.category.value}
        if self.pattern is not None:
            d["pattern"] = self.pattern
        else:
            d["lexicon"] = self.lexicon
            d["context_before"] = self.context_before
        return d


@dataclass
class RuleSet:
    """Ordered rules plus the named lexicons they reference.

    Validation and compilation happen at construction; a ``RuleSet`` that
    exists is usable. Compiled patterns are read-only afterwards so one
    instance can be shared across threads.
    """

    rules: list[Rule]
    lexicons: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        for name, entries in self.lexicons.items():
            if not entries:
                raise RuleSetError(f"lexicon {name!r} is empty")
        self._compiled: list[tuple[Rule, re.Pattern, re.Pattern | None]] = []
        for i, rule in enumerate(self.rules):
            if not isinstance(rule.category, PhiCategory) or not rule.category.is_phi:
                raise RuleSetError(f"rule {i}: invalid category {rule.category!r}")
            if (rule.pattern is None) == (rule.lexicon is None):
                raise RuleSetError(f"rule {i}: exactly one of 'pattern' or 'lexicon' is required")
            try:
                if rule.pattern is not None:
                    regex = re.compile(self._expand(rule.pattern, i))
                else:
                    regex = re.compile(lexicon_regex(self._lexicon(rule.lexicon, i)))
                context = re.compile(f"(?:{rule.context_before})\\s*\\Z") if rule.context_before else None
            except re.error as exc:
                raise RuleSetError(f"rule {i}: pattern does not compile: {exc}") from None
            self._compiled.append((rule, regex, context))

    def _lexicon(self, name: str, rule_index: int) -> list[str]:
        if name not in self.lexicons:
            raise RuleSetError(f"rule {rule_index}: unknown lexicon {name!r}")
        return self.lexicons[name]

    def _expand(self, pattern: str, rule_index: int) -> str:
        return _LEXICON_REF.sub(lambda m: lexicon_regex(self._lexicon(m.group(1), rule_index)), pattern)

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any], extra_lexicons: Mapping[str, Sequence[str]] | None = None) -> RuleSet:
        lexicons = {k: list(v) for k, v in (extra_lexicons or {}).items()}
        lexicons.update({k: list(v) for k, v in obj.get("lexicons", {}).items()})
        rules = []
        for i, r in enumerate(obj.get("rules", [])):
            try:
                category = PhiCategory(r["category"])
            except (KeyError, ValueError):
                raise RuleSetError(f"rule {i}: invalid category {r.get('category')!r}") from None
            rules.append(Rule(category, r.get("pattern"), r.get("lexicon"), r.get("context_before")))
        return cls(rules, lexicons)

    def to_dict(self) -> dict[str, Any]:
        return {"rules": [r.to_dict() for r in self.rules], "lexicons": self.lexicons}

    def matches(self, text: str) -> list[tuple[int, int, PhiCategory, int]]:
        """Every raw match as ``(start, end, category, rule_index)``, overlaps included."""
        found = []
        for i, (rule, regex, context) in enumerate(self._compiled):
            for m in regex.finditer(text):
                start, end = m.span("phi") if "phi" in regex.groupindex else m.span()
                if start < 0 or start >= end:
                    continue
                if context is not None and not context.search(text, max(0, start - _CONTEXT_WINDOW), start):
                    continue
                found.append((start, end, rule.category, i))
        return found


def load_lexicons(path: str | Path) -> dict[str, list[str]]:
    with Path(path).open(encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or not all(isinstance(v, list) for v in data.values()):
        raise RuleSetError(f"{path}: lexicon file must map names to lists of strings")
    return data


def load_ruleset(path: str | Path, extra_lexicons: Mapping[str, Sequence[str]] | None = None) -> RuleSet:
    with Path(path).open(encoding="utf-8") as fh:
        return RuleSet.from_dict(json.load(fh), extra_lexicons)


def default_lexicons() -> dict[str, list[str]]:
    return json.loads(resources.files("radeid.data").joinpath("lexicons.json").read_text(encoding="utf-8"))


def default_ruleset(lexicons: Mapping[str, Sequence[str]] | None = None) -> RuleSet:
    """The bundled rules, matched to the surrogate generator's output formats.

    ``lexicons`` replaces the bundled lexicons (e.g. defaults merged with site lists).
    """
    obj = json.loads(resources.files("radeid.data").joinpath("default_rules.json").read_text(encoding="utf-8"))
    return RuleSet.from_dict(obj, default_lexicons() if lexicons is None else lexicons)


def resolve_overlaps(candidates: Sequence[tuple[int, int, PhiCategory, int]]) -> list[tuple[int, int, PhiCategory, int]]:
    """Keep a non-overlapping subset: longest first, then category priority, then rule order."""
    ranked = sorted(candidates, key=lambda c: (-(c[1] - c[0]), _PRIORITY_RANK[c[2]], c[3], c[0]))
    kept: list[tuple[int, int, PhiCategory, int]] = []
    for cand in ranked:
        if all(cand[1] <= k[0] or k[1] <= cand[0] for k in kept):
            kept.append(cand)
    kept.sort()
    return kept


def rule_detect(text: str, rules: RuleSet) -> list[PhiSpan]:
    return [
        PhiSpan(start, end, category, Provenance.PREDICTED)
        for start, end, category, _ in resolve_overlaps(rules.matches(text))
    ]


class RuleDetector:
    def __init__(self, rules: RuleSet | None = None, name: str = "rules"):
        self.rules = rules if rules is not None else default_ruleset()
        self.name = name

    def detect(self, text: str) -> list[PhiSpan]:
        return rule_detect(text, self.rules)


# --- remote adapter -------------------------------------------------------


class RemoteError(RuntimeError):
    pass


class RemoteTransportError(RemoteError):
    """The endpoint could not be reached after all retries."""


class RemoteResponseError(RemoteError):
    """The endpoint answered with something that is not the expected JSON shape."""


class RemoteSpanError(RemoteError):
    """A returned span breaks the span invariants for the request text."""


@dataclass(frozen=True)
class RemoteEndpoint:
    base_url: str
    timeout_ms: int = 30_000
    max_retries: int = 3
    backoff_s: float = 0.5

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


def _post_json(endpoint: RemoteEndpoint, payload: dict) -> bytes:
    url = endpoint.base_url.rstrip("/") + "/detect"
    data = json.dumps(payload, ensure_ascii=False).encode("utf-8")
    last_exc: Exception | None = None
    for attempt in range(endpoint.max_retries + 1):
        if attempt:
            time.sleep(endpoint.backoff_s * 2 ** (attempt - 1))
        req = urllib.request.Request(
            url, data=data, method="POST", headers={"Content-Type": "application/json; charset=utf-8"}
        )
        try:
            with urllib.request.urlopen(req, timeout=endpoint.timeout_ms / 1000) as resp:
                return resp.read()
        except urllib.error.HTTPError as exc:
            # 4xx will not improve on retry
            if 400 <= exc.code < 500:
                raise RemoteTransportError(f"{url}: HTTP {exc.code}") from exc
            last_exc = exc
        except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
            last_exc = exc
        logger.warning("remote detect attempt %d/%d failed: %s", attempt + 1, endpoint.max_retries + 1, last_exc)
    raise RemoteTransportError(f"{url}: giving up after {endpoint.max_retries + 1} attempts: {last_exc}")


def parse_remote_response(body: bytes | str, text: str) -> list[PhiSpan]:
    try:
        obj = json.loads(body)
        raw = obj["spans"]
        if not isinstance(raw, list):
            raise TypeError("'spans' is not a list")
    except (ValueError, KeyError, TypeError) as exc:
        raise RemoteResponseError(f"malformed response: {exc}") from None
    spans = []
    for i, s in enumerate(raw):
        try:
            start, end = s["start"], s["end"]
            if type(start) is not int or type(end) is not int:
                raise TypeError("offsets must be integers")
            category = PhiCategory(s["category"])
        except (KeyError, TypeError, ValueError) as exc:
            raise RemoteResponseError(f"spans[{i}]: {exc}") from None
        if not category.is_phi:
            raise RemoteSpanError(f"spans[{i}]: category O is not allowed on a span")
        if not 0 <= start < end <= len(text):
            raise RemoteSpanError(f"spans[{i}]: range [{start}, {end}) invalid for text of length {len(text)}")
        spans.append(PhiSpan(start, end, category, Provenance.PREDICTED))
    spans.sort()
    for a, b in zip(spans, spans[1:]):
        if a.overlaps(b):
            raise RemoteSpanError(f"overlapping spans [{a.start}, {a.end}) and [{b.start}, {b.end})")
    return spans


def remote_detect(text: str, endpoint: RemoteEndpoint) -> list[PhiSpan]:
    """POST ``{"text": ...}`` to ``{base}/detect`` and validate the returned spans."""
    return parse_remote_response(_post_json(endpoint, {"text": text}), text)


class RemoteDetector:
    def __init__(self, endpoint: RemoteEndpoint, name: str | None = None):
        self.endpoint = endpoint
        self.name = name or f"remote:{endpoint.base_url}"

    def detect(self, text: str) -> list[PhiSpan]:
        return remote_detect(text, self.endpoint)


# --- corpus-level inference ---------------------------------------------------


def detect_report(report: AnnotatedReport, detector: Detector, max_len: int = DEFAULT_MAX_LEN) -> list[PhiSpan]:
    """Chunk, detect per chunk, shift offsets, and merge labels back to document spans."""
    tokens, chunks = chunk_text(report.text, max_len)
    per_chunk = []
    for chunk in chunks:
        local = detector.detect(report.text[chunk.char_start : chunk.char_end])
        shifted = [s.shifted(chunk.char_start) for s in local]
        chunk_tokens = TokenSeq(tokens.tokens[chunk.start : chunk.end], tokens.source_length)
        per_chunk.append(spans_to_token_labels(shifted, chunk_tokens))
    labels = reconstruct_labels(chunks, per_chunk)
    return token_labels_to_spans(labels, tokens, Provenance.PREDICTED)


def detect_corpus(
    corpus: Corpus,
    detector: Detector,
    max_len: int = DEFAULT_MAX_LEN,
    workers: int | None = None,
) -> Corpus:
    """Attach PREDICTED spans to every report, replacing any existing ones.

    Other provenances are left untouched. With ``workers`` > 1 reports run on
    a thread pool; results do not depend on scheduling.
    """

    def one(report: AnnotatedReport) -> AnnotatedReport:
        try:
            spans = detect_report(report, detector, max_len)
        except Exception as exc:
            raise DetectionError(report.id, exc) from exc
        return report.with_spans(spans, replacing=Provenance.PREDICTED)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(one, corpus.reports))
    else:
        reports = [one(r) for r in corpus.reports]
    return Corpus(tuple(reports), corpus.name)


def predicted_category_counts(corpus: Corpus) -> dict[PhiCategory, int]:
    counts = {c: 0 for c in PHI_CATEGORIES}
    for report in corpus.reports:
        for span in report.spans_of(Provenance.PREDICTED):
            counts[span.category] += 1
    return counts
