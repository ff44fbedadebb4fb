"""Hide-in-plain-sight surrogate generation.

Each detected PHI span is replaced by a realistic synthetic value of the same
surface form, and the replacement's position in the rewritten text becomes a
SYNTHETIC ground-truth span.

Randomness is confined to one ``random.Random`` per report, seeded from a
SHA-256 of ``"{seed}:{report_id}"``. Python's Mersenne Twister stream is
stable for integer seeds, which keeps corpora reproducible across releases;
``GENERATOR_ID`` names that scheme and is written to audit records.
"""

from __future__ import annotations

import calendar
import hashlib
import logging
import random
import re
import string
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from radeid.corpus import AnnotatedReport, Corpus, PhiCategory, PhiSpan, Provenance
from radeid.detection import Detector, default_lexicons, detect_corpus
from radeid.segmentation import DEFAULT_MAX_LEN

logger = logging.getLogger(__name__)

GENERATOR_ID = "mt19937-sha256-v1"
SEED_MASK = (1 << 64) - 1
_MAX_ATTEMPTS = 64

# English names, independent of the process locale.
MONTH_NAMES = (
    "January", "February", "March", "April", "May", "June",
    "July", "August", "September", "October", "November", "December",
)
MONTH_ABBRS = tuple(m[:3] for m in MONTH_NAMES)


def report_rng(seed: int, report_id: str) -> random.Random:
    digest = hashlib.sha256(f"{seed & SEED_MASK}:{report_id}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


# --- format patterns --------------------------------------------------------


@dataclass(frozen=True)
class FormatPattern:
    """Character-class template: ``D`` digit, ``A`` uppercase, ``a`` lowercase, anything else literal."""

    template: str
    category: PhiCategory | None = None

    def matches(self, value: str) -> bool:
        return len(value) == len(self.template) and extract_format(value).template == self.template

    def render(self, rng: random.Random) -> str:
        out = []
        for ch in self.template:
            if ch == "D":
                out.append(rng.choice(string.digits))
            elif ch == "A":
                out.append(rng.choice(string.ascii_uppercase))
            elif ch == "a":
                out.append(rng.choice(string.ascii_lowercase))
            else:
                out.append(ch)
        return "".join(out)


def _char_class(ch: str) -> str:
    if ch.isdecimal():
        return "D"
    if ch.isalpha():
        if ch.isupper():
            return "A"
        if ch.islower():
            return "a"
    return ch


def extract_format(span_text: str, category: PhiCategory | None = None) -> FormatPattern:
    return FormatPattern("".join(_char_class(c) for c in span_text), category)


# --- surrogate map ----------------------------------------------------------


@dataclass
class SurrogateMap:
    """Per-report memo from (category, original text) to surrogate text."""

    entries: dict[tuple[PhiCategory, str], str] = field(default_factory=dict)

    def get(self, category: PhiCategory, text: str) -> str | None:
        return self.entries.get((category, text))

    def put(self, category: PhiCategory, text: str, surrogate: str) -> None:
        self.entries[(category, text)] = surrogate

    def used(self, category: PhiCategory) -> set[str]:
        return {v for (c, _), v in self.entries.items() if c is category}

    def __len__(self) -> int:
        return len(self.entries)


# --- per-category generators ------------------------------------------------


def _match_case(new: str, old: str) -> str:
    if len(old) > 1 and old.isupper():
        return new.upper()
    if old.islower():
        return new.lower()
    return new


def _draw(rng: random.Random, make, reject: set[str]) -> str:
    """Call ``make()`` until it yields something outside ``reject`` (bounded)."""
    value = make()
    for _ in range(_MAX_ATTEMPTS):
        if value not in reject:
            return value
        value = make()
    return value


_WORD_RE = re.compile(r"[^\W\d_]+")


def _surrogate_name(text: str, rng: random.Random, lexicons: Mapping[str, Sequence[str]], reject: set[str]) -> str:
    credentials = {c.lower() for c in lexicons.get("credentials", ())}
    words = [m for m in _WORD_RE.finditer(text) if m.group().lower() not in credentials]
    if not words:
        return text
    # "Last, First" puts the surname first
    surname_first = len(words) > 1 and text[words[0].end() : words[1].start()].strip() == ","
    last = 0 if surname_first else len(words) - 1

    def make() -> str:
        out, pos = [], 0
        for i, m in enumerate(words):
            out.append(text[pos : m.start()])
            old = m.group()
            if len(old) == 1:
                new = rng.choice(string.ascii_uppercase)
            else:
                new = rng.choice(lexicons["surnames"] if i == last else lexicons["first_names"])
            out.append(_match_case(new, old))
            pos = m.end()
        out.append(text[pos:])
        return "".join(out)

    return _draw(rng, make, reject)


def _surrogate_lexicon(text: str, rng: random.Random, entries: Sequence[str], reject: set[str]) -> str:
    pool = [e for e in entries if e.lower() != text.lower()] or list(entries)
    return _draw(rng, lambda: _match_case(rng.choice(pool), text), reject)


def _surrogate_age(text: str, rng: random.Random, reject: set[str]) -> str:
    stripped = text.strip()
    if not stripped.isdecimal():
        logger.warning("non-numeric AGE value (length %d); drawing uniformly from [18, 89]", len(text))
        return _draw(rng, lambda: str(rng.randint(18, 89)), reject)
    value = int(stripped)
    lo = min(max(1, value - 10), 89)
    hi = max(min(89, value + 10), 1)
    candidates = [str(v) for v in range(lo, hi + 1) if v != value] or [str(lo)]
    return _draw(rng, lambda: rng.choice(candidates), reject)


def _surrogate_format(text: str, rng: random.Random, reject: set[str]) -> str:
    fmt = extract_format(text)
    if fmt.template == text:
        # nothing variable to randomize
        return text
    return _draw(rng, lambda: fmt.render(rng), reject)


# Dates ----------------------------------------------------------------------

_DATE_PIECE_RE = re.compile(r"\d+|[^\W\d_]+|[\W_]+")
_ORDINALS = {"st", "nd", "rd", "th"}


def _month_from_word(word: str) -> tuple[int, str] | None:
    w = word.lower()
    for i, (full, abbr) in enumerate(zip(MONTH_NAMES, MONTH_ABBRS), start=1):
        if w == full.lower():
            return i, "full"
        if w == abbr.lower() or (i == 9 and w == "sept"):
            return i, "abbr"
    return None


def _ordinal_suffix(day: int) -> str:
    if 10 <= day % 100 <= 20:
        return "th"
    return {1: "st", 2: "nd", 3: "rd"}.get(day % 10, "th")


@dataclass
class _DateLayout:
    pieces: list[str]
    roles: dict[int, str]  # piece index -> "year" | "month" | "day" | "monthname" | "ordinal"
    month_style: str | None = None


def _parse_date_layout(text: str) -> _DateLayout | None:
    pieces = _DATE_PIECE_RE.findall(text)
    digits = [i for i, p in enumerate(pieces) if p.isdecimal()]
    alphas = [i for i, p in enumerate(pieces) if p.isalpha()]
    roles: dict[int, str] = {}
    style = None

    month_alpha = [i for i in alphas if _month_from_word(pieces[i])]
    if month_alpha:
        if len(month_alpha) > 1:
            return None
        mi = month_alpha[0]
        roles[mi] = "monthname"
        style = _month_from_word(pieces[mi])[1]
        for i in alphas:
            if i == mi:
                continue
            if pieces[i].lower() in _ORDINALS and i - 1 in digits:
                roles[i] = "ordinal"
            else:
                return None
        years = [i for i in digits if len(pieces[i]) == 4]
        shorts = [i for i in digits if len(pieces[i]) <= 2]
        if len(years) + len(shorts) != len(digits) or len(years) > 1:
            return None
        if years:
            if len(shorts) > 1:
                return None
            roles[years[0]] = "year"
            if shorts:
                roles[shorts[0]] = "day"
        elif len(shorts) == 2:
            roles[shorts[0]], roles[shorts[1]] = "day", "year"
        elif len(shorts) == 1:
            roles[shorts[0]] = "day"
        if any(r == "ordinal" for r in roles.values()) and "day" not in roles.values():
            return None
        return _DateLayout(pieces, roles, style)

    if alphas:
        return None
    widths = [len(pieces[i]) for i in digits]
    if len(digits) == 1:
        if widths[0] == 8:
            # YYYYMMDD: split the run into three logical components
            run = pieces[digits[0]]
            pieces = pieces[: digits[0]] + [run[:4], "", run[4:6], "", run[6:]] + pieces[digits[0] + 1 :]
            base = digits[0]
            roles = {base: "year", base + 2: "month", base + 4: "day"}
        elif widths[0] == 4:
            roles = {digits[0]: "year"}
        else:
            return None
    elif len(digits) == 2:
        a, b = digits
        if len(pieces[b]) == 4 and len(pieces[a]) <= 2:
            roles = {a: "month", b: "year"}
        elif len(pieces[a]) == 4 and len(pieces[b]) <= 2:
            roles = {a: "year", b: "month"}
        elif len(pieces[a]) <= 2 and len(pieces[b]) <= 2:
            roles = {a: "month", b: "day"}
        else:
            return None
    elif len(digits) == 3:
        a, b, c = digits
        if len(pieces[a]) == 4 and len(pieces[b]) <= 2 and len(pieces[c]) <= 2:
            roles = {a: "year", b: "month", c: "day"}
        elif len(pieces[a]) <= 2 and len(pieces[b]) <= 2 and len(pieces[c]) in (2, 4):
            if int(pieces[a]) > 12 and int(pieces[b]) <= 12:
                roles = {a: "day", b: "month", c: "year"}
            else:
                roles = {a: "month", b: "day", c: "year"}
        else:
            return None
    else:
        return None
    return _DateLayout(pieces, roles, None)


def _numeric_component(rng: random.Random, lo: int, hi: int, old: str, unpadded: bool) -> str:
    width = len(old)
    if width == 1:
        return str(rng.randint(lo, min(hi, 9)))
    if unpadded and not old.startswith("0") and hi >= 10:
        return str(rng.randint(max(lo, 10), hi))
    return f"{rng.randint(lo, hi):0{width}d}"


def _render_date(layout: _DateLayout, rng: random.Random) -> str:
    pieces, roles = layout.pieces, layout.roles
    by_role = {r: i for i, r in roles.items()}
    numeric_short = [pieces[i] for i, r in roles.items() if r in ("month", "day")]
    unpadded = any(len(p) == 1 for p in numeric_short)

    out = list(pieces)
    year = 2000
    if "year" in by_role:
        old = pieces[by_role["year"]]
        if len(old) == 4:
            year = rng.randint(1975, 2030)
            out[by_role["year"]] = str(year)
        else:
            yy = rng.randint(0, 99)
            year = 2000 + yy
            out[by_role["year"]] = f"{yy:0{len(old)}d}"
    month = 1
    if "month" in by_role:
        old = pieces[by_role["month"]]
        out[by_role["month"]] = _numeric_component(rng, 1, 12, old, unpadded)
        month = int(out[by_role["month"]])
    elif "monthname" in by_role:
        month = rng.randint(1, 12)
        names = MONTH_NAMES if layout.month_style == "full" else MONTH_ABBRS
        out[by_role["monthname"]] = _match_case(names[month - 1], pieces[by_role["monthname"]])
    if "day" in by_role:
        old = pieces[by_role["day"]]
        dim = calendar.monthrange(year, month)[1]
        out[by_role["day"]] = _numeric_component(rng, 1, dim, old, unpadded)
        day = int(out[by_role["day"]])
        if "ordinal" in by_role:
            out[by_role["ordinal"]] = _match_case(_ordinal_suffix(day), pieces[by_role["ordinal"]])
    return "".join(out)


def _surrogate_date(text: str, rng: random.Random, reject: set[str]) -> str:
    layout = _parse_date_layout(text)
    if layout is None:
        logger.warning("unrecognized DATE layout %r; randomizing digits in place", extract_format(text).template)
        return _draw(rng, lambda: "".join(rng.choice(string.digits) if ch.isdecimal() else ch for ch in text), reject)
    return _draw(rng, lambda: _render_date(layout, rng), reject)


def generate_surrogate(
    span_text: str,
    category: PhiCategory,
    rng: random.Random,
    smap: SurrogateMap,
    lexicons: Mapping[str, Sequence[str]] | None = None,
) -> str:
    """Return the surrogate for one PHI span, reusing ``smap`` for repeated mentions.

    DATE keeps its layout (numeric stays numeric, spelled months stay spelled),
    PHONE and ID are re-rolled within their character template, names keep
    word count, capitalization and credential words, HOSPITAL and VENDOR are
    lexicon draws, and AGE moves by at most 10 years within [1, 89].
    """
    category = PhiCategory(category)
    if not category.is_phi:
        raise ValueError("cannot generate a surrogate for O")
    known = smap.get(category, span_text)
    if known is not None:
        return known
    lexicons = lexicons if lexicons is not None else default_lexicons()
    # the original and values already handed out for other originals
    reject = smap.used(category) | {span_text}

    if category is PhiCategory.DATE:
        value = _surrogate_date(span_text, rng, reject)
    elif category in (PhiCategory.PHONE, PhiCategory.ID):
        value = _surrogate_format(span_text, rng, reject)
    elif category in (PhiCategory.PATIENT, PhiCategory.HCW):
        value = _surrogate_name(span_text, rng, lexicons, reject)
    elif category is PhiCategory.HOSPITAL:
        value = _surrogate_lexicon(span_text, rng, lexicons["hospitals"], reject)
    elif category is PhiCategory.VENDOR:
        value = _surrogate_lexicon(span_text, rng, lexicons["vendors"], reject)
    else:
        value = _surrogate_age(span_text, rng, reject)
    smap.put(category, span_text, value)
    return value


# --- report and corpus rewriting -------------------------------------------


@dataclass(frozen=True)
class Replacement:
    category: PhiCategory
    orig_len: int
    surrogate: str
    start: int
    end: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "category": self.category.value,
            "orig_len": self.orig_len,
            "surrogate": self.surrogate,
            "start": self.start,
            "end": self.end,
        }


@dataclass(frozen=True)
class DeidResult:
    report_id: str
    text: str
    spans: tuple[PhiSpan, ...]
    surrogate_map: SurrogateMap
    seed: int
    replacements: tuple[Replacement, ...] = ()

    def to_report(self, metadata: Mapping[str, Any] | None = None) -> AnnotatedReport:
        return AnnotatedReport(self.report_id, self.text, self.spans, metadata or {})

    def audit_record(self) -> dict[str, Any]:
        """Audit line for this report. The original PHI text is never included."""
        return {
            "id": self.report_id,
            "seed": self.seed,
            "generator": GENERATOR_ID,
            "replacements": [r.to_dict() for r in self.replacements],
        }


def apply_surrogates(
    report: AnnotatedReport,
    spans: Sequence[PhiSpan],
    seed: int,
    lexicons: Mapping[str, Sequence[str]] | None = None,
) -> DeidResult:
    """Rewrite ``report.text`` left to right, replacing every span with its surrogate.

    Raises:
        ValueError: spans overlap or fall outside the text.
    """
    seed &= SEED_MASK
    text = report.text
    ordered = sorted(spans, key=lambda s: (s.start, s.end))
    for i, s in enumerate(ordered):
        if not 0 <= s.start < s.end <= len(text):
            raise ValueError(f"report {report.id!r}: span [{s.start}, {s.end}) out of bounds")
        if i and ordered[i - 1].end > s.start:
            raise ValueError(f"report {report.id!r}: overlapping spans at offset {s.start}")
    lexicons = lexicons if lexicons is not None else default_lexicons()
    rng = report_rng(seed, report.id)
    smap = SurrogateMap()
    parts: list[str] = []
    synthetic: list[PhiSpan] = []
    replacements: list[Replacement] = []
    pos = out_len = 0
    for s in ordered:
        parts.append(text[pos : s.start])
        out_len += s.start - pos
        surrogate = generate_surrogate(text[s.start : s.end], s.category, rng, smap, lexicons)
        synthetic.append(PhiSpan(out_len, out_len + len(surrogate), s.category, Provenance.SYNTHETIC))
        replacements.append(Replacement(s.category, s.end - s.start, surrogate, out_len, out_len + len(surrogate)))
        parts.append(surrogate)
        out_len += len(surrogate)
        pos = s.end
    parts.append(text[pos:])
    return DeidResult(report.id, "".join(parts), tuple(synthetic), smap, seed, tuple(replacements))


def surrogate_corpus(
    corpus: Corpus,
    seed: int,
    source: Provenance = Provenance.PREDICTED,
    lexicons: Mapping[str, Sequence[str]] | None = None,
) -> tuple[Corpus, list[dict[str, Any]]]:
    """One de-identified copy of ``corpus`` built from its ``source`` spans.

    Returned reports carry only SYNTHETIC spans (the old offsets no longer
    apply to the rewritten text). Also returns one audit record per report.
    """
    lexicons = lexicons if lexicons is not None else default_lexicons()
    reports, audit = [], []
    for report in corpus.reports:
        result = apply_surrogates(report, report.spans_of(source), seed, lexicons)
        reports.append(result.to_report(report.metadata))
        audit.append(result.audit_record())
    return Corpus(tuple(reports), corpus.name), audit


def run_seed(seed: int, run_index: int) -> int:
    return (seed + run_index) & SEED_MASK


def deidentify_corpus(
    corpus: Corpus,
    detector: Detector,
    seed: int,
    runs: int = 1,
    max_len: int = DEFAULT_MAX_LEN,
    lexicons: Mapping[str, Sequence[str]] | None = None,
) -> list[Corpus]:
    """Detect once, then produce ``runs`` independently surrogated corpora (seed + run index)."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    detected = detect_corpus(corpus, detector, max_len)
    return [surrogate_corpus(detected, run_seed(seed, k), lexicons=lexicons)[0] for k in range(runs)]
