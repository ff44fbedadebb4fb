"""Token-level precision/recall/F1, multi-run confidence intervals and comparison tables.

Scoring rules per token, for gold label ``g`` and predicted label ``p``:

* ``g == p != O``: true positive for ``g``
* ``g == O``, ``p != O``: false positive for ``p``
* ``g != O``, ``p == O``: false negative for ``g``
* ``g != p``, both PHI: false positive for ``p`` and false negative for ``g``

The overall row is micro-averaged over PHI classes. A metric whose
denominator is zero is ``None`` and renders as ``--``.
"""

from __future__ import annotations

import math
import random
import statistics
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from radeid.corpus import PHI_CATEGORIES, Corpus, PhiCategory, Provenance
from radeid.segmentation import spans_to_token_labels, tokenize

# Row order used in rendered tables.
DISPLAY_ORDER: tuple[PhiCategory, ...] = (
    PhiCategory.DATE,
    PhiCategory.ID,
    PhiCategory.HCW,
    PhiCategory.HOSPITAL,
    PhiCategory.PATIENT,
    PhiCategory.PHONE,
    PhiCategory.VENDOR,
    PhiCategory.AGE,
)
OVERALL = "Overall"
METRICS = ("precision", "recall", "f1")
MISSING = "--"
Z_95 = 1.96


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: Counts) -> Counts:
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def support(self) -> int:
        return self.tp + self.fn

    @property
    def predicted(self) -> int:
        return self.tp + self.fp

    @property
    def precision(self) -> float | None:
        return self.tp / self.predicted if self.predicted else None

    @property
    def recall(self) -> float | None:
        return self.tp / self.support if self.support else None

    @property
    def f1(self) -> float | None:
        if not self.predicted or not self.support:
            return None
        # equals 2PR/(P+R), computed as one exact integer division
        return 2 * self.tp / (2 * self.tp + self.fp + self.fn)

    def metric(self, name: str) -> float | None:
        return getattr(self, name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "support": self.support,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


ClassCounts = dict[PhiCategory, Counts]


def empty_counts() -> ClassCounts:
    return {c: Counts() for c in PHI_CATEGORIES}


def merge_counts(*parts: Mapping[PhiCategory, Counts]) -> ClassCounts:
    total = empty_counts()
    for part in parts:
        for c, n in part.items():
            total[c] = total.get(c, Counts()) + n
    return total


def evaluate_tokens(gold: Sequence[PhiCategory], pred: Sequence[PhiCategory]) -> ClassCounts:
    if len(gold) != len(pred):
        raise EvaluationError(f"label length mismatch: gold {len(gold)} vs pred {len(pred)}")
    tp: dict[PhiCategory, int] = {}
    fp: dict[PhiCategory, int] = {}
    fn: dict[PhiCategory, int] = {}
    for g, p in zip(gold, pred):
        g, p = PhiCategory(g), PhiCategory(p)
        if g == p:
            if g.is_phi:
                tp[g] = tp.get(g, 0) + 1
            continue
        if p.is_phi:
            fp[p] = fp.get(p, 0) + 1
        if g.is_phi:
            fn[g] = fn.get(g, 0) + 1
    return {c: Counts(tp.get(c, 0), fp.get(c, 0), fn.get(c, 0)) for c in PHI_CATEGORIES}


@dataclass(frozen=True)
class EvalReport:
    """Per-class and overall token counts; metrics are derived properties of :class:`Counts`.

    Categories listed in ``unmapped`` are outside the scored label space (for
    example a vendor with no equivalent label) and render as ``--``.
    """

    per_class: Mapping[PhiCategory, Counts]
    overall: Counts
    unmapped: frozenset[PhiCategory] = frozenset()

    def row(self, key: PhiCategory | str) -> Counts | None:
        if key == OVERALL:
            return self.overall
        key = PhiCategory(key)
        if key in self.unmapped:
            return None
        return self.per_class.get(key)

    def value(self, key: PhiCategory | str, metric: str) -> float | None:
        row = self.row(key)
        return None if row is None else row.metric(metric)

    def to_dict(self) -> dict[str, Any]:
        return {
            "overall": self.overall.to_dict(),
            "classes": {c.value: self.per_class[c].to_dict() for c in PHI_CATEGORIES if c in self.per_class},
            "unmapped": sorted(c.value for c in self.unmapped),
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> EvalReport:
        def counts(d):
            return Counts(d["tp"], d["fp"], d["fn"])

        return cls(
            {PhiCategory(k): counts(v) for k, v in obj["classes"].items()},
            counts(obj["overall"]),
            frozenset(PhiCategory(c) for c in obj.get("unmapped", [])),
        )


def summarize(
    counts: Mapping[PhiCategory, Counts],
    unmapped: Iterable[PhiCategory] = (),
    overall: Counts | None = None,
) -> EvalReport:
    """Build an :class:`EvalReport`; ``overall`` defaults to the sum over scored classes."""
    unmapped = frozenset(unmapped)
    per_class = {c: counts.get(c, Counts()) for c in PHI_CATEGORIES}
    if overall is None:
        overall = Counts()
        for c, n in per_class.items():
            if c not in unmapped:
                overall = overall + n
    return EvalReport(per_class, overall, unmapped)


def _pair_reports(gold: Corpus, pred: Corpus):
    gold_ids = [r.id for r in gold.reports]
    pred_by_id = pred.by_id()
    if set(gold_ids) != set(pred_by_id) or len(gold_ids) != len(pred_by_id):
        missing = sorted(set(gold_ids) ^ set(pred_by_id))[:5]
        raise EvaluationError(f"report ids differ between corpora (e.g. {missing})")
    for g in gold.reports:
        p = pred_by_id[g.id]
        if g.text != p.text:
            raise EvaluationError(f"report {g.id!r}: texts differ between corpora")
        yield g, p


def corpus_counts(
    gold: Corpus,
    pred: Corpus,
    gold_provenance: Provenance | str = Provenance.GOLD,
    pred_provenance: Provenance | str = Provenance.PREDICTED,
) -> ClassCounts:
    total = empty_counts()
    for g, p in _pair_reports(gold, pred):
        tokens = tokenize(g.text)
        gl = spans_to_token_labels(g.spans_of(gold_provenance), tokens)
        pl = spans_to_token_labels(p.spans_of(pred_provenance), tokens)
        total = merge_counts(total, evaluate_tokens(gl, pl))
    return total


def evaluate_corpus(
    gold: Corpus,
    pred: Corpus,
    gold_provenance: Provenance | str = Provenance.GOLD,
    pred_provenance: Provenance | str = Provenance.PREDICTED,
) -> EvalReport:
    """Score ``pred_provenance`` spans of ``pred`` against ``gold_provenance`` spans of ``gold``.

    Reports are paired by id, so report order does not matter. ``gold`` and
    ``pred`` may be the same corpus.
    """
    return summarize(corpus_counts(gold, pred, gold_provenance, pred_provenance))


# --- multi-run aggregation ----------------------------------------------------


@dataclass(frozen=True)
class CiStat:
    mean: float
    sd: float
    lo: float
    hi: float
    n: int
    excluded: int = 0

    @property
    def half_width(self) -> float:
        return (self.hi - self.lo) / 2

    def to_dict(self) -> dict[str, Any]:
        return {"mean": self.mean, "sd": self.sd, "lo": self.lo, "hi": self.hi, "n": self.n, "excluded": self.excluded}


@dataclass(frozen=True)
class CiReport:
    """Mean, sample sd and 95% interval per (row, metric); ``None`` when every run was undefined."""

    stats: Mapping[tuple[str, str], CiStat | None]
    runs: int
    method: str = "normal"

    def get(self, row: PhiCategory | str, metric: str) -> CiStat | None:
        key = OVERALL if row == OVERALL else PhiCategory(row).value
        return self.stats.get((key, metric))

    def to_dict(self) -> dict[str, Any]:
        rows: dict[str, dict[str, Any]] = {}
        for (row, metric), stat in self.stats.items():
            rows.setdefault(row, {})[metric] = stat.to_dict() if stat else None
        return {"runs": self.runs, "method": self.method, "rows": rows}


def _clip(x: float) -> float:
    return min(1.0, max(0.0, x))


def _normal_ci(values: Sequence[float]) -> tuple[float, float, float, float]:
    mean = statistics.fmean(values)
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    half = Z_95 * sd / math.sqrt(len(values))
    return mean, sd, _clip(mean - half), _clip(mean + half)


def _bootstrap_ci(values: Sequence[float], rng: random.Random, resamples: int) -> tuple[float, float, float, float]:
    mean = statistics.fmean(values)
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    n = len(values)
    means = sorted(statistics.fmean(rng.choices(values, k=n)) for _ in range(resamples))
    lo = means[int(0.025 * (resamples - 1))]
    hi = means[int(math.ceil(0.975 * (resamples - 1)))]
    return mean, sd, _clip(min(lo, mean)), _clip(max(hi, mean))


def aggregate_runs(
    reports: Sequence[EvalReport],
    method: str = "normal",
    seed: int = 0,
    resamples: int = 2000,
) -> CiReport:
    """Aggregate per-run reports into means and 95% confidence intervals.

    ``method="normal"`` uses mean ± 1.96·sd/√n clipped to [0, 1];
    ``method="bootstrap"`` uses the percentile bootstrap of the mean with a
    seeded generator. Runs where a metric is undefined are left out of that
    metric and counted in ``excluded``.
    """
    if not reports:
        raise EvaluationError("aggregate_runs needs at least one report")
    if method not in ("normal", "bootstrap"):
        raise EvaluationError(f"unknown CI method {method!r}")
    unmapped = reports[0].unmapped
    if any(r.unmapped != unmapped for r in reports):
        raise EvaluationError("reports disagree on unmapped categories")
    rng = random.Random(seed)
    rows = [OVERALL] + [c.value for c in DISPLAY_ORDER]
    stats: dict[tuple[str, str], CiStat | None] = {}
    for row in rows:
        for metric in METRICS:
            values = [r.value(row, metric) for r in reports]
            defined = [v for v in values if v is not None]
            if not defined:
                stats[(row, metric)] = None
                continue
            if method == "normal":
                mean, sd, lo, hi = _normal_ci(defined)
            else:
                mean, sd, lo, hi = _bootstrap_ci(defined, rng, resamples)
            stats[(row, metric)] = CiStat(mean, sd, lo, hi, len(defined), len(values) - len(defined))
    return CiReport(stats, len(reports), method)


# --- rendering ----------------------------------------------------------------


def fmt(value: float | None) -> str:
    return MISSING if value is None else f"{value:.3f}"


def fmt_ci(stat: CiStat | None) -> str:
    if stat is None:
        return MISSING
    return f"{stat.mean:.3f} [{stat.lo:.3f}–{stat.hi:.3f}]"


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(lines)


def _row_keys(categories: Sequence[PhiCategory] | None) -> list[str]:
    return [OVERALL] + [c.value for c in (categories or DISPLAY_ORDER)]


def render_report(report: EvalReport, categories: Sequence[PhiCategory] | None = None) -> str:
    rows = [[key] + [fmt(report.value(key, m)) for m in METRICS] for key in _row_keys(categories)]
    return _table(["PHI Class", "Precision", "Recall", "F1"], rows)


def render_ci_report(ci: CiReport, categories: Sequence[PhiCategory] | None = None) -> str:
    rows = [[key] + [fmt_ci(ci.get(key, m)) for m in METRICS] for key in _row_keys(categories)]
    return _table(["PHI Class", "Precision", "Recall", "F1"], rows)


@dataclass(frozen=True)
class ComparisonTable:
    """Rows grouped by class, then by system, in insertion order of systems."""

    rows: tuple[tuple[str, str, str, str, str], ...]
    systems: tuple[str, ...] = field(default=())

    def cell(self, row: str, system: str, metric: str) -> str:
        idx = 2 + METRICS.index(metric)
        for r in self.rows:
            if r[0] == row and r[1] == system:
                return r[idx]
        raise KeyError((row, system))

    def render(self) -> str:
        out_rows = []
        prev = None
        for r in self.rows:
            out_rows.append([r[0] if r[0] != prev else ""] + list(r[1:]))
            prev = r[0]
        return _table(["Class", "Model", "Precision", "Recall", "F1"], out_rows)

    def to_dict(self) -> dict[str, Any]:
        return {
            "systems": list(self.systems),
            "rows": [dict(zip(("class", "model", "precision", "recall", "f1"), r)) for r in self.rows],
        }


def compare_systems(
    named_reports: Mapping[str, EvalReport],
    categories: Sequence[PhiCategory] | None = None,
) -> ComparisonTable:
    if not named_reports:
        raise EvaluationError("compare_systems needs at least one system")
    rows = []
    for key in _row_keys(categories):
        for name, report in named_reports.items():
            rows.append((key, name, *(fmt(report.value(key, m)) for m in METRICS)))
    return ComparisonTable(tuple(rows), tuple(named_reports))
