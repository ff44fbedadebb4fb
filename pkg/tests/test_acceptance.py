"""Acceptance suite: the nine release criteria, one test each.

Every test prints a single ``ACCEPTANCE <n> PASS|FAIL`` line (visible with
``pytest -v -s`` and in the summary of ``pytest -v``) naming the measured
values. Loops use fixed seeds so a failure reproduces.
"""

from __future__ import annotations

import contextlib
import json
import random
import re
import time
from fractions import Fraction
from pathlib import Path

import pytest

from fakes import spans_as_vendor
from gen import random_corpus, random_spans, random_text
from radeid.cli import PipelineConfig, cmd_experiment2
from radeid.corpus import PHI_CATEGORIES, AnnotatedReport, Corpus, PhiCategory, PhiSpan, Provenance, load_corpus, save_corpus
from radeid.evaluation import MISSING, OVERALL, CiReport, aggregate_runs, compare_systems, evaluate_corpus, fmt_ci, summarize, Counts
from radeid.detection import RuleDetector, detect_corpus
from radeid.fixtures import bundled_fixture_path
from radeid.segmentation import chunk_text, reconstruct_labels, tokenize
from radeid.surrogate import apply_surrogates
from radeid.vendor import VendorSpan, builtin_mappings, evaluate_vendor, get_mapping

C, P = PhiCategory, Provenance
LABELS = (C.O,) + PHI_CATEGORIES
COMPARISON_ROWS = ["Overall", "DATE", "ID", "HCW", "HOSPITAL", "PATIENT", "PHONE", "VENDOR"]

RESULTS: list[str] = []


@contextlib.contextmanager
def criterion(n: int, title: str, request):
    """Run one criterion, then report PASS/FAIL with the details the body appended."""
    details: list[str] = []
    start = time.perf_counter()
    status = "FAIL"
    try:
        yield details
        status = "PASS"
    finally:
        elapsed = time.perf_counter() - start
        line = f"ACCEPTANCE {n} {status}: {title} ({'; '.join(details + [f'{elapsed:.1f}s'])})"
        RESULTS.append(line)
        capman = request.config.pluginmanager.getplugin("capturemanager")
        with capman.global_and_fixture_disabled() if capman else contextlib.nullcontext():
            print("\n" + line)


@pytest.fixture(scope="module", autouse=True)
def _summary(request):
    yield
    reporter = request.config.pluginmanager.getplugin("terminalreporter")
    if reporter is not None:
        reporter.write_sep("=", "acceptance summary")
        for line in RESULTS:
            reporter.write_line(line)


# --- 1: metric oracle ------------------------------------------------------


def oracle_tokens(text: str) -> list[tuple[int, int]]:
    """Tokenizer written out by hand: runs of letters/digits, or any single other non-space character."""
    out, i, n = [], 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch.isalnum():
            j = i
            while j < n and text[j].isalnum():
                j += 1
            out.append((i, j))
            i = j
        else:
            out.append((i, i + 1))
            i += 1
    return out


def spans_from_token_labels(rng, text, toks, labels, provenance):
    """Encode per-token labels as spans (runs of one label; ends may spill into trailing whitespace)."""
    spans, i = [], 0
    while i < len(toks):
        if labels[i] is C.O:
            i += 1
            continue
        j = i
        while j + 1 < len(toks) and labels[j + 1] is labels[i]:
            j += 1
        start, end = toks[i][0], toks[j][1]
        limit = toks[j + 1][0] if j + 1 < len(toks) else len(text)
        end = rng.randint(end, limit) if rng.random() < 0.3 else end
        spans.append(PhiSpan(start, end, labels[i], provenance))
        i = j + 1
    return spans


def test_1_metric_oracle(request):
    with criterion(1, "evaluate_corpus equals brute-force token enumeration on 1,000 random corpora", request) as details:
        rng = random.Random(20240101)
        t0 = time.perf_counter()
        mismatches = 0
        for _ in range(1000):
            gold_reports, pred_reports = [], []
            tally = {c: [0, 0, 0] for c in PHI_CATEGORIES}
            for r in range(rng.randint(0, 10)):
                text = random_text(rng, 12)
                toks = oracle_tokens(text)[:20]
                text = text[: toks[-1][1]] if toks else text
                gold = [rng.choice(LABELS) for _ in toks]
                pred = [g if rng.random() < 0.5 else rng.choice(LABELS) for g in gold]
                for g, p in zip(gold, pred):
                    if g is p and g is not C.O:
                        tally[g][0] += 1
                    elif g is not p:
                        if p is not C.O:
                            tally[p][1] += 1
                        if g is not C.O:
                            tally[g][2] += 1
                rid = f"r{r}"
                gold_reports.append(AnnotatedReport(rid, text, tuple(spans_from_token_labels(rng, text, toks, gold, P.GOLD))))
                pred_reports.append(AnnotatedReport(rid, text, tuple(spans_from_token_labels(rng, text, toks, pred, P.PREDICTED))))
            report = evaluate_corpus(Corpus(tuple(gold_reports)), Corpus(tuple(reversed(pred_reports))))
            rows = {c: tally[c] for c in PHI_CATEGORIES}
            rows[OVERALL] = [sum(t[i] for t in tally.values()) for i in range(3)]
            for key, (tp, fp, fn) in rows.items():
                row = report.row(key)
                expected = {
                    "precision": float(Fraction(tp, tp + fp)) if tp + fp else None,
                    "recall": float(Fraction(tp, tp + fn)) if tp + fn else None,
                }
                p, r = Fraction(tp, tp + fp) if tp + fp else None, Fraction(tp, tp + fn) if tp + fn else None
                expected["f1"] = None if p is None or r is None else (float(2 * p * r / (p + r)) if p + r else 0.0)
                if (row.tp, row.fp, row.fn) != (tp, fp, fn) or any(row.metric(m) != v for m, v in expected.items()):
                    mismatches += 1
        elapsed = time.perf_counter() - t0
        details += [f"mismatches={mismatches}"]
        assert mismatches == 0
        assert elapsed < 10


# --- 2: chunk / reconstruct -----------------------------------------------


def random_document(rng: random.Random) -> str:
    sentences = []
    for _ in range(rng.randint(0, 30)):
        words = [rng.choice(["lung", "clear", "3.5", "cm", "Dr", "St", "x_y", "No", "acute", "(650)", "José", "𝔘"]) for _ in range(rng.randint(1, 25))]
        sentences.append(" ".join(words) + rng.choice([".", "?", "!", "", ":", "."]))
        sentences.append(rng.choice([" ", " ", "\n", "\n\n", "  ", "\t"]))
    return "".join(sentences)


def label_fn(text: str, start: int, end: int) -> PhiCategory:
    """An arbitrary but fixed per-token labeling, keyed on the token and its document offset."""
    return LABELS[(hash(text[start:end]) + 7 * start) % len(LABELS)]


def ends_sentence(text: str, char_end: int, next_start: int | None) -> bool:
    if next_start is None:
        return True
    if "\n" in text[char_end:next_start]:
        return True
    return text[char_end - 1] in ".!?" and text[char_end].isspace()


def test_2_chunk_reconstruct_identity(request):
    with criterion(2, "chunked-then-reconstructed labels equal unchunked labels on 500 random reports", request) as details:
        rng = random.Random(77)
        t0 = time.perf_counter()
        chunks_seen = hard = 0
        for _ in range(500):
            text = random_document(rng)
            max_len = rng.choice([1, 2, 5, 8, 16, 32, 64, 512])
            tokens, chunks = chunk_text(text, max_len)
            unchunked = [label_fn(text, t.start, t.end) for t in tokens]
            per_chunk = []
            for ch in chunks:
                # the chunk sees only its own slice of text and shifts back by char_start
                local = text[ch.char_start : ch.char_end]
                local_tokens = tokenize(local)
                assert len(local_tokens) == len(ch)
                per_chunk.append([label_fn(text, ch.char_start + t.start, ch.char_start + t.end) for t in local_tokens])
            assert reconstruct_labels(chunks, per_chunk) == unchunked
            for i, ch in enumerate(chunks):
                assert 0 < len(ch) <= max_len
                next_start = chunks[i + 1].char_start if i + 1 < len(chunks) else None
                if ch.hard_split:
                    hard += 1
                else:
                    assert ends_sentence(text, ch.char_end, next_start), (text, ch)
            chunks_seen += len(chunks)
        elapsed = time.perf_counter() - t0
        details += [f"chunks={chunks_seen}", f"hard_splits={hard}"]
        assert elapsed < 10


# --- 3: surrogate offsets ----------------------------------------------------


def test_3_surrogate_offset_integrity(request):
    with criterion(3, "SYNTHETIC spans slice to their surrogates and non-PHI residue is preserved, 500 triples", request) as details:
        rng = random.Random(99)
        t0 = time.perf_counter()
        n_spans = 0
        for i in range(500):
            text = random_text(rng, 30)
            spans = random_spans(rng, text, P.PREDICTED, 8)
            seed = rng.getrandbits(64)
            res = apply_surrogates(AnnotatedReport(f"t{i}", text, tuple(spans)), spans, seed)
            pos_in = pos_out = 0
            assert len(res.spans) == len(spans) == len(res.replacements)
            for orig, syn, rep in zip(spans, res.spans, res.replacements):
                assert res.text[syn.start : syn.end] == rep.surrogate
                assert (syn.start, syn.end) == (rep.start, rep.end)
                assert res.text[pos_out : syn.start] == text[pos_in : orig.start]
                pos_in, pos_out = orig.end, syn.end
            assert res.text[pos_out:] == text[pos_in:]
            n_spans += len(spans)
        elapsed = time.perf_counter() - t0
        details += [f"spans={n_spans}"]
        assert elapsed < 10


# --- 4 and 7: experiment 2 ----------------------------------------------------


@pytest.fixture(scope="module")
def experiment2_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp2") / "seed42_a"
    with contextlib.redirect_stdout(None):
        t0 = time.perf_counter()
        status = cmd_experiment2(PipelineConfig(seed=42, runs=50, out_dir=str(out)), str(bundled_fixture_path()))
        elapsed = time.perf_counter() - t0
    return out, status, elapsed


def test_4_experiment2_analogue(request, experiment2_run):
    with criterion(4, "50 regenerations of the bundled corpus: overall F1 >= 0.99, 95% CI half-width <= 0.005", request) as details:
        out, status, elapsed = experiment2_run
        assert status == 0
        ci = json.loads((out / "ci.json").read_text())
        f1 = ci["rows"]["Overall"]["f1"]
        half = (f1["hi"] - f1["lo"]) / 2
        table = (out / "table.txt").read_text()
        overall_line = next(l for l in table.splitlines() if l.startswith("Overall"))
        cells = re.findall(r"\d\.\d{3} \[\d\.\d{3}–\d\.\d{3}\]", overall_line)
        details += [f"F1 {cells[-1] if cells else '?'}", f"half-width={half:.4f}", f"runs={ci['runs']}", f"pipeline {elapsed:.1f}s"]
        assert ci["runs"] == 50 and len(list(out.glob("runs/run_*/eval.json"))) == 50
        assert f1["mean"] >= 0.99
        assert half <= 0.005
        assert len(cells) == 3
        assert elapsed < 60


def tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_7_determinism(request, experiment2_run, tmp_path):
    with criterion(7, "two cmd_experiment2 executions with seed 42 give byte-identical output trees", request) as details:
        first, _, _ = experiment2_run
        second = tmp_path / "seed42_b"
        with contextlib.redirect_stdout(None):
            assert cmd_experiment2(PipelineConfig(seed=42, runs=50, out_dir=str(second)), str(bundled_fixture_path())) == 0
        a, b = tree(first), tree(second)
        differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
        details += [f"files={len(a)}", f"differing={len(differing)}"]
        assert a and not differing


# --- 5 and 6: vendor harmonization -------------------------------------------

REFERENCE_MAPPING = {
    # category: (GCP, AWS, Azure)
    "DATE": ("DATE", "DATE", "Date"),
    "ID": ("GENERIC_ID", "ID", "MedicalRecord / IDNum"),
    "PHONE": ("PHONE_NUMBER", "PHONE_OR_FAX", "Phone"),
    "PATIENT": ("PERSON_NAME", "NAME", "Patient"),
    "HCW": ("PERSON_NAME", "NAME", "Doctor"),
    "HOSPITAL": ("LOCATION", "ADDRESS", "Hospital"),
    "VENDOR": ("ORGANIZATION_NAME", "--", "Organization"),
}


def noisy_vendor(corpus: Corpus, vendor: str, seed: int) -> dict[str, list[VendorSpan]]:
    """Simulated vendor output: echoes mapped synthetic spans but misses some and adds stray ones."""
    rng = random.Random(seed)
    mapping = get_mapping(vendor)
    labels = sorted(mapping.labels)
    out = {}
    for r in corpus:
        spans = [VendorSpan(s, e, l) for s, e, l in spans_as_vendor(r.spans_of(P.SYNTHETIC), mapping) if rng.random() < 0.8]
        toks = tokenize(r.text)
        for _ in range(2):
            t = toks[rng.randrange(len(toks))]
            spans.append(VendorSpan(t.start, t.end, rng.choice(labels)))
        out[r.id] = spans
    return out


@pytest.fixture(scope="module")
def first_synthetic_set(experiment2_run):
    out, _, _ = experiment2_run
    return load_corpus(out / "runs" / "run_000" / "deid.jsonl")


def test_5_table2_fidelity(request, first_synthetic_set):
    with criterion(5, "built-in mappings reproduce every reference mapping cell; '--' appears only at AWS/VENDOR", request) as details:
        mappings = {m.vendor: m for m in builtin_mappings()}
        cells = 0
        for category, row in REFERENCE_MAPPING.items():
            for vendor, expected in zip(("gcp", "aws", "azure"), row):
                got = " / ".join(mappings[vendor].sources_for(C(category))) or "--"
                assert got == expected, (category, vendor, got)
                cells += 1
        deid = first_synthetic_set
        redetected = detect_corpus(deid, RuleDetector())
        systems = {"Our Model": evaluate_corpus(redetected, redetected, P.SYNTHETIC, P.PREDICTED)}
        for i, (vendor, name) in enumerate((("gcp", "GCP"), ("aws", "AWS"), ("azure", "Azure"))):
            systems[name] = evaluate_vendor(deid, noisy_vendor(deid, vendor, i), get_mapping(vendor))
        table = compare_systems(systems, [C(r) for r in COMPARISON_ROWS[1:]])
        dashes = {(row, system) for row, system, *vals in table.rows if MISSING in vals}
        details += [f"mapping_cells={cells}", f"dash_rows={sorted(dashes)}"]
        assert dashes == {("VENDOR", "AWS")}
        assert all(v == MISSING for row, system, *vals in table.rows if (row, system) == ("VENDOR", "AWS") for v in vals)


def test_6_dual_mapping(request, first_synthetic_set):
    with criterion(6, "a PERSON_NAME-only vendor yields identical PATIENT and HCW rows", request) as details:
        deid = first_synthetic_set
        rng = random.Random(6)
        outputs = {}
        for r in deid:
            names = [s for s in r.spans_of(P.SYNTHETIC) if s.category in (C.PATIENT, C.HCW) and rng.random() < 0.7]
            spans = [VendorSpan(s.start, s.end, "PERSON_NAME") for s in names]
            t = tokenize(r.text)[rng.randrange(len(tokenize(r.text)))]
            spans.append(VendorSpan(t.start, t.end, "PERSON_NAME"))
            outputs[r.id] = spans
        report = evaluate_vendor(deid, outputs, get_mapping("gcp"))
        table = compare_systems({"GCP": report})
        patient = [table.cell("PATIENT", "GCP", m) for m in ("precision", "recall", "f1")]
        hcw = [table.cell("HCW", "GCP", m) for m in ("precision", "recall", "f1")]
        details += [f"PATIENT={'/'.join(patient)}", f"HCW={'/'.join(hcw)}"]
        assert report.row(C.PATIENT) == report.row(C.HCW)
        assert patient == hcw and MISSING not in patient
        for c in (C.DATE, C.ID, C.PHONE, C.HOSPITAL, C.VENDOR):
            assert report.value(c, "recall") == 0.0


# --- 8: CI arithmetic ------------------------------------------------------------


def test_8_ci_arithmetic(request):
    with criterion(8, "aggregate_runs on F1 [0.95, 0.96, 0.97] gives 0.96 [0.9487, 0.9713]", request) as details:
        reports = [summarize({C.DATE: Counts(tp, 1000 - tp, 1000 - tp)}) for tp in (950, 960, 970)]
        ci: CiReport = aggregate_runs(reports)
        stat = ci.get(OVERALL, "f1")
        details += [f"mean={stat.mean:.6f}", f"CI=[{stat.lo:.6f}, {stat.hi:.6f}]", fmt_ci(stat)]
        assert abs(stat.mean - 0.96) <= 1e-4
        assert abs(stat.lo - 0.9487) <= 1e-4 and abs(stat.hi - 0.9713) <= 1e-4


# --- 9: corpus round trip ------------------------------------------------------------


def test_9_corpus_round_trip(request, tmp_path):
    with criterion(9, "load(save(c)) == c on 1,000 random valid corpora", request) as details:
        rng = random.Random(9)
        path = tmp_path / "c.jsonl"
        failures = spans = 0
        for i in range(1000):
            corpus = random_corpus(rng, 10, (P.GOLD, P.PREDICTED, P.SYNTHETIC, P.VENDOR))
            # random ids may collide; keep the first of each
            seen, reports = set(), []
            for r in corpus:
                if r.id not in seen:
                    seen.add(r.id)
                    reports.append(r)
            corpus = Corpus(tuple(reports), "c")
            save_corpus(corpus, path)
            if load_corpus(path) != corpus:
                failures += 1
            spans += sum(len(r.spans) for r in corpus)
        details += [f"failures={failures}", f"spans={spans}"]
        assert failures == 0
