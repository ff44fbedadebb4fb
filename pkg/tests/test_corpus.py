from __future__ import annotations

import json

import pytest
from hypothesis import given, settings

from gen import st_corpus
from radeid.corpus import (
    AnnotatedReport,
    Corpus,
    CorpusError,
    PhiCategory,
    PhiSpan,
    Provenance,
    count_tokens_by_class,
    load_corpus,
    report_from_dict,
    save_corpus,
    validate_report,
)

C, P = PhiCategory, Provenance


def write_lines(path, *objs):
    path.write_text("".join(json.dumps(o) + "\n" for o in objs), encoding="utf-8")
    return path


class TestLoad:
    def test_one_report_without_spans(self, tmp_path):
        path = write_lines(tmp_path / "c.jsonl", {"id": "r1", "text": "Normal exam.", "spans": []})
        corpus = load_corpus(path)
        assert len(corpus) == 1
        assert corpus.reports[0].spans == ()
        assert corpus.name == "c"

    def test_inverted_range_names_report_and_violation(self, tmp_path):
        path = write_lines(
            tmp_path / "c.jsonl",
            {"id": "ok", "text": "abcdefgh", "spans": []},
            {"id": "bad-7", "text": "abcdefgh", "spans": [{"start": 5, "end": 3, "category": "DATE"}]},
        )
        with pytest.raises(CorpusError) as err:
            load_corpus(path)
        assert "bad-7" in str(err.value)
        assert "start < end" in str(err.value)
        assert err.value.line == 2

    def test_malformed_json_reports_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id": "a", "text": ""}\n{not json\n', encoding="utf-8")
        with pytest.raises(CorpusError, match="line 2"):
            load_corpus(path)

    def test_duplicate_id(self, tmp_path):
        path = write_lines(tmp_path / "c.jsonl", {"id": "a", "text": "x"}, {"id": "a", "text": "y"})
        with pytest.raises(CorpusError, match="duplicate"):
            load_corpus(path)

    @pytest.mark.parametrize(
        "obj, fragment",
        [
            ({"text": "x"}, "id"),
            ({"id": "a"}, "text"),
            ({"id": "a", "text": "x", "spans": {}}, "spans"),
            ({"id": "a", "text": "xyz", "spans": [{"start": 0, "end": 1, "category": "NAME"}]}, "NAME"),
            ({"id": "a", "text": "xyz", "spans": [{"start": "0", "end": 1, "category": "DATE"}]}, "integer"),
            ({"id": "a", "text": "xyz", "spans": [{"start": 0, "end": 1, "category": "DATE", "provenance": "X"}]}, "X"),
        ],
    )
    def test_shape_errors(self, tmp_path, obj, fragment):
        with pytest.raises(CorpusError, match=fragment):
            load_corpus(write_lines(tmp_path / "c.jsonl", obj))

    def test_missing_provenance_defaults_to_gold(self):
        r = report_from_dict({"id": "a", "text": "abc", "spans": [{"start": 0, "end": 1, "category": "ID"}]})
        assert r.spans[0].provenance is P.GOLD

    def test_overlap_across_provenances_is_allowed(self, tmp_path):
        path = write_lines(
            tmp_path / "c.jsonl",
            {"id": "a", "text": "abcdefgh", "spans": [
                {"start": 0, "end": 4, "category": "DATE", "provenance": "GOLD"},
                {"start": 2, "end": 6, "category": "ID", "provenance": "PREDICTED"},
            ]},
        )
        assert len(load_corpus(path).reports[0].spans) == 2

    def test_non_ascii_text(self, tmp_path):
        text = "Pt José 𝔘 seen"
        report = AnnotatedReport("u", text, (PhiSpan(3, 7, C.PATIENT),))
        save_corpus(Corpus((report,), "u"), tmp_path / "u.jsonl")
        back = load_corpus(tmp_path / "u.jsonl")
        assert back.reports[0].span_text(back.reports[0].spans[0]) == "José"


class TestSave:
    def test_empty_corpus_is_zero_bytes(self, tmp_path):
        save_corpus(Corpus((), "e"), tmp_path / "e.jsonl")
        assert (tmp_path / "e.jsonl").read_bytes() == b""

    def test_unsorted_spans_are_written_sorted(self, tmp_path):
        spans = (PhiSpan(10, 12, C.ID), PhiSpan(0, 3, C.DATE), PhiSpan(5, 7, C.AGE))
        save_corpus(Corpus((AnnotatedReport("a", "x" * 20, spans),)), tmp_path / "s.jsonl")
        written = json.loads((tmp_path / "s.jsonl").read_text())["spans"]
        starts = [s["start"] for s in written]
        assert starts == sorted(starts) == [0, 5, 10]

    @settings(max_examples=60, deadline=None)
    @given(st_corpus(provenances=(P.GOLD, P.PREDICTED)))
    def test_round_trip(self, tmp_path_factory, corpus):
        path = tmp_path_factory.mktemp("rt") / "c.jsonl"
        save_corpus(corpus, path)
        assert load_corpus(path, name=corpus.name) == corpus

    @settings(max_examples=30, deadline=None)
    @given(st_corpus())
    def test_save_is_byte_stable(self, tmp_path_factory, corpus):
        d = tmp_path_factory.mktemp("bs")
        save_corpus(corpus, d / "a.jsonl")
        save_corpus(load_corpus(d / "a.jsonl"), d / "b.jsonl")
        assert (d / "a.jsonl").read_bytes() == (d / "b.jsonl").read_bytes()


class TestValidate:
    def test_no_spans(self):
        assert validate_report(AnnotatedReport("a", "text")) == []

    def test_overlap_same_provenance(self):
        r = AnnotatedReport("a", "0123456789", (PhiSpan(0, 4, C.DATE), PhiSpan(3, 8, C.ID)))
        problems = validate_report(r)
        assert len(problems) == 1 and "overlap" in problems[0]

    def test_out_of_bounds(self):
        problems = validate_report(AnnotatedReport("a", "x" * 20, (PhiSpan(10, 50, C.DATE),)))
        assert len(problems) == 1 and "out of bounds" in problems[0]

    def test_o_is_not_a_span_category(self):
        assert validate_report(AnnotatedReport("a", "abc", (PhiSpan(0, 1, C.O),)))

    def test_nested_overlap_detected_after_long_span(self):
        r = AnnotatedReport("a", "x" * 30, (PhiSpan(0, 20, C.DATE), PhiSpan(5, 6, C.ID), PhiSpan(10, 12, C.AGE)))
        assert len(validate_report(r)) == 2


class TestReportHelpers:
    def test_with_spans_replacing(self):
        r = AnnotatedReport("a", "abcdef", (PhiSpan(0, 1, C.ID, P.GOLD), PhiSpan(2, 3, C.ID, P.PREDICTED)))
        r2 = r.with_spans([PhiSpan(4, 5, C.AGE, P.PREDICTED)], replacing=P.PREDICTED)
        assert [s.start for s in r2.spans_of(P.PREDICTED)] == [4]
        assert r2.spans_of(P.GOLD) == r.spans_of(P.GOLD)

    def test_span_coerces_strings(self):
        s = PhiSpan(0, 1, "DATE", "SYNTHETIC")
        assert s.category is C.DATE and s.provenance is P.SYNTHETIC


class TestCountTokens:
    def test_dr_lee(self):
        text = "See Dr. Lee"
        # tokens: See, Dr, ., Lee
        corpus = Corpus((AnnotatedReport("a", text, (PhiSpan(8, 11, C.HCW),)),))
        counts = count_tokens_by_class(corpus)
        assert counts[C.HCW] == 1
        assert counts[C.O] == 3
        assert sum(counts.values()) == 4

    def test_empty_corpus(self):
        counts = count_tokens_by_class(Corpus(()))
        assert set(counts) == set(PhiCategory)
        assert all(v == 0 for v in counts.values())

    def test_counts_selected_provenance_only(self, small_corpus):
        assert count_tokens_by_class(small_corpus, P.PREDICTED)[C.DATE] == 0
        gold = count_tokens_by_class(small_corpus, P.GOLD)
        assert gold[C.DATE] == 5 and gold[C.PHONE] == 3 and gold[C.HCW] == 1


def test_unique_is_read_as_id(tmp_path):
    path = tmp_path / "u.jsonl"
    path.write_text('{"id": "u1", "text": "MRN 12345", "spans": [{"start": 4, "end": 9, "category": "UNIQUE"}]}\n')
    (report,) = load_corpus(path)
    assert report.spans[0].category is PhiCategory.ID
    save_corpus(Corpus((report,)), path)
    assert '"ID"' in path.read_text() and "UNIQUE" not in path.read_text()
