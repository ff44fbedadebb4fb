from __future__ import annotations

import pytest

from radeid.corpus import AnnotatedReport, Corpus, PhiCategory, PhiSpan, Provenance


@pytest.fixture(scope="session")
def fixture_corpus():
    from radeid.fixtures import load_fixture_corpus

    return load_fixture_corpus()


@pytest.fixture
def small_corpus() -> Corpus:
    C, P = PhiCategory, Provenance
    return Corpus(
        (
            AnnotatedReport(
                "r1",
                "Seen on 01/23/2019 by Dr. Smith. Call 555-1234.",
                (PhiSpan(8, 18, C.DATE, P.GOLD), PhiSpan(26, 31, C.HCW, P.GOLD), PhiSpan(38, 46, C.PHONE, P.GOLD)),
            ),
            AnnotatedReport("r2", "Normal exam.", ()),
        ),
        "small",
    )
