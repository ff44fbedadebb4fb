"""Deterministic synthetic radiology reports with gold PHI spans.

Used to build the bundled desk-scale corpus (``radeid/data/fixture_corpus.jsonl``)
that stands in for private clinical data in the end-to-end experiments. A
small share of mentions is phrased so the default rules miss it, so scoring
on the original corpus is not trivially perfect.
"""

from __future__ import annotations

import random
from importlib import resources
from typing import Mapping, Sequence

from radeid.corpus import AnnotatedReport, Corpus, PhiCategory, PhiSpan, Provenance, load_corpus
from radeid.detection import default_lexicons
from radeid.surrogate import MONTH_ABBRS, MONTH_NAMES

FIXTURE_SEED = 1023
FIXTURE_SIZE = 200

EXAMS = [
    ("XR CHEST 2 VIEWS", "PA and lateral views of the chest were obtained"),
    ("CT CHEST WITHOUT CONTRAST", "Axial images of the chest were acquired without intravenous contrast"),
    ("CT ABDOMEN AND PELVIS WITH CONTRAST", "Helical images of the abdomen and pelvis were obtained after intravenous contrast"),
    ("MRI BRAIN WITHOUT AND WITH CONTRAST", "Multiplanar multisequence images of the brain were obtained before and after gadolinium"),
    ("CT HEAD WITHOUT CONTRAST", "Axial images of the head were obtained without contrast"),
]
INDICATIONS = [
    "shortness of breath", "chest pain", "cough and fever", "abdominal pain", "headache",
    "follow-up of pulmonary nodule", "weight loss", "altered mental status", "trauma", "staging of known malignancy",
]
FINDINGS = [
    "The lungs are clear without focal consolidation.",
    "There is no pleural effusion or pneumothorax.",
    "The cardiomediastinal silhouette is within normal limits.",
    "No acute osseous abnormality is identified.",
    "There is mild bibasilar atelectasis.",
    "A 4 mm nodule in the right upper lobe is unchanged.",
    "The liver is normal in size and attenuation.",
    "The gallbladder is unremarkable without stones.",
    "The pancreas, spleen, and adrenal glands are normal.",
    "The kidneys enhance symmetrically without hydronephrosis.",
    "There is no free fluid or free air in the abdomen.",
    "Scattered colonic diverticula are present without inflammation.",
    "The bladder is decompressed.",
    "There is no acute intracranial hemorrhage or mass effect.",
    "The ventricles and sulci are appropriate for age.",
    "Mild periventricular white matter hypodensities likely reflect chronic small vessel disease.",
    "The visualized paranasal sinuses and mastoid air cells are clear.",
    "No abnormal enhancement is seen after contrast administration.",
    "Degenerative changes are present in the thoracic spine.",
    "The trachea and central airways are patent.",
    "There is a small hiatal hernia.",
    "Coronary artery calcifications are noted.",
    "Lines and tubes are in expected position.",
    "The aorta is normal in caliber.",
    "No suspicious lymphadenopathy is identified.",
    "Postsurgical changes are noted in the right hemithorax.",
    "There is trace fluid in the pelvis, likely physiologic.",
    "Bony structures are intact.",
]
IMPRESSIONS = [
    "No acute cardiopulmonary process.",
    "No acute intracranial abnormality.",
    "No acute abdominal or pelvic process.",
    "Stable examination compared with prior.",
    "Findings as above, recommend clinical correlation.",
    "Interval improvement of previously seen opacity.",
]
OUTSIDE_FACILITIES = ["St. Agnes Clinic", "Northside Imaging", "Hilltop Urgent Care"]


class _Builder:
    def __init__(self):
        self.parts: list[str] = []
        self.spans: list[PhiSpan] = []
        self.length = 0

    def add(self, text: str) -> _Builder:
        self.parts.append(text)
        self.length += len(text)
        return self

    def phi(self, text: str, category: PhiCategory) -> _Builder:
        self.spans.append(PhiSpan(self.length, self.length + len(text), category, Provenance.GOLD))
        return self.add(text)

    def text(self) -> str:
        return "".join(self.parts)


def _date(rng: random.Random) -> str:
    y, m, d = rng.randint(2008, 2024), rng.randint(1, 12), rng.randint(1, 28)
    style = rng.randrange(6)
    if style == 0:
        return f"{m:02d}/{d:02d}/{y}"
    if style == 1:
        return f"{m}/{d}/{y}"
    if style == 2:
        return f"{y}-{m:02d}-{d:02d}"
    if style == 3:
        return f"{MONTH_NAMES[m - 1]} {d}, {y}"
    if style == 4:
        return f"{MONTH_ABBRS[m - 1]} {d}, {y}"
    return f"{d} {MONTH_ABBRS[m - 1]} {y}"


def _digits(rng: random.Random, n: int) -> str:
    return "".join(rng.choice("0123456789") for _ in range(n))


def _phone(rng: random.Random) -> str:
    style = rng.randrange(3)
    a, b, c = f"{rng.randint(200, 989)}", f"{rng.randint(200, 989)}", _digits(rng, 4)
    if style == 0:
        return f"({a}) {b}-{c}"
    if style == 1:
        return f"{a}-{b}-{c}"
    return f"{b}-{c}"


def _person(rng: random.Random, lex: Mapping[str, Sequence[str]]) -> str:
    return f"{rng.choice(lex['first_names'])} {rng.choice(lex['surnames'])}"


def make_report(report_id: str, rng: random.Random, lex: Mapping[str, Sequence[str]]) -> AnnotatedReport:
    C = PhiCategory
    exam, technique = rng.choice(EXAMS)
    b = _Builder()
    b.add(f"EXAM: {exam}\nDATE OF SERVICE: ").phi(_date(rng), C.DATE).add("\n")
    b.add("PATIENT: ").phi(_person(rng, lex), C.PATIENT).add("\n")
    if rng.random() < 0.5:
        b.add("MRN: ").phi(_digits(rng, rng.choice([7, 8, 9])), C.ID).add("\n")
    else:
        prefix = "".join(rng.choice("ABCDEFGHJKLMNPRSTUVWXYZ") for _ in range(rng.choice([2, 3])))
        b.add("MRN: ").phi(f"{prefix}-{_digits(rng, rng.choice([6, 7]))}", C.ID).add("\n")
    b.add("ACCESSION: ").phi(_digits(rng, 8), C.ID).add("\n\n")

    age = str(rng.randint(19, 88))
    sex = rng.choice(["male", "female"])
    b.add("CLINICAL HISTORY: ")
    age_style = rng.randrange(3)
    if age_style == 0:
        b.phi(age, C.AGE).add(f"-year-old {sex} with {rng.choice(INDICATIONS)}.\n")
    elif age_style == 1:
        b.phi(age, C.AGE).add(f" y/o {sex} with {rng.choice(INDICATIONS)}.\n")
    else:
        b.add(f"{rng.choice(INDICATIONS).capitalize()}. Age: ").phi(age, C.AGE).add(".\n")

    b.add(f"TECHNIQUE: {technique} on a ").phi(rng.choice(lex["vendors"]), C.VENDOR)
    b.add(" scanner at ").phi(rng.choice(lex["hospitals"]), C.HOSPITAL).add(".\n")
    b.add("COMPARISON: ")
    if rng.random() < 0.7:
        b.phi(_date(rng), C.DATE).add(".\n")
    else:
        b.add("None.\n")
    if rng.random() < 0.06:
        b.add("Outside films from ").phi(rng.choice(OUTSIDE_FACILITIES), C.HOSPITAL).add(" were reviewed.\n")

    b.add("\nFINDINGS:\n")
    n_findings = rng.randint(60, 90) if rng.random() < 0.1 else rng.randint(4, 12)
    b.add(" ".join(rng.choice(FINDINGS) for _ in range(n_findings))).add("\n\n")
    b.add("IMPRESSION:\n")
    b.add(" ".join(rng.sample(IMPRESSIONS, rng.randint(1, 2)))).add("\n\n")

    if rng.random() < 0.6:
        b.add("Findings were discussed with Dr. ")
        if rng.random() < 0.5:
            b.phi(rng.choice(lex["surnames"]), C.HCW)
        else:
            b.phi(_person(rng, lex), C.HCW)
        b.add(" by telephone at ").phi(_phone(rng), C.PHONE).add(" on ").phi(_date(rng), C.DATE).add(".\n")
    if rng.random() < 0.08:
        b.add("Case reviewed with ").phi(rng.choice(lex["surnames"]), C.HCW).add(" at the workstation.\n")
    if rng.random() < 0.3:
        b.add("Questions may be directed to the reading room at ").phi(_phone(rng), C.PHONE).add(".\n")
    if rng.random() < 0.5:
        b.add("Dictated by: ").phi(_person(rng, lex), C.HCW).add("\n")
    b.add("Electronically signed by ").phi(_person(rng, lex), C.HCW)
    b.add(rng.choice([", MD", ", MD", " MD", ", DO"])).add(" on ").phi(_date(rng), C.DATE).add(".\n")
    b.add(f"Report generated with ").phi(rng.choice(["PowerScribe", "Visage Imaging", "Sectra"]), C.VENDOR).add(".")

    return AnnotatedReport(report_id, b.text(), tuple(b.spans), {"exam": exam, "institution": "synthetic"})


def make_fixture_corpus(n: int = FIXTURE_SIZE, seed: int = FIXTURE_SEED, lexicons=None) -> Corpus:
    rng = random.Random(seed)
    lex = lexicons if lexicons is not None else default_lexicons()
    reports = tuple(make_report(f"synth-{i:04d}", rng, lex) for i in range(n))
    return Corpus(reports, "fixture_corpus")


def bundled_fixture_path():
    return resources.files("radeid.data").joinpath("fixture_corpus.jsonl")


def load_fixture_corpus() -> Corpus:
    with resources.as_file(bundled_fixture_path()) as path:
        return load_corpus(path, name="fixture_corpus")
