"""Command-line entry point: ``radeid <command> ...``.

Commands:
    detect       attach PREDICTED spans to a corpus
    deid         detect once, then write ``--runs`` surrogated corpora plus audit files
    evaluate     score one provenance against another (gold vs predicted)
    experiment2  detect, regenerate ``--runs`` times, re-detect and aggregate with 95% CIs
    vendor-eval  score recorded vendor responses on a de-identified corpus
    count        token counts per PHI class
    make-fixture write the synthetic fixture corpus

Settings come from ``--config FILE`` (JSON) and can be overridden per flag.
Tables go to stdout, JSON reports to ``--out-dir``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Sequence

from radeid.corpus import PHI_CATEGORIES, Corpus, PhiCategory, Provenance, count_tokens_by_class, load_corpus, save_corpus
from radeid.detection import (
    RemoteDetector,
    RemoteEndpoint,
    RuleDetector,
    default_lexicons,
    default_ruleset,
    detect_corpus,
    load_lexicons,
    load_ruleset,
    predicted_category_counts,
)
from radeid.evaluation import (
    aggregate_runs,
    compare_systems,
    evaluate_corpus,
    render_ci_report,
    render_report,
)
from radeid.segmentation import DEFAULT_MAX_LEN
from radeid.surrogate import run_seed, surrogate_corpus
from radeid.vendor import evaluate_vendor, get_mapping, load_fixture_dir, parse_fixtures

logger = logging.getLogger("radeid")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    max_len: int = DEFAULT_MAX_LEN
    seed: int = 0
    runs: int = 50
    detector: str = "rules:default"
    lexicons: tuple[str, ...] = ()
    ci_method: str = "normal"
    out_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.max_len < 1:
            raise ConfigError("max_len must be >= 1")
        if self.ci_method not in ("normal", "bootstrap"):
            raise ConfigError(f"ci_method must be 'normal' or 'bootstrap', got {self.ci_method!r}")
        kind, _, target = self.detector.partition(":")
        if kind not in ("rules", "remote") or not target:
            raise ConfigError(f"detector must be 'rules:PATH' or 'remote:URL', got {self.detector!r}")

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> PipelineConfig:
        obj = dict(obj)
        det = obj.get("detector")
        if isinstance(det, dict):
            if len(det) != 1 or next(iter(det)) not in ("rules", "remote"):
                raise ConfigError("detector must have exactly one of 'rules' or 'remote'")
            (kind, target), = det.items()
            obj["detector"] = f"{kind}:{target}"
        if "lexicons" in obj:
            obj["lexicons"] = tuple(obj["lexicons"])
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path: str | Path) -> PipelineConfig:
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def merged_lexicons(self) -> dict[str, list[str]]:
        lex = default_lexicons()
        for p in self.lexicons:
            lex.update(load_lexicons(p))
        return lex

    def build_detector(self):
        kind, _, target = self.detector.partition(":")
        if kind == "remote":
            return RemoteDetector(RemoteEndpoint(target))
        if target == "default":
            return RuleDetector(default_ruleset(self.merged_lexicons()), name="rules")
        return RuleDetector(load_ruleset(target, self.merged_lexicons()), name=f"rules:{Path(target).name}")


# --- helpers ------------------------------------------------------------------


def _write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _write_jsonl(path: Path, records: Sequence[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n")


def _require_out_dir(config: PipelineConfig) -> Path:
    if not config.out_dir:
        raise ConfigError("an output directory is required (--out-dir or 'out_dir' in the config)")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(path: str) -> Corpus:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"input file not found: {p}")
    return load_corpus(p)


# --- commands -----------------------------------------------------------------


def cmd_detect(config: PipelineConfig, in_path: str, out_path: str) -> int:
    corpus = _load(in_path)
    detected = detect_corpus(corpus, config.build_detector(), config.max_len, workers=config.workers)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    save_corpus(detected, out_path)
    counts = predicted_category_counts(detected)
    print(f"{len(detected)} reports, {sum(counts.values())} PREDICTED spans")
    for c in PHI_CATEGORIES:
        print(f"  {c.value:<9} {counts[c]}")
    return 0


def cmd_deid(config: PipelineConfig, in_path: str) -> int:
    out = _require_out_dir(config)
    corpus = _load(in_path)
    lex = config.merged_lexicons()
    detected = detect_corpus(corpus, config.build_detector(), config.max_len, workers=config.workers)
    save_corpus(detected, out / "predicted.jsonl")
    for k in range(config.runs):
        deid, audit = surrogate_corpus(detected, run_seed(config.seed, k), lexicons=lex)
        save_corpus(deid, out / f"deid_run_{k:03d}.jsonl")
        _write_jsonl(out / f"audit_run_{k:03d}.jsonl", audit)
    print(f"wrote {config.runs} de-identified corpora of {len(corpus)} reports to {out}")
    return 0


def cmd_evaluate(config: PipelineConfig, gold_path: str, pred_path: str | None, gold_prov: str, pred_prov: str) -> int:
    gold = _load(gold_path)
    pred = _load(pred_path) if pred_path else gold
    report = evaluate_corpus(gold, pred, gold_prov, pred_prov)
    print(render_report(report))
    if config.out_dir:
        _write_json(Path(config.out_dir) / "eval.json", report.to_dict())
    return 0


def cmd_experiment2(config: PipelineConfig, in_path: str) -> int:
    """Detect once, surrogate ``runs`` times, re-detect each copy and score it against its synthetic labels."""
    out = _require_out_dir(config)
    corpus = _load(in_path)
    detector = config.build_detector()
    lex = config.merged_lexicons()
    detected = detect_corpus(corpus, detector, config.max_len, workers=config.workers)
    save_corpus(detected, out / "predicted.jsonl")
    reports = []
    for k in range(config.runs):
        run_dir = out / "runs" / f"run_{k:03d}"
        run_dir.mkdir(parents=True, exist_ok=True)
        deid, audit = surrogate_corpus(detected, run_seed(config.seed, k), lexicons=lex)
        save_corpus(deid, run_dir / "deid.jsonl")
        _write_jsonl(run_dir / "audit.jsonl", audit)
        redetected = detect_corpus(deid, detector, config.max_len, workers=config.workers)
        report = evaluate_corpus(redetected, redetected, Provenance.SYNTHETIC, Provenance.PREDICTED)
        _write_json(run_dir / "eval.json", report.to_dict())
        reports.append(report)
    ci = aggregate_runs(reports, method=config.ci_method, seed=config.seed)
    _write_json(out / "ci.json", ci.to_dict())
    table = render_ci_report(ci)
    (out / "table.txt").write_text(table + "\n", encoding="utf-8")
    print(f"{config.runs} de-identified versions of {len(corpus)} reports (95% CI, {config.ci_method})")
    print(table)
    return 0


def cmd_vendor_eval(config: PipelineConfig, deid_path: str, fixture_dirs: Sequence[str], include_model: bool = True) -> int:
    deid = _load(deid_path)
    systems = {}
    if include_model:
        redetected = detect_corpus(deid, config.build_detector(), config.max_len, workers=config.workers)
        systems["Our Model"] = evaluate_corpus(redetected, redetected, Provenance.SYNTHETIC, Provenance.PREDICTED)
    for d in fixture_dirs:
        fixtures = load_fixture_dir(d)
        spans = parse_fixtures(fixtures, deid)
        name = {"gcp": "GCP", "aws": "AWS", "azure": "Azure"}[fixtures.vendor]
        systems[name] = evaluate_vendor(deid, spans, get_mapping(fixtures.vendor))
    table = compare_systems(systems)
    print(table.render())
    if config.out_dir:
        _write_json(Path(config.out_dir) / "vendor_comparison.json", table.to_dict())
    return 0


def cmd_count(in_path: str, provenance: str) -> int:
    counts = count_tokens_by_class(_load(in_path), provenance)
    phi = sum(n for c, n in counts.items() if c.is_phi)
    print(f"Total PHI tokens      {phi}")
    print(f"Total non-PHI tokens  {counts[PhiCategory.O]}")
    for c in PHI_CATEGORIES:
        print(f"  {c.value:<9} {counts[c]}")
    return 0


def cmd_make_fixture(out_path: str, n: int, seed: int) -> int:
    from radeid.fixtures import make_fixture_corpus

    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    save_corpus(make_fixture_corpus(n, seed), out_path)
    print(f"wrote {n} synthetic reports to {out_path}")
    return 0


# --- argument parsing ---------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--max-len", type=int, dest="max_len")
    p.add_argument("--detector", help="rules:PATH, rules:default or remote:URL")
    p.add_argument("--lexicons", action="append", help="extra lexicon JSON file (repeatable)")
    p.add_argument("--ci-method", choices=["normal", "bootstrap"], dest="ci_method")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radeid", description="Radiology report de-identification toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="attach PREDICTED spans")
    _add_common(p)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", dest="out_path", required=True)

    p = sub.add_parser("deid", help="write surrogated corpora")
    _add_common(p)
    p.add_argument("--in", dest="in_path", required=True)

    p = sub.add_parser("evaluate", help="token-level P/R/F1")
    _add_common(p)
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", help="corpus holding predictions (default: the gold file)")
    p.add_argument("--gold-provenance", default="GOLD", choices=[x.value for x in Provenance])
    p.add_argument("--pred-provenance", default="PREDICTED", choices=[x.value for x in Provenance])

    p = sub.add_parser("experiment2", help="synthetic regeneration stability with 95%% CIs")
    _add_common(p)
    p.add_argument("--in", dest="in_path", required=True)

    p = sub.add_parser("vendor-eval", help="compare recorded vendor outputs")
    _add_common(p)
    p.add_argument("--deid", required=True, help="de-identified corpus with SYNTHETIC spans")
    p.add_argument("--fixtures", nargs="+", required=True, help="vendor fixture directories")
    p.add_argument("--no-model", action="store_true", help="omit the configured detector's row")

    p = sub.add_parser("count", help="token counts per PHI class")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--provenance", default="GOLD", choices=[x.value for x in Provenance])

    p = sub.add_parser("make-fixture", help="write the synthetic fixture corpus")
    p.add_argument("--out", dest="out_path", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=1023)
    return parser


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    overrides = {}
    for key in ("seed", "runs", "max_len", "detector", "ci_method", "out_dir", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "lexicons", None):
        overrides["lexicons"] = tuple(args.lexicons)
    return replace(config, **overrides) if overrides else config


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "count":
            return cmd_count(args.in_path, args.provenance)
        if args.command == "make-fixture":
            return cmd_make_fixture(args.out_path, args.n, args.seed)
        config = config_from_args(args)
        if args.command == "detect":
            return cmd_detect(config, args.in_path, args.out_path)
        if args.command == "deid":
            return cmd_deid(config, args.in_path)
        if args.command == "evaluate":
            return cmd_evaluate(config, args.gold, args.pred, args.gold_provenance, args.pred_provenance)
        if args.command == "experiment2":
            return cmd_experiment2(config, args.in_path)
        if args.command == "vendor-eval":
            return cmd_vendor_eval(config, args.deid, args.fixtures, include_model=not args.no_model)
    except Exception as exc:  # every pipeline failure becomes a message and a nonzero exit
        if args.verbose:
            logger.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return 1
    parser.error(f"unknown command {args.command}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
