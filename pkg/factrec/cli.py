"""
Command-line interface.

    factrec [--config run.json] [--parallelism N] [--backend-stub] [--seed N] [-v|-q] <command> ...

Exit codes: 0 success, 1 configuration error, 2 input error, 3 backend
error, 4 internal invariant violation.
"""

import argparse
import json
import logging
import sys
from itertools import islice
from pathlib import Path
from typing import Callable, Optional, Sequence

from factrec import __version__
from factrec.config import RunConfig, load_domain_config, load_run_config, save_domain_config
from factrec.datasets import (
    compute_stats,
    ingest_reviews,
    read_benchmark,
    read_external_scores,
    read_generated,
    read_metric_records,
    split_corpus,
    write_benchmark,
    write_metric_records,
)
from factrec.exceptions import (
    BackendError,
    ConfigError,
    ElicitationIncomplete,
    FactrecError,
    InputError,
)
from factrec.extractor import elicit_topics
from factrec.models import DomainConfig
from factrec.pipeline import METRIC_ORDER, Evaluator, build_backends, extract_corpus, recompose
from factrec.report import aggregate, render_markdown, write_report

logger = logging.getLogger("factrec")

SPLIT_NAMES = ("train", "valid", "test")
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def _require(path: Optional[str], what: str) -> Path:
    if path is None or not Path(path).exists():
        raise ConfigError(f"{what} {path} does not exist")
    return Path(path)


def _summary_path(benchmark: Path) -> Path:
    return benchmark.with_name(benchmark.stem + ".summary.json")


def _write_json(path: Path, data: object) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_topics(args: argparse.Namespace, cfg: RunConfig) -> int:
    reviews = ingest_reviews(_require(args.reviews, "review file"), cfg.min_review_chars)
    samples = [i.review_text for i in islice(reviews, args.sample)]
    if not samples:
        raise InputError(f"{args.reviews} holds no usable review")
    backends = build_backends(cfg)
    try:
        topics = elicit_topics(args.domain_name, samples, args.k or cfg.topics_k, backends.extractor)
    finally:
        backends.log_stats()
        backends.close()
    for topic in topics:
        print(topic)
    if args.out:
        save_domain_config(args.out, DomainConfig(domain_name=args.domain_name, topics=tuple(topics)))
        logger.info("wrote domain config %s", args.out)
    return 0


def cmd_extract(args: argparse.Namespace, cfg: RunConfig) -> int:
    domain = load_domain_config(cfg.domain_config)
    reader = ingest_reviews(_require(args.reviews, "review file"), cfg.min_review_chars)
    interactions = list(reader)
    backends = build_backends(cfg)
    try:
        summary = extract_corpus(
            interactions,
            domain,
            backends.extractor,
            cfg.composer,
            cfg.parallelism,
            progress=not args.quiet,
        )
    finally:
        backends.log_stats()
        backends.close()
    out = Path(args.out)
    write_benchmark(out, summary.records)
    _write_json(
        _summary_path(out),
        {
            **summary.as_dict(),
            "malformed_lines": reader.malformed,
            "reviews_without_text": reader.missing_text,
            "reviews_too_short": reader.too_short,
        },
    )
    logger.info("wrote %d benchmark record(s) to %s", len(summary.records), out)
    return 0


def cmd_compose(args: argparse.Namespace, cfg: RunConfig) -> int:
    records = read_benchmark(_require(args.benchmark, "benchmark"))
    count = write_benchmark(args.out, recompose(records, cfg.composer))
    logger.info("recomposed %d ground-truth explanation(s) into %s", count, args.out)
    return 0


def cmd_split(args: argparse.Namespace, cfg: RunConfig) -> int:
    records = read_benchmark(_require(args.benchmark, "benchmark"))
    if not records:
        raise InputError(f"{args.benchmark} is empty")
    splits = split_corpus(records, cfg.split)
    out_dir = Path(args.out_dir)
    for name, split in zip(SPLIT_NAMES, splits):
        write_benchmark(out_dir / f"{name}.jsonl", split)
    print(json.dumps({name: len(split) for name, split in zip(SPLIT_NAMES, splits)}))
    return 0


def cmd_stats(args: argparse.Namespace, cfg: RunConfig) -> int:
    benchmark = _require(args.benchmark, "benchmark")
    records = read_benchmark(benchmark)
    splits = None
    if args.split_dir:
        split_dir = _require(args.split_dir, "split directory")
        train, valid, test = (read_benchmark(split_dir / f"{name}.jsonl") for name in SPLIT_NAMES)
        splits = (train, valid, test)
    stats = compute_stats(records, splits)
    summary = _summary_path(benchmark)
    if summary.exists():
        try:
            counts = json.loads(summary.read_text(encoding="utf-8"))
            excluded = int(counts.get("excluded_failed", 0)) + int(counts.get("excluded_empty", 0))
            stats = stats.model_copy(update={"excluded": excluded})
        except (ValueError, AttributeError) as e:
            logger.warning("ignoring unreadable extraction summary %s: %s", summary, e)
    print(stats.model_dump_json(indent=2))
    return 0


def cmd_evaluate(args: argparse.Namespace, cfg: RunConfig) -> int:
    domain = load_domain_config(cfg.domain_config)
    benchmark = read_benchmark(_require(args.benchmark, "benchmark"))
    if args.model_name and len(args.model_name) != len(args.generated):
        raise ConfigError("--model-name must be given once per generated file")
    backends = build_backends(cfg)
    records = []
    try:
        evaluator = Evaluator(cfg, domain, backends, args.dataset)
        for i, path in enumerate(args.generated):
            name = args.model_name[i] if args.model_name else None
            generated = read_generated(_require(path, "generated explanations"), name)
            records.extend(evaluator.evaluate(benchmark, generated, progress=not args.quiet))
    finally:
        backends.log_stats()
        backends.close()
    count = write_metric_records(args.out, records)
    logger.info("wrote %d metric record(s) to %s", count, args.out)
    return 0


def cmd_report(args: argparse.Namespace, cfg: RunConfig) -> int:
    records = []
    for path in args.metrics:
        records.extend(read_metric_records(_require(path, "metric records")))
    datasets = {r.dataset for r in records}
    dataset = args.dataset or cfg.dataset or (datasets.pop() if len(datasets) == 1 else "")
    for path in args.external or ():
        records.extend(read_external_scores(_require(path, "external scores"), dataset=dataset))
    if not records:
        raise InputError("no metric records to report")
    report = aggregate(records, cfg.correlations, cfg.correlation_granularity)
    formats = args.formats or list(cfg.report_formats)
    if args.out_dir:
        write_report(args.out_dir, report, formats, METRIC_ORDER)
    else:
        print(render_markdown(report, METRIC_ORDER))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="factrec",
        description="Statement-level factuality benchmarks for explainable recommendation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="run configuration JSON file")
    parser.add_argument("--parallelism", type=int, help="concurrent interactions")
    parser.add_argument(
        "--backend-stub", action="store_true", help="answer every backend call with the deterministic stub"
    )
    parser.add_argument("--seed", type=int, help="split seed")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("topics", help="elicit a topic shortlist for a domain")
    p.add_argument("--reviews", required=True, help="raw review file (JSON lines)")
    p.add_argument("--domain-name", required=True)
    p.add_argument("-k", type=int, help="number of topics (default: topics_k)")
    p.add_argument("--sample", type=int, default=20, help="reviews shown to the model")
    p.add_argument("--out", help="write a domain config seeded with the topics")
    p.set_defaults(func=cmd_topics)

    p = sub.add_parser("extract", help="build a benchmark from a review corpus")
    p.add_argument("--reviews", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("compose", help="recompose ground-truth explanations")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("split", help="split a benchmark into train/valid/test")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("stats", help="print corpus statistics")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--split-dir")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("evaluate", help="score generated explanations")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--generated", required=True, nargs="+", help="one file per model")
    p.add_argument("--model-name", nargs="+", help="model names (default: file stems)")
    p.add_argument("--dataset", help="dataset label (default: config dataset or domain name)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="aggregate metric records")
    p.add_argument("--metrics", required=True, nargs="+")
    p.add_argument("--external", nargs="+", help="externally computed score files")
    p.add_argument("--dataset", help="dataset label for external scores")
    p.add_argument("--formats", nargs="+", choices=("csv", "json", "markdown"))
    p.add_argument("--out-dir", help="write files here instead of printing markdown")
    p.set_defaults(func=cmd_report)
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(stream=sys.stderr, level=level, format=LOG_FORMAT, force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args)
    func: Callable[[argparse.Namespace, RunConfig], int] = args.func
    try:
        cfg = load_run_config(args.config).with_overrides(args.parallelism, args.seed, args.backend_stub)
        return func(args, cfg)
    except ElicitationIncomplete as e:
        print(f"factrec: error: {e}", file=sys.stderr)
        return BackendError.exit_code
    except FactrecError as e:
        print(f"factrec: error: {e}", file=sys.stderr)
        return e.exit_code
    except ValueError as e:
        logger.debug("internal error", exc_info=True)
        print(f"factrec: internal error: {e}", file=sys.stderr)
        return FactrecError.exit_code


if __name__ == "__main__":
    sys.exit(main())
