"""
Corpus-level drivers behind the extract and evaluate commands. Work is fanned
out over a thread pool; results are collected in input order so output files
do not depend on scheduling.
"""

import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from threading import Lock
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

from tqdm import tqdm

from factrec.backends import Backend, LlmJudge, create_backend
from factrec.backends.stub import load_stub_fixtures
from factrec.cache import CacheRegistry
from factrec.composer import ComposerTemplate, compose_explanation, composed_statements
from factrec.config import RunConfig
from factrec.exceptions import IdJoinError, NotComposerFormat
from factrec.extractor import ExtractionResult, extract_triplets
from factrec.metrics import ngram_baselines, nli_alignment, st2exp, stent_stcoh
from factrec.models import (
    BenchmarkRecord,
    DomainConfig,
    GeneratedExplanation,
    Interaction,
    MetricRecord,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

LLM_METRICS = ("st2exp_p", "st2exp_r", "st2exp_f1")
NLI_METRICS = ("stent_p", "stent_r", "stent_f1", "stcoh_p", "stcoh_r")
NGRAM_METRICS = ("bleu4", "rouge1", "rouge2", "rougeL")
METRIC_ORDER = LLM_METRICS + NLI_METRICS + ("stcoh_f1",) + NGRAM_METRICS


def ordered_map(
    fn: Callable[[T], R],
    items: Sequence[T],
    parallelism: int,
    desc: str,
    progress: bool = True,
) -> List[R]:
    """fn over items on a thread pool; results in input order."""
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(
            tqdm(
                pool.map(fn, items),
                total=len(items),
                desc=desc,
                file=sys.stderr,
                disable=None if progress else True,
            )
        )


@dataclass
class Backends:
    extractor: Backend
    judge: Backend
    nli: Backend
    registry: CacheRegistry = field(default_factory=CacheRegistry)

    def close(self) -> None:
        for backend in (self.extractor, self.judge, self.nli):
            backend.close()
        self.registry.close()

    def log_stats(self) -> None:
        for name, backend in (("extractor", self.extractor), ("judge", self.judge), ("nli", self.nli)):
            stats = backend.cache.stats()
            logger.info(
                "%s cache: %d request(s), %d hit(s), %d miss(es), hit rate %.2f, %d sent",
                name,
                stats.request_count,
                stats.hit_count,
                stats.miss_count,
                stats.hit_rate,
                backend.requests_sent,
            )
            if backend.renormalized_count:
                logger.warning(
                    "%s: %d NLI verdict(s) were renormalized", name, backend.renormalized_count
                )


def build_backends(cfg: RunConfig, force_stub: bool = False) -> Backends:
    """One backend per role; roles configured with the same cache file share it."""
    registry = CacheRegistry()
    fixtures = load_stub_fixtures(cfg.stub_fixtures) if cfg.stub_fixtures else None

    def make(backend_cfg_name: str) -> Backend:
        bc = getattr(cfg, backend_cfg_name)
        cache = registry.open(bc.cache_path, bc.memory_cache_size, bc.memory_cache_policy)
        return create_backend(bc, cache=cache, stub_fixtures=fixtures, force_stub=force_stub)

    return Backends(
        extractor=make("extractor_backend"),
        judge=make("judge_backend"),
        nli=make("nli_backend"),
        registry=registry,
    )


@dataclass
class ExtractionSummary:
    records: List[BenchmarkRecord]
    interactions: int = 0
    excluded_failed: int = 0
    excluded_empty: int = 0
    dropped_items: int = 0
    coerced_topics: int = 0

    def as_dict(self) -> Dict[str, int]:
        return {
            "interactions": self.interactions,
            "records": len(self.records),
            "excluded_failed": self.excluded_failed,
            "excluded_empty": self.excluded_empty,
            "dropped_items": self.dropped_items,
            "coerced_topics": self.coerced_topics,
        }


def extract_corpus(
    interactions: Sequence[Interaction],
    domain: DomainConfig,
    backend: Backend,
    tpl: ComposerTemplate,
    parallelism: int = 1,
    progress: bool = True,
) -> ExtractionSummary:
    """
    Extract triplets for every interaction and compose ground truths.
    Interactions whose extraction failed or produced no triplet are excluded
    and counted.
    """

    def run(interaction: Interaction) -> ExtractionResult:
        return extract_triplets(interaction.review_text, domain, backend)

    results = ordered_map(run, interactions, parallelism, "extract", progress)
    summary = ExtractionSummary(records=[], interactions=len(interactions))
    for interaction, result in zip(interactions, results):
        summary.dropped_items += len(result.dropped)
        if result.failed:
            summary.excluded_failed += 1
            logger.debug("%s: extraction failed: %s", interaction.interaction_id, result.failure_reason)
            continue
        if not result.triplets:
            summary.excluded_empty += 1
            continue
        assert result.meta is not None
        summary.coerced_topics += sum(1 for t in result.triplets if t.flags)
        summary.records.append(
            BenchmarkRecord(
                interaction=interaction,
                triplets=result.triplets,
                ground_truth_explanation=compose_explanation(result.triplets, tpl),
                extraction_meta=result.meta,
            )
        )
    if summary.excluded_failed or summary.excluded_empty or summary.dropped_items:
        logger.warning(
            "extraction: %d failed and %d empty interaction(s) excluded, %d item(s) dropped",
            summary.excluded_failed,
            summary.excluded_empty,
            summary.dropped_items,
        )
    return summary


def recompose(records: Iterable[BenchmarkRecord], tpl: ComposerTemplate) -> List[BenchmarkRecord]:
    return [
        r.model_copy(update={"ground_truth_explanation": compose_explanation(r.triplets, tpl)})
        for r in records
    ]


class Evaluator:
    """
    Scores generated explanations against benchmark ground truths.

    Generated statements come from the composer parser when the text is in
    composer format, from the LLM extractor otherwise; an empty text has no
    statements and its LLM and NLI records are degenerate.
    """

    def __init__(
        self,
        cfg: RunConfig,
        domain: DomainConfig,
        backends: Backends,
        dataset: Optional[str] = None,
    ):
        self.cfg = cfg
        self.domain = domain
        self.backends = backends
        self.judge = LlmJudge(backends.judge, cfg.judge_answer_map)
        self.dataset = dataset or cfg.dataset or domain.domain_name
        self._lock = Lock()
        self.fast_path = 0
        self.llm_extracted = 0
        self.extraction_failures = 0

    def generated_statements(self, text: str) -> Tuple[str, ...]:
        if not text.strip():
            return ()
        try:
            statements = composed_statements(text, self.cfg.composer)
            with self._lock:
                self.fast_path += 1
            return tuple(statements)
        except NotComposerFormat:
            pass
        result = extract_triplets(text, self.domain, self.backends.extractor)
        with self._lock:
            self.llm_extracted += 1
            if result.failed:
                self.extraction_failures += 1
        return tuple(t.statement for t in result.triplets)

    def score(self, gen: GeneratedExplanation, ref: BenchmarkRecord) -> List[MetricRecord]:
        statements = self.generated_statements(gen.text)
        ref_statements = ref.statements
        ref_text = ref.ground_truth_explanation
        llm = st2exp(statements, ref_statements, gen.text, ref_text, self.judge)
        nli = stent_stcoh(nli_alignment(statements, ref_statements, self.backends.nli.classify))
        degenerate = not statements

        values: List[Tuple[str, Optional[float], bool]] = [
            ("st2exp_p", llm.p, degenerate),
            ("st2exp_r", llm.r, degenerate),
            ("st2exp_f1", llm.f1, degenerate),
            ("stent_p", nli.stent_p, degenerate),
            ("stent_r", nli.stent_r, degenerate),
            ("stent_f1", nli.stent_f1, degenerate),
            ("stcoh_p", nli.stcoh_p, degenerate),
            ("stcoh_r", nli.stcoh_r, degenerate),
        ]
        if self.cfg.emit_stcoh_f1 and nli.stcoh_f1 is not None:
            values.append(("stcoh_f1", nli.stcoh_f1, False))
        for name, value in ngram_baselines(gen.text, ref_text).items():
            values.append((name, value, False))
        if self.cfg.review_reference:
            for name, value in ngram_baselines(gen.text, ref.interaction.review_text).items():
                values.append((f"review_{name}", value, False))

        return [
            MetricRecord(
                interaction_id=ref.interaction_id,
                model_name=gen.model_name,
                metric_name=name,
                value=value,
                degenerate=flag,
                dataset=self.dataset,
            )
            for name, value, flag in values
        ]

    def evaluate(
        self,
        benchmark: Sequence[BenchmarkRecord],
        generated: Sequence[GeneratedExplanation],
        progress: bool = True,
    ) -> List[MetricRecord]:
        """
        :raises IdJoinError: the share of generated ids missing from the benchmark
            exceeds the configured threshold.
        """
        by_id = {r.interaction_id: r for r in benchmark}
        joined = [g for g in generated if g.interaction_id in by_id]
        missing = len(generated) - len(joined)
        if missing:
            share = missing / len(generated)
            if share > self.cfg.id_join_threshold:
                raise IdJoinError(
                    f"{missing} of {len(generated)} generated explanation(s) reference unknown "
                    f"interactions ({share:.1%} > {self.cfg.id_join_threshold:.1%})"
                )
            logger.warning("skipped %d generated explanation(s) with unknown interaction ids", missing)

        scored = ordered_map(
            lambda g: self.score(g, by_id[g.interaction_id]),
            joined,
            self.cfg.parallelism,
            "evaluate",
            progress,
        )
        if self.extraction_failures:
            logger.warning("%d generated text(s) could not be extracted", self.extraction_failures)
        if self.judge.parse_failures:
            logger.warning("%d judge answer(s) could not be parsed", self.judge.parse_failures)
        logger.info(
            "statements: %d text(s) parsed from composer format, %d extracted by the LLM",
            self.fast_path,
            self.llm_extracted,
        )
        rank = {name: i for i, name in enumerate(METRIC_ORDER)}
        records = [r for batch in scored for r in batch]
        return sorted(
            records,
            key=lambda r: (
                r.model_name,
                r.interaction_id,
                rank.get(r.metric_name, len(rank)),
                r.metric_name,
            ),
        )
