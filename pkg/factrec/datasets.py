import json
import logging
import math
import random
from functools import partial
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import jsonlines
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator
from typing_extensions import Literal

from factrec.core import normalize_statement
from factrec.exceptions import (
    CorpusCorrupt,
    IncompatibleBenchmark,
    InputError,
    InvariantViolation,
    PreconditionError,
)
from factrec.models import (
    BenchmarkRecord,
    ExtractionMeta,
    GeneratedExplanation,
    Interaction,
    MetricRecord,
    StatementTriplet,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CORRUPT_FRACTION = 0.10

PathLike = Union[str, Path]

# raw Amazon 2014 review field -> Interaction field
REVIEW_FIELDS = {
    "reviewerID": "user_id",
    "asin": "item_id",
    "overall": "rating",
    "reviewText": "review_text",
    "unixReviewTime": "timestamp",
}

_dumps = partial(json.dumps, ensure_ascii=False, separators=(",", ":"))


def _reader(path: PathLike) -> jsonlines.Reader:
    try:
        return jsonlines.open(path)
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from e


def _rows(path: PathLike) -> Iterator[Tuple[int, Dict[str, Any]]]:
    """Non-empty lines of a JSON lines file as (file line number, object)."""
    try:
        f = open(path, "rb")
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from e
    with f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                row = jsonlines.Reader([line]).read(type=dict)
            except jsonlines.InvalidLineError as e:
                raise InputError(f"{path}:{lineno}: {e}") from e
            yield lineno, row


class ReviewReader:
    """
    Stream of Interactions from a raw review file, in file order.

    Lines that are not JSON objects or lack a required field are malformed;
    reviews without text or shorter than min_review_chars are skipped. Both
    are counted. When iteration finishes with more than 10% malformed lines
    the corpus is rejected.

    :raises CorpusCorrupt: too many malformed lines.
    """

    def __init__(self, path: PathLike, min_review_chars: int = 1):
        self.path = Path(path)
        self.min_review_chars = min_review_chars
        self.lines = 0
        self.malformed = 0
        self.missing_text = 0
        self.too_short = 0

    @property
    def warnings(self) -> int:
        return self.malformed + self.missing_text

    def _parse(self, row: Dict[str, Any]) -> Optional[Interaction]:
        text = row.get("reviewText")
        if not isinstance(text, str) or not text.strip():
            self.missing_text += 1
            return None
        if len(text.strip()) < self.min_review_chars:
            self.too_short += 1
            return None
        fields = {ours: row[theirs] for theirs, ours in REVIEW_FIELDS.items() if theirs in row}
        for name in ("user_id", "item_id"):
            if name in fields:
                fields[name] = str(fields[name])
        return Interaction(**fields)

    def __iter__(self) -> Iterator[Interaction]:
        with _reader(self.path) as reader:
            while True:
                try:
                    row = reader.read(type=dict, skip_empty=True)
                except EOFError:
                    break
                except jsonlines.InvalidLineError as e:
                    self.lines += 1
                    self.malformed += 1
                    logger.debug("%s:%s: malformed line: %s", self.path, e.lineno, e)
                    continue
                self.lines += 1
                try:
                    interaction = self._parse(row)
                except ValidationError as e:
                    self.malformed += 1
                    logger.debug("%s: invalid review record: %s", self.path, e)
                    continue
                if interaction is not None:
                    yield interaction
        if self.warnings:
            logger.warning(
                "%s: skipped %d malformed line(s) and %d review(s) without text",
                self.path,
                self.malformed,
                self.missing_text,
            )
        if self.lines and self.malformed / self.lines > CORRUPT_FRACTION:
            raise CorpusCorrupt(
                f"{self.path}: {self.malformed} of {self.lines} lines are malformed"
            )


def ingest_reviews(path: PathLike, min_review_chars: int = 1) -> ReviewReader:
    return ReviewReader(path, min_review_chars)


class SplitSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    train_fraction: float = 0.745
    valid_fraction: float = 0.090
    test_fraction: float = 0.165
    seed: int = 42
    strategy: Literal["random-by-interaction"] = "random-by-interaction"

    @model_validator(mode="after")
    def _check(self) -> "SplitSpec":
        fractions = (self.train_fraction, self.valid_fraction, self.test_fraction)
        if not all(0.0 < f < 1.0 for f in fractions):
            raise ValueError("split fractions must lie in (0, 1)")
        if abs(math.fsum(fractions) - 1.0) > 1e-9:
            raise ValueError(f"split fractions sum to {math.fsum(fractions)}, not 1")
        return self


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


Splits = Tuple[List[BenchmarkRecord], List[BenchmarkRecord], List[BenchmarkRecord]]


def split_sizes(n: int, spec: SplitSpec) -> Tuple[int, int, int]:
    """
    (train, valid, test) sizes for n records: validation and test get their
    fraction of n rounded half up, train takes the remainder.
    """
    n_valid = _round_half_up(n * spec.valid_fraction)
    n_test = min(_round_half_up(n * spec.test_fraction), n - n_valid)
    return n - n_valid - n_test, n_valid, n_test


def split_corpus(records: Sequence[BenchmarkRecord], spec: SplitSpec) -> Splits:
    """
    Seeded random partition into (train, valid, test), sized by split_sizes.
    Each split is returned ordered by interaction id.
    """
    if not records:
        raise PreconditionError("cannot split an empty corpus")
    order = sorted(records, key=lambda r: r.interaction_id)
    random.Random(spec.seed).shuffle(order)
    _, n_valid, n_test = split_sizes(len(order), spec)
    valid = order[:n_valid]
    test = order[n_valid : n_valid + n_test]
    train = order[n_valid + n_test :]

    def by_id(split: List[BenchmarkRecord]) -> List[BenchmarkRecord]:
        return sorted(split, key=lambda r: r.interaction_id)

    return by_id(train), by_id(valid), by_id(test)


class CorpusStats(BaseModel):
    model_config = ConfigDict(frozen=True)

    users: int
    items: int
    interactions: int
    train: Optional[int] = None
    valid: Optional[int] = None
    test: Optional[int] = None
    avg_statements_per_interaction: float
    avg_per_user: float
    avg_per_item: float
    unique_statements: int
    total_statements: int
    excluded: Optional[int] = None


def compute_stats(
    records: Sequence[BenchmarkRecord], splits: Optional[Splits] = None
) -> CorpusStats:
    """
    Corpus statistics. Every triplet counts toward the total, duplicates
    included; unique statements are counted after normalize_statement.
    """
    users = {r.interaction.user_id for r in records}
    items = {r.interaction.item_id for r in records}
    total = sum(len(r.triplets) for r in records)
    unique = {normalize_statement(s) for r in records for s in r.statements}

    split_counts: Dict[str, Optional[int]] = {"train": None, "valid": None, "test": None}
    if splits is not None:
        train, valid, test = splits
        if len(train) + len(valid) + len(test) != len(records):
            raise InvariantViolation(
                f"splits hold {len(train) + len(valid) + len(test)} records, corpus has {len(records)}"
            )
        split_counts = {"train": len(train), "valid": len(valid), "test": len(test)}

    def per(count: int) -> float:
        return total / count if count else 0.0

    return CorpusStats(
        users=len(users),
        items=len(items),
        interactions=len(records),
        avg_statements_per_interaction=per(len(records)),
        avg_per_user=per(len(users)),
        avg_per_item=per(len(items)),
        unique_statements=len(unique),
        total_statements=total,
        **split_counts,
    )


_TRIPLET_KEYS = ("statement", "topic", "sentiment", "flags", "source_span")
_RECORD_KEYS = (
    "schema_version",
    "interaction_id",
    "user_id",
    "item_id",
    "rating",
    "review_text",
    "timestamp",
    "triplets",
    "ground_truth_explanation",
    "extraction_meta",
)


def benchmark_row(record: BenchmarkRecord) -> Dict[str, Any]:
    i = record.interaction
    row: Dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "interaction_id": i.interaction_id,
        "user_id": i.user_id,
        "item_id": i.item_id,
        "rating": i.rating,
        "review_text": i.review_text,
        "timestamp": i.timestamp,
        "triplets": [
            {
                "statement": t.statement,
                "topic": t.topic,
                "sentiment": t.sentiment,
                "flags": list(t.flags),
                "source_span": list(t.source_span) if t.source_span else None,
            }
            for t in record.triplets
        ],
        "ground_truth_explanation": record.ground_truth_explanation,
        "extraction_meta": record.extraction_meta.model_dump(),
    }
    for key in sorted(record.extra_fields):
        if key not in row:
            row[key] = record.extra_fields[key]
    return row


def record_from_row(row: Dict[str, Any]) -> BenchmarkRecord:
    version = row.get("schema_version")
    if not isinstance(version, int) or isinstance(version, bool):
        raise IncompatibleBenchmark("benchmark row has no integer schema_version")
    if version != SCHEMA_VERSION:
        raise IncompatibleBenchmark(
            f"benchmark schema_version {version} is not supported (expected {SCHEMA_VERSION})"
        )
    interaction = Interaction(
        user_id=row["user_id"],
        item_id=row["item_id"],
        rating=row["rating"],
        review_text=row["review_text"],
        timestamp=row.get("timestamp"),
        interaction_id=row["interaction_id"],
    )
    triplets = tuple(
        StatementTriplet(**{k: t[k] for k in _TRIPLET_KEYS if t.get(k) is not None})
        for t in row["triplets"]
    )
    return BenchmarkRecord(
        interaction=interaction,
        triplets=triplets,
        ground_truth_explanation=row["ground_truth_explanation"],
        extraction_meta=ExtractionMeta(**row["extraction_meta"]),
        extra_fields={k: v for k, v in row.items() if k not in _RECORD_KEYS},
    )


def write_benchmark(path: PathLike, records: Iterable[BenchmarkRecord]) -> int:
    return _write_rows(path, (benchmark_row(r) for r in records))


def read_benchmark(path: PathLike) -> List[BenchmarkRecord]:
    """
    :raises IncompatibleBenchmark: a row carries a missing or unsupported schema_version.
    :raises InputError: unreadable file or invalid row.
    """
    records = []
    for lineno, row in _rows(path):
        try:
            records.append(record_from_row(row))
        except (KeyError, TypeError, ValidationError) as e:
            raise InputError(f"{path}:{lineno}: invalid benchmark record: {e}") from e
    return records


def _write_rows(path: PathLike, rows: Iterable[Dict[str, Any]]) -> int:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with jsonlines.open(path, mode="w", dumps=_dumps) as writer:
        for row in rows:
            writer.write(row)
            count += 1
    return count


def read_generated(path: PathLike, model_name: Optional[str] = None) -> List[GeneratedExplanation]:
    """One model's explanations; the model name defaults to the file stem."""
    name = model_name or Path(path).stem
    out = []
    for lineno, row in _rows(path):
        try:
            out.append(
                GeneratedExplanation(
                    interaction_id=row["interaction_id"], model_name=name, text=row["text"]
                )
            )
        except (KeyError, ValidationError) as e:
            raise InputError(f"{path}:{lineno}: invalid generated explanation: {e}") from e
    return out


def write_generated(path: PathLike, explanations: Iterable[GeneratedExplanation]) -> int:
    return _write_rows(
        path, ({"interaction_id": g.interaction_id, "text": g.text} for g in explanations)
    )


def write_metric_records(path: PathLike, records: Iterable[MetricRecord]) -> int:
    return _write_rows(path, (r.model_dump() for r in records))


def read_metric_records(path: PathLike) -> List[MetricRecord]:
    out = []
    for lineno, row in _rows(path):
        try:
            out.append(MetricRecord(**row))
        except (TypeError, ValidationError) as e:
            raise InputError(f"{path}:{lineno}: invalid metric record: {e}") from e
    return out


def read_external_scores(
    path: PathLike, model_name: Optional[str] = None, dataset: str = ""
) -> List[MetricRecord]:
    """
    Scores computed outside this toolkit (e.g. BERTScore), as metric records.
    A row's own model_name wins over the argument, which defaults to the file
    stem.
    """
    default_model = model_name or Path(path).stem
    out = []
    for lineno, row in _rows(path):
        try:
            value = row["value"]
            out.append(
                MetricRecord(
                    interaction_id=row["interaction_id"],
                    model_name=row.get("model_name") or default_model,
                    metric_name=row["metric_name"],
                    value=None if value is None else float(value),
                    degenerate=value is None,
                    dataset=row.get("dataset") or dataset,
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"{path}:{lineno}: invalid external score: {e}") from e
    return out
