import hashlib
from typing import Any, Dict, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SENTIMENTS: Tuple[str, str, str] = ("positive", "negative", "neutral")
OTHER_TOPIC = "other"
TOPIC_COERCED = "topic_coerced"
SIMPLEX_TOLERANCE = 1e-4


def make_interaction_id(
    user_id: str, item_id: str, timestamp: Optional[int], review_text: str
) -> str:
    """
    Stable content hash of an interaction, used to join benchmark files with
    generated-explanation and score files across runs.
    """
    review_digest = hashlib.sha256(review_text.encode("utf-8")).hexdigest()
    stamp = "" if timestamp is None else str(timestamp)
    material = "\x1f".join((user_id, item_id, stamp, review_digest))
    return hashlib.sha256(material.encode("utf-8")).hexdigest()[:24]


class Interaction(BaseModel):
    model_config = ConfigDict(frozen=True)

    user_id: str
    item_id: str
    rating: float
    review_text: str
    timestamp: Optional[int] = None
    interaction_id: str = ""

    @model_validator(mode="before")
    @classmethod
    def _derive_id(cls, data: Any) -> Any:
        if isinstance(data, dict) and not data.get("interaction_id"):
            data = dict(data)
            data["interaction_id"] = make_interaction_id(
                str(data.get("user_id", "")),
                str(data.get("item_id", "")),
                data.get("timestamp"),
                str(data.get("review_text", "")),
            )
        return data


class StatementTriplet(BaseModel):
    """
    One atomic statement with its topic and sentiment. Construction is lenient;
    `factrec.core.validate_triplet` is the gate every producer goes through.
    """

    model_config = ConfigDict(frozen=True)

    statement: str
    topic: str
    sentiment: str
    source_span: Optional[Tuple[int, int]] = None
    flags: Tuple[str, ...] = ()


class FewShotExample(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    review: str
    triplets: Tuple[StatementTriplet, ...]


class DomainConfig(BaseModel):
    """
    Topic set, sentiment set and prompt material for one review domain.

    :param domain_name: dataset / category name, e.g. "toys".
    :param topics: topic labels, case-normalized and unique; "other" is reserved.
    :param few_shot_examples: illustrative (review, triplets) pairs embedded in the prompt.
    :param prompt_template: template text with {review}, {topics}, {sentiments} and {examples}
        placeholders. None selects the built-in template.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    domain_name: str
    topics: Tuple[str, ...]
    sentiments: Tuple[str, ...] = SENTIMENTS
    few_shot_examples: Tuple[FewShotExample, ...] = ()
    prompt_template_id: str = "extract-v1"
    prompt_template: Optional[str] = None

    @field_validator("topics")
    @classmethod
    def _normalize_topics(cls, topics: Tuple[str, ...]) -> Tuple[str, ...]:
        normalized = tuple(" ".join(t.split()).casefold() for t in topics)
        if not normalized:
            raise ValueError("at least one topic is required")
        if any(not t for t in normalized):
            raise ValueError("topic labels must be non-empty")
        if OTHER_TOPIC in normalized:
            raise ValueError(f"{OTHER_TOPIC!r} is reserved and cannot be listed as a topic")
        if len(set(normalized)) != len(normalized):
            raise ValueError("topic labels must be unique")
        return normalized

    @field_validator("sentiments")
    @classmethod
    def _fixed_sentiments(cls, sentiments: Tuple[str, ...]) -> Tuple[str, ...]:
        if tuple(sentiments) != SENTIMENTS:
            raise ValueError(f"sentiments must be exactly {list(SENTIMENTS)}")
        return sentiments


class ExtractionMeta(BaseModel):
    model_config = ConfigDict(frozen=True)

    backend_model_id: str
    prompt_template_id: str
    extracted_at: int = 0


class BenchmarkRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    interaction: Interaction
    triplets: Tuple[StatementTriplet, ...]
    ground_truth_explanation: str
    extraction_meta: ExtractionMeta
    # fields found in a benchmark file that this version does not know about
    extra_fields: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self) -> "BenchmarkRecord":
        if not self.triplets:
            raise ValueError("a benchmark record needs at least one triplet")
        if not self.interaction.review_text.strip():
            raise ValueError("a benchmark record needs a non-empty review")
        return self

    @property
    def interaction_id(self) -> str:
        return self.interaction.interaction_id

    @property
    def statements(self) -> Tuple[str, ...]:
        return tuple(t.statement for t in self.triplets)


class GeneratedExplanation(BaseModel):
    model_config = ConfigDict(frozen=True)

    interaction_id: str
    model_name: str
    text: str
    extracted_triplets: Optional[Tuple[StatementTriplet, ...]] = None


class NliVerdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    entailment: float = Field(ge=0.0, le=1.0)
    neutral: float = Field(ge=0.0, le=1.0)
    contradiction: float = Field(ge=0.0, le=1.0)
    renormalized: bool = False

    @model_validator(mode="after")
    def _simplex(self) -> "NliVerdict":
        total = self.entailment + self.neutral + self.contradiction
        if abs(total - 1.0) > SIMPLEX_TOLERANCE:
            raise ValueError(f"probabilities sum to {total}, not 1")
        return self

    @classmethod
    def from_scores(
        cls, entailment: float, neutral: float, contradiction: float
    ) -> "NliVerdict":
        """
        Build a verdict from raw backend scores. Scores off the simplex are
        clipped at zero and rescaled, and the verdict is flagged renormalized.
        """
        scores = (float(entailment), float(neutral), float(contradiction))
        if all(0.0 <= s <= 1.0 for s in scores) and abs(sum(scores) - 1.0) <= SIMPLEX_TOLERANCE:
            return cls(entailment=scores[0], neutral=scores[1], contradiction=scores[2])
        clipped = [max(s, 0.0) for s in scores]
        total = sum(clipped)
        if total <= 0.0:
            raise ValueError(f"cannot renormalize scores {scores}")
        e, n, c = (s / total for s in clipped)
        return cls(entailment=e, neutral=n, contradiction=c, renormalized=True)

    @property
    def coherence(self) -> float:
        return self.entailment - self.contradiction


class MetricRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    interaction_id: str
    model_name: str
    metric_name: str
    value: Optional[float]
    degenerate: bool = False
    dataset: str = ""

    @model_validator(mode="after")
    def _check(self) -> "MetricRecord":
        if self.value is None:
            if not self.degenerate:
                raise ValueError(f"{self.metric_name}: null value on a non-degenerate record")
            return self
        low = -1.0 if self.metric_name.startswith("stcoh") else 0.0
        if self.metric_name.startswith(("st2exp", "stent", "stcoh")) and not (
            low <= self.value <= 1.0
        ):
            raise ValueError(f"{self.metric_name}={self.value} out of range")
        return self


class CacheStats:
    def __init__(self, total: int, hit: int, disk_hit: int = 0):
        self.request_count = total
        self.hit_count = hit
        self.disk_hit_count = disk_hit
        self.miss_count = self.request_count - self.hit_count
        self.hit_rate = self.hit_count / self.request_count if self.request_count else 0.0
