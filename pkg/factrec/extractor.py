import json
import logging
import re
from typing import Any, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict

from factrec.backends import Backend, Message, prompts
from factrec.core import validate_triplet
from factrec.exceptions import (
    ElicitationIncomplete,
    ParseFailure,
    PreconditionError,
    TripletRejected,
)
from factrec.models import (
    OTHER_TOPIC,
    SENTIMENTS,
    DomainConfig,
    ExtractionMeta,
    FewShotExample,
    StatementTriplet,
)

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ("statement", "topic", "sentiment")


class ExtractionPrompt(BaseModel):
    model_config = ConfigDict(frozen=True)

    system_text: str
    user_text: str
    output_schema_note: str

    def messages(self) -> List[Message]:
        return [
            ("system", self.system_text),
            ("user", f"{self.user_text}\n{self.output_schema_note}"),
        ]


class ExtractionResult(BaseModel):
    """
    Outcome of one extraction call. `failed` marks a reply that stayed
    unparseable after the re-ask; such a result has no triplets and the
    interaction is left out of the benchmark.
    """

    model_config = ConfigDict(frozen=True)

    triplets: Tuple[StatementTriplet, ...]
    dropped: Tuple[Tuple[Any, str], ...] = ()
    raw_reply: str
    failed: bool = False
    failure_reason: Optional[str] = None
    meta: Optional[ExtractionMeta] = None


def _format_example(example: FewShotExample) -> str:
    items = [
        {"statement": t.statement, "topic": t.topic, "sentiment": t.sentiment}
        for t in example.triplets
    ]
    return f"Review:\n{example.review}\nOutput: {json.dumps(items, ensure_ascii=False)}\n\n"


def build_extraction_prompt(review: str, cfg: DomainConfig) -> ExtractionPrompt:
    examples = "".join(_format_example(e) for e in cfg.few_shot_examples)
    if examples:
        examples = "Examples:\n\n" + examples
    template = cfg.prompt_template or prompts.EXTRACTION_TEMPLATE
    # sequential replace, not str.format: reviews and examples carry braces
    user_text = (
        template.replace("{topics}", "\n".join(f"- {t}" for t in cfg.topics))
        .replace("{sentiments}", ", ".join(SENTIMENTS))
        .replace("{examples}", examples)
        .replace("{review}", review)
    )
    return ExtractionPrompt(
        system_text=prompts.EXTRACTION_SYSTEM,
        user_text=user_text,
        output_schema_note=prompts.OUTPUT_SCHEMA_NOTE,
    )


def _byte_offset(text: str, char_index: int) -> int:
    return len(text[:char_index].encode("utf-8"))


def _relax(text: str) -> str:
    """
    Rewrite the two common near-JSON slips: single-quoted strings and
    trailing commas before a closing bracket. Double-quoted strings are
    copied through untouched.
    """
    out: List[str] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == '"':
            j = i + 1
            while j < n and text[j] != '"':
                j += 2 if text[j] == "\\" else 1
            out.append(text[i : j + 1])
            i = j + 1
        elif ch == "'":
            j = i + 1
            buf: List[str] = []
            while j < n and text[j] != "'":
                if text[j] == "\\" and j + 1 < n:
                    buf.append(text[j + 1])
                    j += 2
                else:
                    buf.append(text[j])
                    j += 1
            out.append(json.dumps("".join(buf), ensure_ascii=False))
            i = j + 1
        elif ch == ",":
            j = i + 1
            while j < n and text[j].isspace():
                j += 1
            if j >= n or text[j] not in "]}":
                out.append(ch)
            i += 1
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _embedded_arrays(raw: str) -> List[List[Any]]:
    decoder = json.JSONDecoder()
    found: List[List[Any]] = []
    for m in re.finditer(r"\[", raw):
        try:
            value, _ = decoder.raw_decode(raw, m.start())
        except json.JSONDecodeError:
            continue
        if isinstance(value, list):
            found.append(value)
    return found


def parse_extraction_reply(raw: str) -> List[Any]:
    """
    Parse an extraction reply into its list of raw items.

    Prose or code fences around the array are ignored, as are bracketed
    asides such as "[fit]" or "[1]": the first non-empty embedded array of
    objects wins, then an empty one. Otherwise the text from the first "["
    to the last "]" is parsed, with a lenient pass when strict JSON fails;
    if that fails too, ParseFailure reports the byte offset of the first strict-parse error.

    :raises ParseFailure: no array found, or the array is not recoverable.
    """
    start = raw.find("[")
    if start < 0:
        raise ParseFailure("no JSON array in reply", _byte_offset(raw, len(raw)))
    arrays = [a for a in _embedded_arrays(raw) if all(isinstance(item, dict) for item in a)]
    if arrays:
        return next((a for a in arrays if a), arrays[0])
    end = raw.rfind("]")
    candidate = raw[start : end + 1] if end > start else raw[start:]
    try:
        parsed = json.loads(candidate)
    except json.JSONDecodeError as strict:
        try:
            parsed = json.loads(_relax(candidate))
        except json.JSONDecodeError:
            raise ParseFailure(strict.msg, _byte_offset(raw, start + strict.pos)) from strict
    if not isinstance(parsed, list):
        raise ParseFailure("reply is not a JSON array", _byte_offset(raw, start))
    return parsed


def _source_span(statement: str, review: str) -> Optional[Tuple[int, int]]:
    m = re.search(re.escape(statement.strip()), review, re.IGNORECASE)
    return m.span() if m else None


def _to_triplet(item: Any, review: str, cfg: DomainConfig) -> StatementTriplet:
    if not isinstance(item, dict):
        raise TripletRejected("item is not an object")
    for name in REQUIRED_FIELDS:
        if not isinstance(item.get(name), str):
            raise TripletRejected(f"missing field {name}")
    t = StatementTriplet(
        statement=item["statement"],
        topic=item["topic"],
        sentiment=item["sentiment"],
        source_span=_source_span(item["statement"], review),
    )
    return validate_triplet(t, cfg)


def _drop_reason(item: Any, e: TripletRejected) -> str:
    if type(e) is TripletRejected:
        return "not-an-object" if not isinstance(item, dict) else "missing-field"
    return e.reason


def extract_triplets(review: str, cfg: DomainConfig, backend: Backend) -> ExtractionResult:
    """
    Extract validated (statement, topic, sentiment) triplets from one review.

    An unparseable reply is re-asked once; a second failure yields a failed
    result instead of an exception. Items that fail validation are kept in
    `dropped` with a machine-readable reason, so
    len(triplets) + len(dropped) is the number of items in the reply.

    :raises PreconditionError: review is blank.
    """
    if not review.strip():
        raise PreconditionError("review must be non-empty")
    messages = build_extraction_prompt(review, cfg).messages()
    reply = backend.chat(messages)
    meta = ExtractionMeta(
        backend_model_id=backend.model_id,
        prompt_template_id=cfg.prompt_template_id,
        extracted_at=reply.created,
    )
    try:
        items = parse_extraction_reply(reply.content)
    except ParseFailure as first:
        logger.debug("unparseable extraction reply, asking again: %s", first)
        messages = messages + [
            ("assistant", reply.content),
            ("user", prompts.EXTRACTION_RETRY),
        ]
        reply = backend.chat(messages)
        try:
            items = parse_extraction_reply(reply.content)
        except ParseFailure as second:
            return ExtractionResult(
                triplets=(),
                raw_reply=reply.content,
                failed=True,
                failure_reason=f"parse-failure: {second}",
                meta=meta,
            )

    triplets: List[StatementTriplet] = []
    dropped: List[Tuple[Any, str]] = []
    for item in items:
        try:
            triplets.append(_to_triplet(item, review, cfg))
        except TripletRejected as e:
            reason = _drop_reason(item, e)
            logger.debug("dropped extracted item %r: %s", item, reason)
            dropped.append((item, reason))
    return ExtractionResult(
        triplets=tuple(triplets),
        dropped=tuple(dropped),
        raw_reply=reply.content,
        meta=meta,
    )


_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")


def _topic_candidates(reply: str) -> List[Any]:
    try:
        return parse_extraction_reply(reply)
    except ParseFailure:
        return [_BULLET.sub("", line) for line in reply.splitlines()]


def elicit_topics(
    domain_name: str, sample_reviews: Sequence[str], k: int, backend: Backend
) -> List[str]:
    """
    Ask the backend for the k most important topics of a domain.

    Labels are case-folded and whitespace-collapsed; duplicates, blanks and
    the reserved "other" are skipped. The first k distinct labels are returned.

    :raises ElicitationIncomplete: fewer than k distinct labels in the reply.
    """
    if k < 1:
        raise PreconditionError("k must be at least 1")
    if not sample_reviews:
        raise PreconditionError("sample_reviews must not be empty")
    user_text = prompts.TOPICS_TEMPLATE.format(
        k=k,
        domain=domain_name,
        reviews="\n".join(f"- {r}" for r in sample_reviews),
    )
    reply = backend.chat([("system", prompts.TOPICS_SYSTEM), ("user", user_text)])

    labels: List[str] = []
    for candidate in _topic_candidates(reply.content):
        if not isinstance(candidate, str):
            continue
        label = " ".join(candidate.strip().strip("\"'").split()).casefold()
        if label and label != OTHER_TOPIC and label not in labels:
            labels.append(label)
    if len(labels) < k:
        raise ElicitationIncomplete(k, len(labels), labels)
    return labels[:k]
