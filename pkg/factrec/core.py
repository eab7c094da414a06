import re
import unicodedata

from factrec.exceptions import EmptyStatement, InvalidSentiment, MultilineStatement
from factrec.models import (
    OTHER_TOPIC,
    SENTIMENTS,
    TOPIC_COERCED,
    DomainConfig,
    StatementTriplet,
)

_TRAILING_TERMINALS = re.compile(r"[\s.!?]+$")


def normalize_statement(text: str) -> str:
    """
    NFKC-normalize and case-fold, collapse whitespace and drop trailing
    sentence punctuation.
    Used for unique-statement counting and by the stub backends.
    """
    folded = unicodedata.normalize("NFKC", unicodedata.normalize("NFKC", text).casefold())
    collapsed = " ".join(folded.split())
    # a run like "!!" or ". ." is removed whole so the function stays idempotent
    return _TRAILING_TERMINALS.sub("", collapsed)


def validate_triplet(t: StatementTriplet, cfg: DomainConfig) -> StatementTriplet:
    """
    Check a triplet against the domain's topic and sentiment sets.

    The statement text is never changed. A topic matching a configured label
    case-insensitively takes the configured spelling; an unknown topic becomes
    "other" and the triplet is flagged topic_coerced.

    :raises EmptyStatement: statement is blank.
    :raises MultilineStatement: statement spans several lines.
    :raises InvalidSentiment: sentiment is not positive/negative/neutral.
    """
    if not t.statement.strip():
        raise EmptyStatement("statement is empty")
    if "\n" in t.statement or "\r" in t.statement:
        raise MultilineStatement(f"statement spans several lines: {t.statement!r}")
    if t.sentiment not in SENTIMENTS:
        raise InvalidSentiment(f"sentiment {t.sentiment!r} not in {list(SENTIMENTS)}")

    wanted = " ".join(t.topic.split()).casefold()
    for topic in cfg.topics:
        if topic == wanted:
            if topic == t.topic:
                return t
            return t.model_copy(update={"topic": topic})
    if wanted == OTHER_TOPIC:
        return t if t.topic == OTHER_TOPIC else t.model_copy(update={"topic": OTHER_TOPIC})
    flags = t.flags if TOPIC_COERCED in t.flags else t.flags + (TOPIC_COERCED,)
    return t.model_copy(update={"topic": OTHER_TOPIC, "flags": flags})
