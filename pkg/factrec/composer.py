"""Rule-based ground-truth explanations and their inverse parser. No backend calls."""

from typing import Dict, List, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, model_validator

from factrec.exceptions import EmptyInput, NotComposerFormat
from factrec.models import SENTIMENTS, StatementTriplet


class ComposerTemplate(BaseModel):
    """
    Fixed phrasing of a composed explanation. Overridable from the run
    configuration; the prefixes must stay distinguishable for parse_composed.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    positive_prefix: str = "The user would appreciate this product because "
    negative_prefix: str = "However, they may dislike that "
    degraded_negative_prefix: str = "They may dislike that "
    neutral_prefix: str = "They seem indifferent to "
    list_joiner: str = ", "
    final_joiner: str = " and "
    sentence_terminator: str = "."

    @model_validator(mode="after")
    def _distinct_prefixes(self) -> "ComposerTemplate":
        prefixes = self.prefixes()
        for i, a in enumerate(prefixes):
            if not a:
                raise ValueError("prefixes must be non-empty")
            for j, b in enumerate(prefixes):
                if i != j and b.startswith(a):
                    raise ValueError(f"prefix {a!r} is a prefix of {b!r}")
        if not self.sentence_terminator or not self.final_joiner or not self.list_joiner:
            raise ValueError("joiners and terminator must be non-empty")
        return self

    def prefixes(self) -> Tuple[str, str, str, str]:
        return (
            self.positive_prefix,
            self.negative_prefix,
            self.degraded_negative_prefix,
            self.neutral_prefix,
        )

    def prefixes_for(self, sentiment: str) -> Tuple[str, ...]:
        if sentiment == "positive":
            return (self.positive_prefix,)
        if sentiment == "negative":
            return (self.negative_prefix, self.degraded_negative_prefix)
        return (self.neutral_prefix,)


DEFAULT_TEMPLATE = ComposerTemplate()


def _lower_first(statement: str) -> str:
    return statement[:1].lower() + statement[1:]


def _join(statements: Sequence[str], tpl: ComposerTemplate) -> str:
    if len(statements) == 1:
        return statements[0]
    return tpl.list_joiner.join(statements[:-1]) + tpl.final_joiner + statements[-1]


def compose_explanation(
    triplets: Sequence[StatementTriplet], tpl: ComposerTemplate = DEFAULT_TEMPLATE
) -> str:
    """
    Compose one paragraph from a triplet list: one sentence per polarity, in
    the order positive, negative, neutral. Statements are inserted verbatim
    except for a lowercased first letter.

    :raises EmptyInput: no triplets.
    """
    if not triplets:
        raise EmptyInput("cannot compose an explanation from zero triplets")
    groups: Dict[str, List[str]] = {s: [] for s in SENTIMENTS}
    for t in triplets:
        if t.sentiment not in groups:
            raise ValueError(f"unknown sentiment {t.sentiment!r}")
        groups[t.sentiment].append(_lower_first(t.statement))

    sentences = []
    if groups["positive"]:
        sentences.append(tpl.positive_prefix + _join(groups["positive"], tpl))
    if groups["negative"]:
        # no dangling "However" without a preceding positive sentence
        prefix = tpl.negative_prefix if groups["positive"] else tpl.degraded_negative_prefix
        sentences.append(prefix + _join(groups["negative"], tpl))
    if groups["neutral"]:
        sentences.append(tpl.neutral_prefix + _join(groups["neutral"], tpl))
    return " ".join(s + tpl.sentence_terminator for s in sentences)


def _split(body: str, tpl: ComposerTemplate) -> List[str]:
    if tpl.final_joiner in body:
        head, last = body.rsplit(tpl.final_joiner, 1)
        pieces = head.split(tpl.list_joiner) + [last]
    else:
        pieces = [body]
    if any(not p.strip() for p in pieces):
        raise NotComposerFormat(f"blank statement in list {body!r:.80}")
    return pieces


def parse_composed(
    text: str, tpl: ComposerTemplate = DEFAULT_TEMPLATE
) -> Dict[str, List[str]]:
    """
    Recover the statements of a composed paragraph, grouped by sentiment.
    All three sentiments are present as keys.

    :raises NotComposerFormat: the text was not produced by compose_explanation.
    """
    result: Dict[str, List[str]] = {s: [] for s in SENTIMENTS}
    remaining = list(SENTIMENTS)
    pos = 0
    while pos < len(text):
        matched = None
        for i, sentiment in enumerate(remaining):
            for prefix in tpl.prefixes_for(sentiment):
                if text.startswith(prefix, pos):
                    matched = (i, sentiment, prefix)
                    break
            if matched:
                break
        if matched is None:
            raise NotComposerFormat(f"no composer prefix at offset {pos}")
        i, sentiment, prefix = matched
        remaining = remaining[i + 1 :]
        body_start = pos + len(prefix)

        end = -1
        for later in remaining:
            for p in tpl.prefixes_for(later):
                found = text.find(tpl.sentence_terminator + " " + p, body_start)
                if found >= 0 and (end < 0 or found < end):
                    end = found
        if end < 0:
            if not text.endswith(tpl.sentence_terminator):
                raise NotComposerFormat("text does not end with the sentence terminator")
            end = len(text) - len(tpl.sentence_terminator)
        body = text[body_start:end]
        if not body:
            raise NotComposerFormat(f"empty statement list at offset {body_start}")
        result[sentiment] = _split(body, tpl)
        pos = end + len(tpl.sentence_terminator) + 1
    if pos == 0:
        raise NotComposerFormat("empty text")
    return result


def composed_statements(text: str, tpl: ComposerTemplate = DEFAULT_TEMPLATE) -> List[str]:
    """parse_composed flattened in group order."""
    groups = parse_composed(text, tpl)
    return [s for sentiment in SENTIMENTS for s in groups[sentiment]]
