import re
from typing import Optional, Tuple

JUDGE_PROMPT_ID = "judge-v1"
EXTRACTION_PROMPT_ID = "extract-v1"

JUDGE_SYSTEM = (
    "You are a strict fact checker. You decide whether a statement is supported "
    "by a context text, using only the context."
)

JUDGE_TEMPLATE = (
    "Context:\n{context}\n\n"
    "Statement:\n{statement}\n\n"
    "Is the statement supported by the context? {answer_instruction}"
)

JUDGE_ANSWERS = {
    "binary": "Answer with a single word: yes or no.",
    "graded": "Answer with a single word: yes, partial or no.",
}

_JUDGE_RE = re.compile(
    r"^Context:\n(?P<context>.*)\n\nStatement:\n(?P<statement>.*)\n\nIs the statement supported by the context\?",
    re.DOTALL,
)

EXTRACTION_SYSTEM = (
    "You extract atomic explanatory statements from product reviews. An atomic "
    "statement is a short polarized fact expressing the user's opinion about a "
    "single attribute or topic of the item."
)

EXTRACTION_TEMPLATE = (
    "Extract every atomic explanatory statement from the review below and assign "
    "each one a topic and a sentiment. Ignore content that does not explain the "
    "user's opinion of the item (gift stories, shipping anecdotes, brand history).\n\n"
    "Topics (use \"other\" when none fits):\n{topics}\n\n"
    "Sentiments: {sentiments}\n\n"
    "{examples}"
    "Review:\n{review}\n"
)

OUTPUT_SCHEMA_NOTE = (
    'Reply with only a JSON array of objects with the keys "statement", "topic" '
    'and "sentiment". Reply [] when the review contains no explanatory statement.'
)

EXTRACTION_RETRY = (
    "Your previous reply could not be parsed. Reply with only the JSON array, "
    "nothing else."
)

TOPICS_SYSTEM = "You help design review analysis schemas for e-commerce domains."

TOPICS_TEMPLATE = (
    "List the {k} most important topics customers use to explain their opinion "
    "of products in the \"{domain}\" category. Sample reviews:\n\n{reviews}\n\n"
    "Reply with only a JSON array of {k} short lowercase topic labels."
)


def render_judge_prompt(statement: str, context: str, answer_map: str = "binary") -> str:
    return JUDGE_TEMPLATE.format(
        context=context,
        statement=statement,
        answer_instruction=JUDGE_ANSWERS[answer_map],
    )


def parse_judge_prompt(text: str) -> Optional[Tuple[str, str]]:
    """Inverse of render_judge_prompt: (statement, context) or None."""
    m = _JUDGE_RE.match(text)
    if m is None:
        return None
    return m.group("statement"), m.group("context")
