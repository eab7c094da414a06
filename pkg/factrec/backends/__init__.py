"""Scoring backends: LLM chat (extraction and judging) and NLI classification."""

import logging
import os
import re
from threading import BoundedSemaphore, Lock
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator
from tenacity import (
    RetryCallState,
    RetryError,
    Retrying,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)
from typing_extensions import Literal

from factrec.backends import prompts
from factrec.cache import ResponseCache, cache_key, payload_digest
from factrec.exceptions import (
    BackendError,
    BackendHTTPError,
    BackendUnavailable,
    PreconditionError,
)
from factrec.models import NliVerdict

logger = logging.getLogger(__name__)

Message = Tuple[str, str]

ROLES = ("system", "user", "assistant")

ANSWER_MAPS: Dict[str, Dict[str, float]] = {
    "binary": {"yes": 1.0, "no": 0.0},
    "graded": {"yes": 1.0, "partial": 0.5, "no": 0.0},
}


class BackendConfig(BaseModel):
    """
    Connection and behaviour settings of one backend.

    :param kind: "http" talks to a server, "stub" answers deterministically in process.
    :param base_url: server root, e.g. "http://localhost:8000/v1".
    :param base_url_env_var: environment variable that, when set, overrides base_url.
    :param path: endpoint below base_url; defaults to /chat/completions for chat and /nli for NLI.
    :param api_key_env_var: environment variable holding the bearer token, optional for local servers.
    :param max_retries: retries after the first attempt on transport errors, 408, 429 and 5xx.
    :param max_in_flight: upper bound of concurrently outstanding requests.
    :param temperature: fixed at 0.0.
    :param cache_path: persistent response cache file, None keeps responses in memory only.
    :param nli_label_scores: accept label/score arrays from the NLI server.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["http", "stub"] = "http"
    base_url: str = "http://localhost:8000/v1"
    base_url_env_var: Optional[str] = None
    path: Optional[str] = None
    model_id: str = "stub"
    api_key_env_var: str = "FACTREC_API_KEY"
    timeout: float = Field(default=60.0, gt=0)
    max_retries: int = Field(default=3, ge=0)
    max_in_flight: int = Field(default=4, ge=1)
    temperature: float = 0.0
    max_tokens: int = Field(default=1024, ge=1)
    backoff_seconds: float = Field(default=0.5, ge=0)
    cache_path: Optional[str] = None
    memory_cache_size: int = Field(default=10000, ge=1)
    memory_cache_policy: Literal["tlfu", "lru"] = "tlfu"
    nli_label_scores: bool = False

    @field_validator("temperature")
    @classmethod
    def _deterministic(cls, temperature: float) -> float:
        if temperature != 0.0:
            raise ValueError("temperature is fixed at 0.0")
        return temperature

    def resolved_base_url(self) -> str:
        if self.base_url_env_var:
            override = os.getenv(self.base_url_env_var, "").strip()
            if override:
                return override
        return self.base_url


class JudgeRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    statement: str
    context_text: str
    prompt_template_id: str = prompts.JUDGE_PROMPT_ID

    @field_validator("statement", "context_text")
    @classmethod
    def _non_empty(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("must be non-empty")
        return value


class JudgeScore(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: float = Field(ge=0.0, le=1.0)
    raw_label: str
    parse_attempts: int = Field(ge=1)
    parse_failed: bool = False


class ChatReply(BaseModel):
    model_config = ConfigDict(frozen=True)

    content: str
    model: str
    created: int = 0


class TransientBackendError(BackendError):
    """Retryable failure: transport error, timeout, 408, 429 or 5xx."""

    def __init__(self, message: str, status_code: Optional[int] = None, body: str = ""):
        super().__init__(message)
        self.status_code = status_code
        self.body = body


def check_messages(messages: Sequence[Message]) -> List[Dict[str, str]]:
    if not messages:
        raise PreconditionError("messages must not be empty")
    if messages[0][0] not in ("system", "user"):
        raise PreconditionError(f"first message role must be system or user, got {messages[0][0]!r}")
    out = []
    for role, content in messages:
        if role not in ROLES:
            raise PreconditionError(f"unknown role {role!r}")
        out.append({"role": role, "content": content})
    return out


class Backend:
    """
    Shared machinery of every backend: content-addressed caching of raw
    responses, the max_in_flight bound and the retry loop. Subclasses only
    implement the transport (`_post_chat`, `_post_nli`).
    """

    chat_path = "/chat/completions"
    nli_path = "/nli"
    # keeps stub answers apart from real ones in a shared cache file
    cache_namespace = ""

    def __init__(self, cfg: BackendConfig, cache: Optional[ResponseCache] = None):
        self.cfg = cfg
        self.cache = (
            cache
            if cache is not None
            else ResponseCache(None, cfg.memory_cache_size, cfg.memory_cache_policy)
        )
        self._slots = BoundedSemaphore(cfg.max_in_flight)
        self._counter_lock = Lock()
        self.requests_sent = 0
        self.renormalized_count = 0

    @property
    def model_id(self) -> str:
        return self.cfg.model_id

    def _post_chat(self, payload: Dict[str, Any]) -> Any:
        raise NotImplementedError

    def _post_nli(self, payload: Dict[str, Any]) -> Any:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def _send(self, post: Callable[[Dict[str, Any]], Any], payload: Dict[str, Any]) -> Any:
        def log_retry(state: RetryCallState) -> None:
            exc = state.outcome.exception() if state.outcome else None
            logger.warning(
                "%s: retrying request (attempt %d/%d) after error: %s",
                self.model_id,
                state.attempt_number,
                self.cfg.max_retries + 1,
                exc,
            )

        def attempt() -> Any:
            with self._slots:
                with self._counter_lock:
                    self.requests_sent += 1
                return post(payload)

        retrying = Retrying(
            retry=retry_if_exception_type(TransientBackendError),
            stop=stop_after_attempt(self.cfg.max_retries + 1),
            wait=wait_exponential(multiplier=self.cfg.backoff_seconds, max=30),
            before_sleep=log_retry,
            reraise=True,
        )
        try:
            return retrying(attempt)
        except TransientBackendError as e:
            if e.status_code is not None:
                raise BackendHTTPError(e.status_code, e.body) from e
            raise BackendUnavailable(
                f"{self.model_id}: unavailable after {self.cfg.max_retries + 1} attempt(s): {e}"
            ) from e
        except RetryError as e:  # pragma: no cover - reraise=True surfaces the original
            raise BackendUnavailable(str(e)) from e

    def chat(self, messages: Sequence[Message]) -> ChatReply:
        payload: Dict[str, Any] = {
            "model": self.cfg.model_id,
            "messages": check_messages(messages),
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
        }
        key = cache_key("chat", payload_digest(payload), self.cache_namespace + self.cfg.model_id)

        def load() -> Any:
            body = self._send(self._post_chat, payload)
            # only well-formed replies reach the cache
            self._chat_reply(body)
            return body

        return self._chat_reply(self.cache.get_or_compute(key, load))

    def _chat_reply(self, body: Any) -> ChatReply:
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as e:
            raise BackendError(f"{self.model_id}: malformed chat reply: {body!r:.200}") from e
        if not isinstance(content, str):
            raise BackendError(f"{self.model_id}: chat reply content is not text")
        created = body.get("created") if isinstance(body, dict) else None
        return ChatReply(
            content=content,
            model=str(body.get("model") or self.cfg.model_id),
            created=int(created) if isinstance(created, (int, float)) else 0,
        )

    def classify(self, premise: str, hypothesis: str) -> NliVerdict:
        if not premise.strip() or not hypothesis.strip():
            raise PreconditionError("premise and hypothesis must be non-empty")
        payload = {"premise": premise, "hypothesis": hypothesis}
        key = cache_key("nli", payload_digest(payload), self.cache_namespace + self.cfg.model_id)

        def load() -> Any:
            body = self._send(self._post_nli, payload)
            self._verdict(body)
            return body

        verdict = self._verdict(self.cache.get_or_compute(key, load))
        if verdict.renormalized:
            with self._counter_lock:
                self.renormalized_count += 1
            logger.debug("%s: renormalized NLI verdict %s", self.model_id, verdict)
        return verdict

    def _verdict(self, body: Any) -> NliVerdict:
        scores = self._nli_scores(body)
        try:
            return NliVerdict.from_scores(*scores)
        except ValueError as e:
            raise BackendError(f"{self.model_id}: unusable NLI scores {scores}") from e

    def _nli_scores(self, body: Any) -> Tuple[float, float, float]:
        try:
            if self.cfg.nli_label_scores:
                return _scores_from_labels(body)
            return (
                float(body["entailment"]),
                float(body["neutral"]),
                float(body["contradiction"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise BackendError(f"{self.model_id}: malformed NLI reply: {body!r:.200}") from e


def _scores_from_labels(body: Any) -> Tuple[float, float, float]:
    if isinstance(body, dict):
        pairs = list(zip(body["labels"], body["scores"]))
    else:
        pairs = [(item["label"], item["score"]) for item in body]
    found: Dict[str, float] = {}
    for label, score in pairs:
        name = str(label).strip().lower()
        for canonical in ("entailment", "neutral", "contradiction"):
            if name.startswith(canonical[:6]):
                found[canonical] = float(score)
    return (found["entailment"], found["neutral"], found["contradiction"])


_ANSWER_RE = re.compile(r"[\W_]*([A-Za-z]+)")


class LlmJudge:
    """
    f_LLM: scores whether a statement is supported by a context text.

    :param backend: chat backend answering the judge prompt.
    :param answer_map: "binary" (yes/no) or "graded" (yes/partial/no).
    """

    def __init__(self, backend: Backend, answer_map: str = "binary"):
        if answer_map not in ANSWER_MAPS:
            raise ValueError(f"unknown answer map {answer_map!r}")
        self.backend = backend
        self.answer_map = answer_map
        self.parse_failures = 0
        self._lock = Lock()

    def score(self, req: JudgeRequest) -> JudgeScore:
        mapping = ANSWER_MAPS[self.answer_map]
        messages: List[Message] = [
            ("system", prompts.JUDGE_SYSTEM),
            ("user", prompts.render_judge_prompt(req.statement, req.context_text, self.answer_map)),
        ]
        reply = ""
        for attempt in (1, 2):
            reply = self.backend.chat(messages).content
            m = _ANSWER_RE.match(reply)
            label = m.group(1).lower() if m else ""
            if label in mapping:
                return JudgeScore(value=mapping[label], raw_label=reply, parse_attempts=attempt)
            messages = messages + [
                ("assistant", reply),
                ("user", prompts.JUDGE_ANSWERS[self.answer_map]),
            ]
        with self._lock:
            self.parse_failures += 1
        logger.debug("judge reply not understood after re-ask: %r", reply)
        return JudgeScore(value=0.0, raw_label=reply, parse_attempts=2, parse_failed=True)

    def __call__(self, statement: str, context: str) -> float:
        # an empty text supports nothing
        if not context.strip() or not statement.strip():
            return 0.0
        return self.score(JudgeRequest(statement=statement, context_text=context)).value


def judge_consistency(
    req: JudgeRequest, backend: Backend, answer_map: str = "binary"
) -> JudgeScore:
    return LlmJudge(backend, answer_map).score(req)


def nli_classify(premise: str, hypothesis: str, backend: Backend) -> NliVerdict:
    return backend.classify(premise, hypothesis)


def chat_complete(messages: Sequence[Message], backend: Backend) -> str:
    return backend.chat(messages).content


def create_backend(
    cfg: BackendConfig,
    cache: Optional[ResponseCache] = None,
    stub_fixtures: Optional[Mapping[str, str]] = None,
    force_stub: bool = False,
) -> Backend:
    """
    Build the backend described by cfg; force_stub swaps in the deterministic
    stub whatever cfg.kind says.
    """
    if force_stub or cfg.kind == "stub":
        from factrec.backends.stub import StubBackend

        return StubBackend(cfg, cache=cache, fixtures=stub_fixtures)
    from factrec.backends.http import HttpBackend

    return HttpBackend(cfg, cache=cache)


__all__ = [
    "Backend",
    "BackendConfig",
    "ChatReply",
    "JudgeRequest",
    "JudgeScore",
    "LlmJudge",
    "chat_complete",
    "create_backend",
    "judge_consistency",
    "nli_classify",
]
