"""
Deterministic in-process backend for hermetic runs and tests.

Chat: judge prompts are answered by a normalized substring rule; otherwise
the longest fixture trigger found in the last user message picks the reply,
falling back to the default reply. NLI: identical normalized strings
entail, a single inserted or removed "not" contradicts, the rest is neutral.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from factrec.backends import Backend, BackendConfig, prompts
from factrec.cache import ResponseCache
from factrec.core import normalize_statement
from factrec.exceptions import ConfigError

logger = logging.getLogger(__name__)

ENTAIL = (0.98, 0.01, 0.01)
CONTRADICT = (0.01, 0.01, 0.98)
NEUTRAL = (0.10, 0.80, 0.10)


def load_stub_fixtures(path: Union[str, Path]) -> Dict[str, str]:
    """Read a JSON object mapping trigger substrings to scripted replies."""
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read stub fixtures {path}: {e}") from e
    if not isinstance(data, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in data.items()
    ):
        raise ConfigError(f"stub fixtures {path} must map strings to strings")
    return dict(data)


def _differs_by_not(a: List[str], b: List[str]) -> bool:
    if len(a) != len(b) + 1:
        return False
    return any(tok == "not" and a[:i] + a[i + 1 :] == b for i, tok in enumerate(a))


def stub_nli_scores(premise: str, hypothesis: str) -> Tuple[float, float, float]:
    p, h = normalize_statement(premise), normalize_statement(hypothesis)
    if p == h:
        return ENTAIL
    pt, ht = p.split(), h.split()
    if _differs_by_not(pt, ht) or _differs_by_not(ht, pt):
        return CONTRADICT
    return NEUTRAL


def stub_judge_answer(statement: str, context: str) -> str:
    s = normalize_statement(statement)
    return "yes" if s and s in normalize_statement(context) else "no"


class StubBackend(Backend):
    cache_namespace = "stub:"

    def __init__(
        self,
        cfg: BackendConfig,
        cache: Optional[ResponseCache] = None,
        fixtures: Optional[Mapping[str, str]] = None,
        default_reply: str = "[]",
    ):
        super().__init__(cfg, cache)
        # longest trigger first so specific fixtures beat generic ones
        self.fixtures = sorted((fixtures or {}).items(), key=lambda kv: (-len(kv[0]), kv[0]))
        self.default_reply = default_reply

    def _reply_for(self, messages: List[Dict[str, str]]) -> str:
        users = [m["content"] for m in messages if m["role"] == "user"]
        last = users[-1] if users else ""
        # judge prompts quote explanation text, which may contain extraction triggers
        parsed = prompts.parse_judge_prompt(last)
        if parsed is not None:
            return stub_judge_answer(*parsed)
        for trigger, reply in self.fixtures:
            if trigger in last:
                return reply
        return self.default_reply

    def _post_chat(self, payload: Dict[str, Any]) -> Any:
        return {
            "created": 0,
            "model": self.cfg.model_id,
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": self._reply_for(payload["messages"])},
                    "finish_reason": "stop",
                }
            ],
        }

    def _post_nli(self, payload: Dict[str, Any]) -> Any:
        e, n, c = stub_nli_scores(payload["premise"], payload["hypothesis"])
        return {"entailment": e, "neutral": n, "contradiction": c}
