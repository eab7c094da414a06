import json
import logging
import os
from typing import Any, Dict, Optional

import httpx

from factrec.backends import Backend, BackendConfig, TransientBackendError
from factrec.cache import ResponseCache, canonical_json
from factrec.exceptions import BackendError, BackendHTTPError

logger = logging.getLogger(__name__)

TRANSIENT_STATUS = frozenset({408, 429, 500, 502, 503, 504})


class HttpBackend(Backend):
    """
    Client for an OpenAI-compatible chat server and a JSON NLI server.

    Request bodies are the canonical JSON of the payload (sorted keys, no
    insignificant whitespace), so identical requests are byte-identical on
    the wire as well as in the cache.

    :param transport: optional httpx transport, used by tests to stand in for the server.
    """

    def __init__(
        self,
        cfg: BackendConfig,
        cache: Optional[ResponseCache] = None,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        super().__init__(cfg, cache)
        headers = {"Content-Type": "application/json"}
        api_key = os.getenv(cfg.api_key_env_var, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self.client = httpx.Client(
            base_url=cfg.resolved_base_url(),
            timeout=cfg.timeout,
            headers=headers,
            transport=transport,
        )

    def _post(self, path: str, payload: Dict[str, Any]) -> Any:
        try:
            resp = self.client.post(path, content=canonical_json(payload))
        except httpx.TransportError as e:
            # timeouts are transport errors too
            raise TransientBackendError(f"{type(e).__name__}: {e}") from e
        if resp.status_code in TRANSIENT_STATUS:
            raise TransientBackendError(
                f"HTTP {resp.status_code}", status_code=resp.status_code, body=resp.text[:200]
            )
        if resp.status_code >= 400:
            raise BackendHTTPError(resp.status_code, resp.text[:200])
        try:
            return resp.json()
        except json.JSONDecodeError as e:
            raise BackendError(f"{self.model_id}: reply is not JSON: {resp.text[:200]!r}") from e

    def _post_chat(self, payload: Dict[str, Any]) -> Any:
        return self._post(self.cfg.path or self.chat_path, payload)

    def _post_nli(self, payload: Dict[str, Any]) -> Any:
        return self._post(self.cfg.path or self.nli_path, payload)

    def close(self) -> None:
        self.client.close()
