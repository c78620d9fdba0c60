"""
LLM Gateway - chat-completion access with live, record and replay modes
"""
import hashlib
import json
import logging
import os
import re
import threading
import time
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import requests
from pydantic import BaseModel, Field

from .artifacts import read_json, write_json
from .errors import AmbiguousReplyError, AuthError, CacheMissError, ParseError, ProviderError
from .models import GatewayMode, LlmRequest, LlmResponse, RequestKind

logger = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "https://api.openai.com/v1/chat/completions"
DEFAULT_CACHE_DIR = ".spade_cache"

_RETRYABLE_STATUS = {429, 500, 502, 503, 504}
_FIRST_WORD = re.compile(r"\s*([A-Za-z]+)")

BOOLEAN_SYSTEM_TEXT = (
    "You judge the output of an LLM pipeline. "
    "Answer the question with exactly one word: yes or no."
)


class GatewayConfig(BaseModel):
    """Gateway settings, normally read from SPADE_* environment variables"""
    mode: GatewayMode = GatewayMode.REPLAY
    api_key: Optional[str] = None
    endpoint: str = DEFAULT_ENDPOINT
    cache_dir: Path = Path(DEFAULT_CACHE_DIR)
    model: str = "gpt-4"
    temperature: float = Field(0.7, ge=0.0, le=1.0, description="temperature for generation calls")
    timeout: float = Field(60.0, gt=0)
    max_attempts: int = Field(3, ge=1)
    backoff: float = Field(1.0, ge=0.0, description="first retry delay in seconds, doubled per retry")

    @classmethod
    def from_env(cls, **overrides: Any) -> "GatewayConfig":
        values: Dict[str, Any] = {
            "mode": os.getenv("SPADE_LLM_MODE", GatewayMode.REPLAY.value),
            "api_key": os.getenv("SPADE_LLM_API_KEY") or None,
            "endpoint": os.getenv("SPADE_LLM_ENDPOINT", DEFAULT_ENDPOINT),
            "cache_dir": os.getenv("SPADE_CACHE_DIR", DEFAULT_CACHE_DIR),
            "model": os.getenv("SPADE_LLM_MODEL", "gpt-4"),
            "temperature": os.getenv("SPADE_LLM_TEMPERATURE", "0.7"),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


def _normalize(text: str) -> str:
    return " ".join(text.split())


def cache_key(request: LlmRequest) -> str:
    """
    Hex sha256 of the whitespace-normalized request; stable across runs and platforms
    """
    canonical = json.dumps(
        {
            "request_kind": request.request_kind.value,
            "system_text": _normalize(request.system_text),
            "user_text": _normalize(request.user_text),
            "temperature": float(request.temperature),
        },
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=True,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class LlmGateway:
    """
    Single entry point for every model call made by the pipeline.

    replay answers from the cache only and never touches the network; record
    serves cache hits and forwards misses, storing the reply; live always
    forwards and stores nothing.
    """

    def __init__(self, config: Optional[GatewayConfig] = None, session: Any = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.config = config or GatewayConfig.from_env()
        self.session = session if session is not None else requests.Session()
        self.sleep = sleep
        self._lock = threading.Lock()
        self._memory: Dict[str, str] = {}
        self.network_calls = 0

    @property
    def mode(self) -> GatewayMode:
        return self.config.mode

    @property
    def generation_temperature(self) -> float:
        return self.config.temperature

    def _cache_path(self, key: str) -> Path:
        return self.config.cache_dir / f"{key}.json"

    def _lookup(self, key: str) -> Optional[str]:
        with self._lock:
            if key in self._memory:
                return self._memory[key]
        path = self._cache_path(key)
        if not path.exists():
            return None
        try:
            text = read_json(path)["response"]
        except (ParseError, KeyError, TypeError) as e:
            logger.warning("Ignoring unreadable cache entry %s: %s", path, e)
            return None
        with self._lock:
            self._memory[key] = text
        return text

    def _store(self, key: str, request: LlmRequest, text: str) -> None:
        with self._lock:
            self._memory[key] = text
            write_json(self._cache_path(key), {
                "request": request.model_dump(mode="json"),
                "response": text,
            })

    def complete(self, request: LlmRequest) -> LlmResponse:
        key = cache_key(request)

        if self.mode != GatewayMode.LIVE:
            cached = self._lookup(key)
            if cached is not None:
                logger.debug("Cache hit %s (%s)", key[:12], request.request_kind.value)
                return LlmResponse(text=cached, cached=True)
            if self.mode == GatewayMode.REPLAY:
                raise CacheMissError(
                    f"No recorded reply for {request.request_kind.value} request {key} in {self.config.cache_dir}"
                )

        text = self._forward(request)
        if self.mode == GatewayMode.RECORD:
            self._store(key, request, text)
        return LlmResponse(text=text, cached=False)

    def _forward(self, request: LlmRequest) -> str:
        if not self.config.api_key:
            raise AuthError("SPADE_LLM_API_KEY is required in live and record modes")

        messages = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages.append({"role": "user", "content": request.user_text})
        payload = {
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
        }
        headers = {"Authorization": f"Bearer {self.config.api_key}"}

        last_error = "no attempt made"
        for attempt in range(self.config.max_attempts):
            if attempt:
                delay = self.config.backoff * (2 ** (attempt - 1))
                logger.warning("Retrying %s request in %.1fs (%s)", request.request_kind.value, delay, last_error)
                self.sleep(delay)
            with self._lock:
                self.network_calls += 1
            try:
                response = self.session.post(
                    self.config.endpoint, json=payload, headers=headers, timeout=self.config.timeout
                )
            except requests.RequestException as e:
                last_error = f"transport error: {e}"
                continue

            if response.status_code in (401, 403):
                raise AuthError(f"Provider rejected the API key (HTTP {response.status_code})")
            if response.status_code in _RETRYABLE_STATUS:
                last_error = f"HTTP {response.status_code}"
                continue
            if response.status_code >= 400:
                raise ProviderError(f"Provider returned HTTP {response.status_code}: {response.text[:200]}")

            try:
                return response.json()["choices"][0]["message"]["content"] or ""
            except (ValueError, KeyError, IndexError, TypeError) as e:
                raise ProviderError(f"Unexpected provider payload: {e}") from e

        raise ProviderError(f"Provider failed after {self.config.max_attempts} attempts: {last_error}")

    def ask_boolean(self, formatted_prompt: str, response: str, question: str) -> bool:
        """
        Yes/no judgment about a response; True iff the reply starts with "yes"
        """
        user_text = (
            f"Prompt given to the pipeline:\n{formatted_prompt}\n\n"
            f"Response produced by the pipeline:\n{response}\n\n"
            f"Question: {question}\n"
            'Answer exactly "yes" or "no".'
        )
        reply = self.complete(LlmRequest(
            system_text=BOOLEAN_SYSTEM_TEXT,
            user_text=user_text,
            temperature=0.0,
            request_kind=RequestKind.ASK_BOOLEAN,
        )).text

        match = _FIRST_WORD.match(reply)
        token = match.group(1).lower() if match else ""
        if token == "yes":
            return True
        if token == "no":
            return False
        raise AmbiguousReplyError(f"Expected yes or no, got {reply[:60]!r}")
