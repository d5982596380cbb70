"""Chat-completion backends: OpenAI-compatible HTTP, Ollama-native, scripted mock.

The HTTP clients retry transport failures and retryable statuses with
exponential backoff (backoff_base * 2^attempt) and surface BackendError with
the attempt count.  The scripted mock replays a fixed list of replies and
fails loudly when exhausted, which keeps orchestrator tests fully
deterministic.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import httpx

_RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}


class BackendError(RuntimeError):
    def __init__(self, message: str, status: Optional[int] = None, attempts: int = 1):
        super().__init__(message)
        self.status = status
        self.attempts = attempts


class BackendTimeout(BackendError):
    pass


class ScriptExhausted(RuntimeError):
    """A scripted backend was asked for more replies than it holds."""


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"bad role: {self.role}")
        if self.role in ("user", "assistant") and not self.content:
            raise ValueError(f"{self.role} message with empty content")

    def to_wire(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass
class BackendConfig:
    base_url: str = "http://127.0.0.1:11434/v1"
    model: str = "llama3:8b"
    api_key: Optional[str] = None
    temperature: float = 0.0
    seed: Optional[int] = None
    max_tokens: int = 1024
    request_timeout: float = 120.0
    max_retries: int = 3
    backoff_base: float = 0.5

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.request_timeout <= 0:
            raise ValueError("request_timeout must be positive")

    @classmethod
    def from_env(cls, prefix: str = "WARDROUND", **overrides) -> "BackendConfig":
        env = {
            "base_url": os.environ.get(f"{prefix}_BASE_URL"),
            "model": os.environ.get(f"{prefix}_MODEL"),
            "api_key": os.environ.get(f"{prefix}_API_KEY"),
        }
        kwargs = {k: v for k, v in env.items() if v is not None}
        kwargs.update(overrides)
        return cls(**kwargs)


def _check_first_system(messages: Sequence[ChatMessage]) -> None:
    if not messages:
        raise ValueError("messages must be non-empty")
    if messages[0].role != "system":
        raise ValueError("first message must be the system prompt")


class _HttpBackend:
    """Shared retry machinery for the HTTP backends."""

    def __init__(self, config: BackendConfig, transport: Optional[httpx.BaseTransport] = None,
                 sleeper: Callable[[float], None] = time.sleep):
        self.config = config
        self._sleep = sleeper
        self._client = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            timeout=config.request_timeout,
            transport=transport,
        )
        self.last_attempts = 0
        self.total_requests = 0

    @property
    def model_id(self) -> str:
        return self.config.model

    def close(self) -> None:
        self._client.close()

    def _headers(self) -> dict:
        if self.config.api_key:
            return {"Authorization": f"Bearer {self.config.api_key}"}
        return {}

    def _post_with_retry(self, path: str, payload: dict) -> httpx.Response:
        cfg = self.config
        attempts = 0
        last_exc: Optional[Exception] = None
        last_status: Optional[int] = None
        for attempt in range(cfg.max_retries + 1):
            attempts = attempt + 1
            self.total_requests += 1
            try:
                resp = self._client.post(path, json=payload, headers=self._headers())
            except httpx.TimeoutException as exc:
                last_exc = exc
            except httpx.TransportError as exc:
                last_exc = exc
            else:
                if resp.status_code == 200:
                    self.last_attempts = attempts
                    return resp
                last_status = resp.status_code
                if resp.status_code not in _RETRYABLE_STATUS:
                    self.last_attempts = attempts
                    raise BackendError(
                        f"backend returned {resp.status_code}: {resp.text[:200]}",
                        status=resp.status_code, attempts=attempts)
            if attempt < cfg.max_retries:
                self._sleep(cfg.backoff_base * (2 ** attempt))
        self.last_attempts = attempts
        if isinstance(last_exc, httpx.TimeoutException):
            raise BackendTimeout(f"backend timed out after {attempts} attempts", attempts=attempts)
        raise BackendError(
            f"backend unreachable after {attempts} attempts: {last_status or last_exc}",
            status=last_status, attempts=attempts)


class OpenAiCompatBackend(_HttpBackend):
    """Client for /chat/completions endpoints (vLLM, Ollama's v1 shim, etc.)."""

    def _payload(self, messages: Sequence[ChatMessage], stream: bool) -> dict:
        cfg = self.config
        payload = {
            "model": cfg.model,
            "messages": [m.to_wire() for m in messages],
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
            "stream": stream,
        }
        if cfg.seed is not None:
            payload["seed"] = cfg.seed
        return payload

    def chat(self, messages: Sequence[ChatMessage]) -> ChatMessage:
        _check_first_system(messages)
        resp = self._post_with_retry("/chat/completions", self._payload(messages, stream=False))
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise BackendError(f"malformed completion body: {exc}",
                               status=resp.status_code, attempts=self.last_attempts) from exc
        if not content:
            raise BackendError("backend returned an empty completion",
                               status=resp.status_code, attempts=self.last_attempts)
        return ChatMessage("assistant", content)

    def chat_stream(self, messages: Sequence[ChatMessage]) -> Iterator[str]:
        _check_first_system(messages)
        with self._client.stream("POST", "/chat/completions",
                                 json=self._payload(messages, stream=True),
                                 headers=self._headers()) as resp:
            if resp.status_code != 200:
                raise BackendError(f"backend returned {resp.status_code}",
                                   status=resp.status_code)
            for line in resp.iter_lines():
                if not line.startswith("data:"):
                    continue
                data = line[len("data:"):].strip()
                if data == "[DONE]":
                    break
                try:
                    delta = json.loads(data)["choices"][0].get("delta", {})
                except (KeyError, IndexError, ValueError):
                    continue
                chunk = delta.get("content")
                if chunk:
                    yield chunk


class OllamaBackend(_HttpBackend):
    """Client for the Ollama-native /api/chat endpoint."""

    def chat(self, messages: Sequence[ChatMessage]) -> ChatMessage:
        _check_first_system(messages)
        cfg = self.config
        options = {"temperature": cfg.temperature, "num_predict": cfg.max_tokens}
        if cfg.seed is not None:
            options["seed"] = cfg.seed
        payload = {
            "model": cfg.model,
            "messages": [m.to_wire() for m in messages],
            "stream": False,
            "options": options,
        }
        resp = self._post_with_retry("/api/chat", payload)
        try:
            content = resp.json()["message"]["content"]
        except (KeyError, ValueError) as exc:
            raise BackendError(f"malformed completion body: {exc}",
                               status=resp.status_code, attempts=self.last_attempts) from exc
        if not content:
            raise BackendError("backend returned an empty completion",
                               status=resp.status_code, attempts=self.last_attempts)
        return ChatMessage("assistant", content)

    def chat_stream(self, messages: Sequence[ChatMessage]) -> Iterator[str]:
        yield self.chat(messages).content


@dataclass
class ScriptedBackend:
    """Replays scripted replies in order; raises ScriptExhausted past the end."""

    script: Sequence[str]
    model: str = "scripted-mock"
    _cursor: int = field(default=0, init=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False)

    def __post_init__(self):
        if not self.script:
            raise ValueError("script must be non-empty")

    @property
    def model_id(self) -> str:
        return self.model

    @property
    def calls(self) -> int:
        return self._cursor

    def chat(self, messages: Sequence[ChatMessage]) -> ChatMessage:
        _check_first_system(messages)
        with self._lock:
            if self._cursor >= len(self.script):
                raise ScriptExhausted(
                    f"script of length {len(self.script)} exhausted at call {self._cursor + 1}")
            reply = self.script[self._cursor]
            self._cursor += 1
        return ChatMessage("assistant", reply)

    def chat_stream(self, messages: Sequence[ChatMessage]) -> Iterator[str]:
        content = self.chat(messages).content
        words = content.split(" ")
        for i in range(0, len(words), 4):
            chunk = " ".join(words[i:i + 4])
            yield chunk if i + 4 >= len(words) else chunk + " "


def scripted_mock(script: Sequence[str], model: str = "scripted-mock") -> ScriptedBackend:
    return ScriptedBackend(script=list(script), model=model)


def make_backend(kind: str, config: Optional[BackendConfig] = None,
                 script: Optional[Sequence[str]] = None):
    """Backend factory for config-driven construction."""
    if kind == "openai":
        return OpenAiCompatBackend(config or BackendConfig())
    if kind == "ollama":
        return OllamaBackend(config or BackendConfig(base_url="http://127.0.0.1:11434"))
    if kind == "scripted":
        return scripted_mock(script or [])
    raise ValueError(f"unknown backend kind: {kind}")
