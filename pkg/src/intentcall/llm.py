"""Pluggable LLM backends: scripted mock replay and an OpenAI-style HTTP client."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Protocol

import httpx

from .digest import prompt_digest
from .errors import BackendUnavailable, ConfigError, MissingScript, PreconditionViolation, RetriesExhausted

log = logging.getLogger(__name__)

API_KEY_ENV = "DROIDCALL_API_KEY"


class LLMBackend(Protocol):
    def complete(self, prompt: str, system: str | None = None) -> str: ...


@dataclass(frozen=True)
class LLMBackendConfig:
    backend: str = "mock"
    endpoint: str | None = None
    model_name: str = "mock"
    temperature: float = 0.0
    max_retries: int = 2
    timeout: float = 60.0
    script_path: str | None = None

    def __post_init__(self) -> None:
        if self.backend not in ("mock", "http"):
            raise ConfigError(f"backend must be 'mock' or 'http', got {self.backend!r}")
        if self.backend == "http" and not self.endpoint:
            raise ConfigError("the http backend needs an endpoint")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")


def chat_key(prompt: str, system: str | None = None) -> str:
    """The text a mock script is keyed on: the prompt, preceded by the system text if any."""
    return prompt if system is None else f"{system}\n\n{prompt}"


class MockBackend:
    """Replays scripted responses keyed by the FNV-1a digest of the prompt."""

    def __init__(self, script: Mapping[str, str] | None = None, fallback: Callable[[str], str] | None = None) -> None:
        self.script = dict(script or {})
        self.fallback = fallback

    @classmethod
    def from_file(cls, path: str | Path) -> MockBackend:
        return cls(json.loads(Path(path).read_text("utf-8")))

    def add(self, prompt: str, response: str, system: str | None = None) -> str:
        digest = prompt_digest(chat_key(prompt, system))
        self.script[digest] = response
        return digest

    def complete(self, prompt: str, system: str | None = None) -> str:
        if not prompt:
            raise PreconditionViolation("prompt must be non-empty")
        key = chat_key(prompt, system)
        digest = prompt_digest(key)
        if digest in self.script:
            return self.script[digest]
        if self.fallback is not None:
            return self.fallback(key)
        raise MissingScript(digest)


class RecordingBackend:
    """Wraps another backend and records every exchange as a replayable script."""

    def __init__(self, inner: LLMBackend) -> None:
        self.inner = inner
        self.script: dict[str, str] = {}

    def complete(self, prompt: str, system: str | None = None) -> str:
        response = self.inner.complete(prompt, system)
        self.script[prompt_digest(chat_key(prompt, system))] = response
        return response

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.script, indent=2, sort_keys=True, ensure_ascii=False), "utf-8")


class HttpBackend:
    """Chat-completions client; the endpoint is the full URL of the completions route."""

    def __init__(self, config: LLMBackendConfig, client: httpx.Client | None = None) -> None:
        self.config = config
        self.client = client or httpx.Client(timeout=config.timeout)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, prompt: str, system: str | None = None) -> str:
        if not prompt:
            raise PreconditionViolation("prompt must be non-empty")
        messages = ([{"role": "system", "content": system}] if system is not None else []) + [
            {"role": "user", "content": prompt}
        ]
        body = {"model": self.config.model_name, "messages": messages, "temperature": self.config.temperature}
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(min(0.05 * 2**attempt, 2.0))
            try:
                resp = self.client.post(self.config.endpoint, json=body, headers=self._headers())
            except httpx.TransportError as exc:
                last_error = exc
                log.warning("transport failure on attempt %d: %s", attempt + 1, exc)
                continue
            if resp.status_code >= 500:
                last_error = BackendUnavailable(f"server error {resp.status_code}")
                log.warning("server error %d on attempt %d", resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise BackendUnavailable(f"request rejected with HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendUnavailable(f"malformed completion response: {exc}") from exc
        raise RetriesExhausted(f"gave up after {self.config.max_retries + 1} attempts: {last_error}")


def make_backend(config: LLMBackendConfig) -> LLMBackend:
    if config.backend == "http":
        return HttpBackend(config)
    return MockBackend.from_file(config.script_path) if config.script_path else MockBackend()


def llm_complete(prompt: str, config: LLMBackendConfig, backend: LLMBackend | None = None) -> str:
    return (backend or make_backend(config)).complete(prompt)
