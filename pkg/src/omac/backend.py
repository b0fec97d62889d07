"""LLM completion backends.

One contract, two implementations: an HTTP client for OpenAI-compatible chat
endpoints and a deterministic scripted backend keyed on request tags for
tests and offline runs. Both are safe to call from multiple threads.
"""

from __future__ import annotations

import json
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol

import requests

from .errors import BackendError, UnscriptedRequestError

Role = str  # "user" | "assistant"


@dataclass(frozen=True)
class CompletionRequest:
    """One completion call; tag is the stable key used for scripted matching
    and ledger joinability."""

    messages: tuple[tuple[Role, str], ...]
    temperature: float = 0.8
    max_tokens: int = 2048
    system_prompt: Optional[str] = None
    tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(tuple(m) for m in self.messages))
        if not self.messages:
            raise ValueError("messages must be nonempty")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        for role, _ in self.messages:
            if role not in ("user", "assistant"):
                raise ValueError(f"invalid message role: {role}")


@dataclass(frozen=True)
class Completion:
    text: str
    backend_id: str
    latency: float


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> Completion: ...


# Environment variables honored by the HTTP backend.
ENV_API_KEY = "OMAC_API_KEY"
ENV_BASE_URL = "OMAC_BASE_URL"
ENV_MODEL = "OMAC_MODEL"


class HttpBackend:
    """OpenAI-compatible chat-completions client.

    POSTs {base_url}/v1/chat/completions and reads
    choices[0].message.content. Transient failures (timeouts, connection
    errors, 429, 5xx) retry with exponential backoff and +/-20% jitter;
    other 4xx fail immediately.
    """

    def __init__(self, base_url: Optional[str] = None, api_key: Optional[str] = None,
                 model: Optional[str] = None, *, max_retries: int = 4,
                 initial_delay: float = 0.5, backoff_factor: float = 2.0,
                 jitter: float = 0.2, timeout: float = 120.0):
        self.base_url = (base_url or os.environ.get(ENV_BASE_URL, "https://api.openai.com")).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY, "")
        self.model = model or os.environ.get(ENV_MODEL, "gpt-3.5-turbo")
        self.max_retries = max_retries
        self.initial_delay = initial_delay
        self.backoff_factor = backoff_factor
        self.jitter = jitter
        self.timeout = timeout
        self._session = requests.Session()
        self.backend_id = f"http:{self.model}"

    def complete(self, request: CompletionRequest) -> Completion:
        messages = []
        if request.system_prompt:
            messages.append({"role": "system", "content": request.system_prompt})
        messages.extend({"role": r, "content": t} for r, t in request.messages)
        body = {
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        headers = {
            "Authorization": f"Bearer {self.api_key}",
            "Content-Type": "application/json",
        }
        url = f"{self.base_url}/v1/chat/completions"

        start = time.perf_counter()
        attempts = self.max_retries + 1
        for attempt in range(attempts):
            try:
                resp = self._session.post(url, json=body, headers=headers,
                                          timeout=self.timeout)
            except (requests.Timeout, requests.ConnectionError):
                if attempt + 1 < attempts:
                    self._sleep(attempt)
                    continue
                raise BackendError(f"backend exhausted: {request.tag}") from None
            if resp.status_code == 429 or resp.status_code >= 500:
                if attempt + 1 < attempts:
                    self._sleep(attempt)
                    continue
                raise BackendError(
                    f"backend exhausted: {request.tag} (last status {resp.status_code})")
            if resp.status_code != 200:
                raise BackendError(
                    f"backend error {resp.status_code}: {resp.text[:200]}")
            try:
                payload = resp.json()
                text = payload["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError):
                raise BackendError("malformed response") from None
            if text is None or not isinstance(text, str):
                raise BackendError("malformed response")
            return Completion(text=text, backend_id=self.backend_id,
                              latency=time.perf_counter() - start)
        raise BackendError(f"backend exhausted: {request.tag}")

    def _sleep(self, attempt: int) -> None:
        delay = self.initial_delay * (self.backoff_factor ** attempt)
        delay *= 1.0 + random.uniform(-self.jitter, self.jitter)
        time.sleep(max(delay, 0.0))


@dataclass
class ScriptRule:
    """Either tag (exact) or prefix must be set; once-rules are consumed on
    first match."""

    response: str
    tag: Optional[str] = None
    prefix: Optional[str] = None
    once: bool = False
    consumed: bool = field(default=False, compare=False)

    def __post_init__(self):
        if (self.tag is None) == (self.prefix is None):
            raise ValueError("rule needs exactly one of tag / prefix")

    def matches(self, tag: str) -> bool:
        if self.consumed:
            return False
        if self.tag is not None:
            return tag == self.tag
        return tag.startswith(self.prefix)


class ScriptedBackend:
    """Deterministic backend answering from an ordered rule list.

    The first live rule matching the request tag answers; a request no rule
    matches raises UnscriptedRequestError so test scripts stay exhaustive.
    Rule consumption is serialized internally.
    """

    backend_id = "scripted"

    def __init__(self, rules: list[ScriptRule] | None = None):
        self.rules = list(rules or [])
        self.calls: list[CompletionRequest] = []
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> Completion:
        start = time.perf_counter()
        with self._lock:
            self.calls.append(request)
            for rule in self.rules:
                if rule.matches(request.tag):
                    if rule.once:
                        rule.consumed = True
                    return Completion(text=rule.response, backend_id=self.backend_id,
                                      latency=time.perf_counter() - start)
        raise UnscriptedRequestError(f"unscripted request: {request.tag!r}")

    def call_tags(self) -> list[str]:
        with self._lock:
            return [c.tag for c in self.calls]


def scripted_register(script: list[ScriptRule]) -> ScriptedBackend:
    return ScriptedBackend(script)


def load_script(path: str | Path) -> ScriptedBackend:
    """Build a scripted backend from a JSON rule list.

    Schema: [{"tag": "..."} | {"prefix": "..."}, "response": "...",
    "once": false}, ...]
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise BackendError("script file must contain a JSON list of rules")
    rules = []
    for i, entry in enumerate(raw):
        try:
            rules.append(ScriptRule(response=entry["response"],
                                    tag=entry.get("tag"),
                                    prefix=entry.get("prefix"),
                                    once=bool(entry.get("once", False))))
        except (TypeError, KeyError, ValueError) as exc:
            raise BackendError(f"bad script rule at index {i}: {exc}") from None
    return ScriptedBackend(rules)
