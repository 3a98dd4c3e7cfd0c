"""Pluggable chat backends: live HTTP service, content-addressed
record/replay cache, scripted fixtures, and a deterministic rule-based
rewriter for desk-scale runs.

Fixture, replay, and rule backends are pure functions of the request, so
any pipeline run against them is byte-reproducible. Only HTTPBackend talks
to the network; its credential comes from an environment variable
(API_KEY_ENV) and its endpoint from config.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import requests

__all__ = [
    "API_KEY_ENV",
    "BackendError",
    "TransientBackendError",
    "RetryExhaustedError",
    "CacheCorruptionError",
    "ChatRequest",
    "ChatResponse",
    "Backend",
    "FixtureBackend",
    "ScriptedBackend",
    "CachingBackend",
    "HTTPBackend",
    "RewriteRules",
    "RuleRewriterBackend",
    "send_with_retry",
    "cached_send",
    "rule_rewriter_send",
]

API_KEY_ENV = "ZOTUNE_API_KEY"


class BackendError(Exception):
    """Non-transient backend failure; retrying will not help."""


class TransientBackendError(BackendError):
    """Timeout or rate limit; safe to retry."""


class RetryExhaustedError(BackendError):
    def __init__(self, attempts: int, last_error: Exception):
        super().__init__(f"gave up after {attempts} attempts: {last_error}")
        self.attempts = attempts
        self.last_error = last_error


class CacheCorruptionError(BackendError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    system_text: str
    user_text: str
    temperature: float = 0.0
    max_output_tokens: int = 512

    def __post_init__(self):
        if not self.user_text:
            raise ValueError("user_text must be nonempty")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")

    def canonical(self) -> str:
        return json.dumps(
            {
                "system_text": self.system_text,
                "user_text": self.user_text,
                "temperature": self.temperature,
                "max_output_tokens": self.max_output_tokens,
            },
            sort_keys=True,
            ensure_ascii=False,
        )

    def digest(self) -> str:
        return hashlib.blake2b(self.canonical().encode("utf-8"), digest_size=16).hexdigest()


@dataclass(frozen=True)
class ChatResponse:
    text: str
    backend_name: str
    latency: float = 0.0
    prompt_tokens: int | None = None
    output_tokens: int | None = None


class Backend:
    """Contract: send(ChatRequest) -> ChatResponse, raising BackendError on failure."""

    name = "backend"

    def send(self, request: ChatRequest) -> ChatResponse:
        raise NotImplementedError


class FixtureBackend(Backend):
    """Pure backend for tests: a constant reply or a reply function of the request."""

    name = "fixture"

    def __init__(self, responder: str | Callable[[ChatRequest], str]):
        self._responder = responder

    def send(self, request: ChatRequest) -> ChatResponse:
        text = self._responder if isinstance(self._responder, str) else self._responder(request)
        return ChatResponse(text=text, backend_name=self.name)


class ScriptedBackend(Backend):
    """Replays a scripted sequence of reply texts and exceptions, in order.

    Test-only: deliberately not a pure function of the request.
    """

    name = "scripted"

    def __init__(self, script: Iterable[str | Exception]):
        self._script = list(script)
        self.calls = 0

    def send(self, request: ChatRequest) -> ChatResponse:
        if not self._script:
            raise BackendError("scripted backend exhausted")
        self.calls += 1
        item = self._script.pop(0)
        if isinstance(item, Exception):
            raise item
        return ChatResponse(text=item, backend_name=self.name)


def send_with_retry(
    backend: Backend,
    request: ChatRequest,
    max_retries: int = 3,
    backoff: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> ChatResponse:
    """First success wins; only transient failures are retried, with
    exponential backoff. Non-transient errors surface immediately."""
    if max_retries < 0:
        raise ValueError(f"max_retries must be >= 0, got {max_retries}")
    attempts = max_retries + 1
    last: Exception | None = None
    for attempt in range(attempts):
        try:
            return backend.send(request)
        except TransientBackendError as exc:
            last = exc
            if attempt < max_retries:
                sleep(backoff * (2.0**attempt))
    raise RetryExhaustedError(attempts, last)


def cached_send(cache_dir, backend: Backend, request: ChatRequest) -> ChatResponse:
    """Content-addressed record/replay: key = digest of the canonical request.

    A hit returns the stored response without touching the backend; a miss
    calls the backend and records the response. Failures are never cached.
    Corrupt entries raise CacheCorruptionError rather than silently missing.
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    entry = cache_dir / (request.digest() + ".json")
    if entry.exists():
        try:
            payload = json.loads(entry.read_text(encoding="utf-8"))
            resp = payload["response"]
            return ChatResponse(
                text=resp["text"],
                backend_name=resp["backend_name"],
                latency=resp.get("latency", 0.0),
                prompt_tokens=resp.get("prompt_tokens"),
                output_tokens=resp.get("output_tokens"),
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CacheCorruptionError(f"corrupt cache entry {entry}: {exc!r}") from exc
    response = backend.send(request)
    payload = {
        "request": json.loads(request.canonical()),
        "response": {
            "text": response.text,
            "backend_name": response.backend_name,
            "latency": response.latency,
            "prompt_tokens": response.prompt_tokens,
            "output_tokens": response.output_tokens,
        },
    }
    tmp = entry.with_suffix(".tmp")
    tmp.write_text(json.dumps(payload, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    os.replace(tmp, entry)  # atomic per key
    return response


class CachingBackend(Backend):
    name = "cache"

    def __init__(self, cache_dir, inner: Backend):
        self.cache_dir = Path(cache_dir)
        self.inner = inner

    def send(self, request: ChatRequest) -> ChatResponse:
        return cached_send(self.cache_dir, self.inner, request)


class HTTPBackend(Backend):
    """Chat-completion-style HTTP client.

    POSTs {model, messages, temperature, max_tokens} and reads the first
    choice's message content. The API key is read from API_KEY_ENV at send
    time. Timeouts, connection errors, 429 and 5xx map to
    TransientBackendError; other HTTP errors are non-transient.
    """

    name = "http"

    def __init__(self, endpoint_url: str, model: str, timeout: float = 60.0):
        if not endpoint_url:
            raise ValueError("endpoint_url must be nonempty")
        self.endpoint_url = endpoint_url
        self.model = model
        self.timeout = timeout

    def send(self, request: ChatRequest) -> ChatResponse:
        key = os.environ.get(API_KEY_ENV)
        if not key:
            raise BackendError(f"environment variable {API_KEY_ENV} is not set")
        body = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        start = time.monotonic()
        try:
            http_resp = requests.post(
                self.endpoint_url,
                json=body,
                headers={"Authorization": f"Bearer {key}"},
                timeout=self.timeout,
            )
        except (requests.Timeout, requests.ConnectionError) as exc:
            raise TransientBackendError(f"request failed: {exc}") from exc
        latency = time.monotonic() - start
        if http_resp.status_code == 429 or http_resp.status_code >= 500:
            raise TransientBackendError(f"HTTP {http_resp.status_code}")
        if http_resp.status_code != 200:
            raise BackendError(f"HTTP {http_resp.status_code}: {http_resp.text[:200]}")
        try:
            payload = http_resp.json()
            text = payload["choices"][0]["message"]["content"]
            usage = payload.get("usage", {})
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed response body: {exc!r}") from exc
        return ChatResponse(
            text=text,
            backend_name=self.name,
            latency=latency,
            prompt_tokens=usage.get("prompt_tokens"),
            output_tokens=usage.get("completion_tokens"),
        )


@dataclass(frozen=True)
class RewriteRules:
    """Token-level rewrite table: drop distractor tokens, map synonyms.

    Tokens are whitespace-separated; untouched tokens are rejoined with
    single spaces. An empty table is the identity.
    """

    remove_tokens: frozenset[str] = field(default_factory=frozenset)
    synonyms: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "remove_tokens", frozenset(self.remove_tokens))
        object.__setattr__(self, "synonyms", dict(self.synonyms))

    @property
    def empty(self) -> bool:
        return not self.remove_tokens and not self.synonyms

    def apply(self, text: str) -> str:
        if self.empty:
            return text
        kept = [
            self.synonyms.get(tok, tok)
            for tok in text.split()
            if tok not in self.remove_tokens
        ]
        return " ".join(kept)

    def save(self, path) -> None:
        payload = {
            "remove_tokens": sorted(self.remove_tokens),
            "synonyms": dict(sorted(self.synonyms.items())),
        }
        Path(path).write_text(
            json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path) -> "RewriteRules":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            remove_tokens=frozenset(payload.get("remove_tokens", ())),
            synonyms=dict(payload.get("synonyms", {})),
        )


def rule_rewriter_send(
    rules: RewriteRules, request: ChatRequest, span_marker: str = "Original:"
) -> ChatResponse:
    """Deterministic stand-in rewriter: pull the span off the prompt's last
    marker line, apply the rule table, answer in the rewriter output format."""
    span = None
    for line in request.user_text.splitlines():
        if line.startswith(span_marker):
            span = line[len(span_marker) :].strip()
    if span is None:
        raise BackendError(f"no {span_marker!r} line found in prompt")
    return ChatResponse(text="Rewritten: " + rules.apply(span), backend_name="rule_rewriter")


class RuleRewriterBackend(Backend):
    name = "rule_rewriter"

    def __init__(self, rules: RewriteRules, span_marker: str = "Original:"):
        self.rules = rules
        self.span_marker = span_marker

    def send(self, request: ChatRequest) -> ChatResponse:
        return rule_rewriter_send(self.rules, request, self.span_marker)
