"""Provider-agnostic chat-completion access with a persistent disk cache.

Decoding defaults are deterministic (temperature=0, top_p=1) so identical
requests hash to identical cache keys and reruns are free. The cache writes
atomically (tmp file + rename), so concurrent writers of the same key leave
a single consistent entry.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

API_KEY_ENV = "KCLAB_API_KEY"

VALID_ROLES = ("system", "user", "assistant")


class GatewayError(RuntimeError):
    """Provider failure that survived the retry budget."""


class AuthenticationError(GatewayError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[tuple[str, str], ...]  # (role, content)
    temperature: float = 0.0
    top_p: float = 1.0
    max_tokens: int = 2048

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.messages[0][0] not in ("system", "user"):
            raise ValueError("first message must be system or user")
        for role, _ in self.messages:
            if role not in VALID_ROLES:
                raise ValueError(f"invalid role {role!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class ChatResponse:
    content: str
    provider_id: str
    cached: bool


def cache_key(request: ChatRequest) -> str:
    """SHA-256 over a canonical serialization of every decoding-relevant field."""
    canonical = json.dumps(
        {
            "model": request.model,
            "messages": [[role, content] for role, content in request.messages],
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
        },
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=True,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class MockProvider:
    """Scripted provider for offline runs: maps request digest -> response text.

    The fixture is either a dict or a JSON file with the same shape.
    """

    provider_id = "mock"

    def __init__(self, fixture: dict[str, str] | str | Path):
        if isinstance(fixture, (str, Path)):
            fixture = json.loads(Path(fixture).read_text(encoding="utf-8"))
        self.responses = dict(fixture)
        self.call_count = 0

    def complete(self, request: ChatRequest) -> str:
        self.call_count += 1
        digest = cache_key(request)
        try:
            return self.responses[digest]
        except KeyError:
            raise GatewayError(f"mock provider has no fixture for digest {digest}") from None


class HttpProvider:
    """Chat-completion HTTP endpoint speaking the role/content message shape."""

    def __init__(self, endpoint: str, api_key: str | None = None, timeout: float = 60.0):
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout = timeout
        self.provider_id = self.endpoint
        self.call_count = 0

    def complete(self, request: ChatRequest) -> str:
        self.call_count += 1
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": request.model,
            "messages": [{"role": r, "content": c} for r, c in request.messages],
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
        }
        resp = requests.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
        if resp.status_code in (401, 403):
            raise AuthenticationError(f"provider rejected credentials ({resp.status_code})")
        resp.raise_for_status()
        try:
            body = resp.json()
            content = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed provider payload: {exc}") from exc
        if not content:
            raise GatewayError("provider returned empty content")
        return content


@dataclass
class GatewayStats:
    requests: int = 0
    cache_hits: int = 0
    provider_calls: int = 0

    @property
    def cache_hit_ratio(self) -> float:
        return self.cache_hits / self.requests if self.requests else 0.0


class LLMGateway:
    """Caching front of a provider; safe for concurrent use."""

    def __init__(
        self,
        provider,
        cache_dir: str | Path,
        retries: int = 2,
        concurrency: int = 4,
        backoff: float = 0.5,
    ):
        self.provider = provider
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.retries = retries
        self.backoff = backoff
        self._semaphore = threading.BoundedSemaphore(concurrency)
        self._stats_lock = threading.Lock()
        self.stats = GatewayStats()

    def _cache_path(self, digest: str) -> Path:
        return self.cache_dir / f"{digest}.json"

    def complete(self, request: ChatRequest) -> ChatResponse:
        digest = cache_key(request)
        path = self._cache_path(digest)
        with self._stats_lock:
            self.stats.requests += 1

        if path.is_file():
            entry = json.loads(path.read_text(encoding="utf-8"))
            with self._stats_lock:
                self.stats.cache_hits += 1
            return ChatResponse(content=entry["content"],
                                provider_id=entry["provider_id"], cached=True)

        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._semaphore:
                    with self._stats_lock:
                        self.stats.provider_calls += 1
                    content = self.provider.complete(request)
                break
            except AuthenticationError:
                raise
            except Exception as exc:  # transient provider failure
                last_error = exc
        else:
            raise GatewayError(
                f"provider failed after {self.retries + 1} attempts: {last_error}"
            ) from last_error

        entry = {
            "digest": digest,
            "request": {
                "model": request.model,
                "messages": [[r, c] for r, c in request.messages],
                "temperature": request.temperature,
                "top_p": request.top_p,
                "max_tokens": request.max_tokens,
            },
            "content": content,
            "provider_id": self.provider.provider_id,
        }
        self._atomic_write(path, json.dumps(entry, indent=2))
        return ChatResponse(content=content, provider_id=self.provider.provider_id, cached=False)

    def _atomic_write(self, path: Path, text: str) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.cache_dir, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
