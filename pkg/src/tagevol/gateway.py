"""Uniform access to a chat-completion backend with retries, bounded
concurrency and an on-disk response cache.

Two interchangeable backends are provided: :class:`HttpBackend` speaks the
common chat-completion JSON protocol over HTTP POST, and :class:`MockBackend`
replays scripted responses keyed by a prompt digest, which makes every
downstream stage deterministic and testable without a live model.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import requests

from .errors import TagEvolError

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
API_KEY_ENV = "TAGEVOL_API_KEY"

# Decoding defaults: diversity-friendly sampling for tagging and evolution,
# greedy decoding for response generation.
DEFAULT_TEMPERATURE = 0.7
DEFAULT_MAX_TOKENS = 2048
RESPONSE_TEMPERATURE = 0.0


class BackendError(TagEvolError):
    """A single backend round-trip failed."""


class TransientBackendError(BackendError):
    """Retryable failure: timeout, connection error, HTTP 429 or 5xx."""


class AuthError(BackendError):
    """The backend rejected the credential; never retried."""


class MalformedBackendReply(BackendError):
    """The backend answered 200 but the body is not a usable completion."""


class UnscriptedPrompt(BackendError):
    """The mock backend has no scripted response for this prompt."""


class ExhaustedRetries(BackendError):
    """All retry attempts failed; ``last_error`` holds the final failure."""

    def __init__(self, last_error: BackendError, attempts: int):
        self.last_error = last_error
        self.attempts = attempts
        super().__init__(f"gave up after {attempts} attempts: {last_error}")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str


def user_message(content: str) -> ChatMessage:
    return ChatMessage("user", content)


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion request: model id, messages and decoding params."""

    model: str
    messages: tuple[ChatMessage, ...]
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    top_p: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not any(m.role == "user" for m in self.messages):
            raise ValueError("request needs at least one user message")
        for message in self.messages:
            if message.role not in ROLES:
                raise ValueError(f"unknown message role {message.role!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")


@dataclass(frozen=True)
class ChatResponse:
    """Backend output; token counters may be absent (mock, cache replay)."""

    content: str
    finish_reason: str = "stop"
    prompt_tokens: int | None = None
    completion_tokens: int | None = None
    retries_used: int = 0


def prompt_digest(messages: Iterable[ChatMessage]) -> str:
    """Stable sha256 over the rendered message list; keys the mock script."""
    payload = json.dumps([[m.role, m.content] for m in messages], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def request_cache_key(request: ChatRequest) -> str:
    """Cache key covering model, messages and decoding params."""
    payload = json.dumps(
        {
            "model": request.model,
            "messages": [[m.role, m.content] for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "top_p": request.top_p,
        },
        ensure_ascii=False,
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class MockBackend:
    """Replays scripted responses keyed by prompt digest.

    Script files are JSON lists of {"prompt_sha256": ..., "response": ...}.
    Unscripted prompts raise :class:`UnscriptedPrompt`; registering the same
    key twice keeps the last registration and logs a warning.
    """

    def __init__(self, script: dict[str, str] | None = None):
        self._script = dict(script or {})
        self._lock = threading.Lock()

    @classmethod
    def from_script_file(cls, path: str | Path) -> "MockBackend":
        entries = json.loads(Path(path).read_text(encoding="utf-8"))
        backend = cls()
        for entry in entries:
            backend.register(entry["prompt_sha256"], entry["response"])
        return backend

    def register(self, prompt_key: str, response: str) -> None:
        with self._lock:
            if prompt_key in self._script:
                log.warning("mock script entry %s... replaced; last registration wins", prompt_key[:12])
            self._script[prompt_key] = response

    def send(self, request: ChatRequest) -> ChatResponse:
        key = prompt_digest(request.messages)
        with self._lock:
            scripted = self._script.get(key)
        if scripted is None:
            raise UnscriptedPrompt(f"no scripted response for prompt digest {key}")
        return ChatResponse(content=scripted)


class HttpBackend:
    """POSTs chat-completion requests to an HTTP endpoint.

    Body: {"model", "messages": [{"role", "content"}], "temperature",
    "max_tokens"} (plus "top_p" when set). The completion is read from the
    first choice's message content. The credential comes from the
    TAGEVOL_API_KEY environment variable unless passed explicitly.
    """

    def __init__(self, endpoint: str, api_key: str | None = None, timeout: float = 120.0):
        self.endpoint = endpoint
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout = timeout

    def send(self, request: ChatRequest) -> ChatResponse:
        body: dict = {
            "model": request.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.top_p is not None:
            body["top_p"] = request.top_p
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(self.endpoint, json=body, headers=headers, timeout=self.timeout)
        except (requests.Timeout, requests.ConnectionError) as err:
            raise TransientBackendError(str(err)) from err
        if resp.status_code in (401, 403):
            raise AuthError(f"HTTP {resp.status_code} from backend")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientBackendError(f"HTTP {resp.status_code} from backend")
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code} from backend: {resp.text[:200]}")
        try:
            payload = resp.json()
            choice = payload["choices"][0]
            content = choice["message"]["content"]
        except (ValueError, LookupError, TypeError) as err:
            raise MalformedBackendReply(f"cannot read completion from reply: {err}") from err
        if not isinstance(content, str):
            raise MalformedBackendReply("completion content is not text")
        usage = payload.get("usage") or {}
        return ChatResponse(
            content=content,
            finish_reason=choice.get("finish_reason") or "stop",
            prompt_tokens=usage.get("prompt_tokens"),
            completion_tokens=usage.get("completion_tokens"),
        )


class ResponseCache:
    """Disk-persisted prompt cache; one JSON line per stored response.

    Entries are appended under a lock, so concurrent callers see atomic
    per-entry reads and writes. On load, the last line for a key wins and
    torn trailing lines are ignored.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.path = self.directory / "responses.jsonl"
        self._lock = threading.Lock()
        self._entries: dict[str, ChatResponse] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError:
                    continue
                self._entries[obj["key"]] = ChatResponse(
                    content=obj["content"], finish_reason=obj.get("finish_reason", "stop")
                )

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def get(self, key: str) -> ChatResponse | None:
        with self._lock:
            return self._entries.get(key)

    def put(self, key: str, response: ChatResponse) -> None:
        entry = ChatResponse(content=response.content, finish_reason=response.finish_reason)
        with self._lock:
            self._entries[key] = entry
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(
                    json.dumps(
                        {"key": key, "content": entry.content, "finish_reason": entry.finish_reason},
                        ensure_ascii=False,
                    )
                )
                fh.write("\n")


class Gateway:
    """Shared front door to a backend: retries, concurrency bound, cache.

    ``complete`` retries transient failures up to ``retries`` times with
    exponential backoff; non-transient failures surface immediately. The
    in-flight bound is enforced internally, so the gateway is safe to share
    across threads.
    """

    def __init__(
        self,
        backend,
        retries: int = 3,
        backoff_base: float = 0.5,
        max_in_flight: int = 4,
        cache: ResponseCache | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if retries < 0:
            raise ValueError("retries must be >= 0")
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self.backend = backend
        self.retries = retries
        self.backoff_base = backoff_base
        self.max_in_flight = max_in_flight
        self.cache = cache
        self._sleep = sleep
        self._slots = threading.Semaphore(max_in_flight)

    def complete(self, request: ChatRequest) -> ChatResponse:
        key = request_cache_key(request)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return hit
        last: TransientBackendError | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                self._sleep(self.backoff_base * (2 ** (attempt - 1)))
            try:
                with self._slots:
                    response = self.backend.send(request)
            except TransientBackendError as err:
                last = err
                continue
            response = replace(response, retries_used=attempt)
            if self.cache is not None:
                self.cache.put(key, response)
            return response
        assert last is not None
        raise ExhaustedRetries(last, attempts=self.retries + 1)

    def complete_batch(
        self, requests_: Sequence[ChatRequest], max_in_flight: int | None = None
    ) -> list[ChatResponse | BackendError]:
        """Run requests concurrently; results in input order, errors embedded per slot."""
        if max_in_flight is not None and max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        bound = max_in_flight or self.max_in_flight
        requests_ = list(requests_)
        if not requests_:
            return []

        def attempt(request: ChatRequest) -> ChatResponse | BackendError:
            try:
                return self.complete(request)
            except BackendError as err:
                return err

        with ThreadPoolExecutor(max_workers=min(bound, len(requests_))) as pool:
            return list(pool.map(attempt, requests_))

    def map_in_order(self, fn: Callable, items: Sequence) -> list:
        """Apply ``fn`` to items concurrently under the gateway bound.

        Results come back in input order, so callers stay deterministic
        regardless of completion order. ``fn`` must not raise; it should
        return error values instead.
        """
        items = list(items)
        if not items:
            return []
        if self.max_in_flight == 1 or len(items) == 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=min(self.max_in_flight, len(items))) as pool:
            return list(pool.map(fn, items))
