"""Model backends: a chat-completions HTTP client and deterministic scripted stand-ins."""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import httpx

from .protocol import ConversationTurn

MAX_TOKENS_CEILING = 32768
RETRY_STATUS = {408, 409, 429, 500, 502, 503, 504}


class BackendError(RuntimeError):
    """Base class for anything that prevents a backend from producing text."""


class TransportError(BackendError):
    pass


class BackendTimeout(TransportError):
    pass


class BackendProtocolError(BackendError):
    """The upstream answered but the body has no usable content."""


class ScriptExhaustedError(BackendError):
    pass


class ReplayMismatchError(BackendError):
    pass


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.0
    max_tokens: int = 1024
    stop: tuple[str, ...] | None = None
    seed: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")
        if not 0 < self.max_tokens <= MAX_TOKENS_CEILING:
            raise ValueError(f"max_tokens must be in (0, {MAX_TOKENS_CEILING}]")


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff: tuple[float, ...] = (0.5, 2.0, 8.0)

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    def delay(self, attempt: int) -> float:
        if not self.backoff:
            return 0.0
        return self.backoff[min(attempt, len(self.backoff) - 1)]


def _check_messages(messages: Sequence[ConversationTurn]) -> None:
    if not messages:
        raise ValueError("messages must be non-empty")
    if messages[0].role not in ("system", "user"):
        raise ValueError("first message must be a system or user turn")


def to_wire(turn: ConversationTurn) -> dict[str, str]:
    # tool results travel as user turns: plain chat endpoints reject role=tool without a tool_call_id
    if turn.role == "tool":
        name = (turn.meta or {}).get("tool_name")
        prefix = f"[tool result: {name}] " if name else "[tool result] "
        return {"role": "user", "content": prefix + turn.content}
    return {"role": turn.role, "content": turn.content}


class HttpBackend:
    """Client for ``POST {base_url}/chat/completions``.

    The bearer token is read from the environment variable named by
    ``auth_env`` at call time, so it never lands in manifests or logs.
    """

    def __init__(
        self,
        base_url: str,
        model_id: str,
        auth_env: str | None = None,
        timeout: float = 60.0,
        retry: RetryPolicy = RetryPolicy(),
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.model_id = model_id
        self.auth_env = auth_env
        self.timeout = timeout
        self.retry = retry
        self._sleep = sleep
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def describe(self) -> dict[str, Any]:
        return {"kind": "http", "base_url": self.base_url, "model": self.model_id, "auth_env": self.auth_env}

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.auth_env:
            token = os.environ.get(self.auth_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def request_body(self, messages: Sequence[ConversationTurn], params: GenerationParams) -> dict[str, Any]:
        body: dict[str, Any] = {
            "model": self.model_id,
            "messages": [to_wire(m) for m in messages],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        if params.stop:
            body["stop"] = list(params.stop)
        if params.seed is not None:
            body["seed"] = params.seed
        return body

    def complete(self, messages: Sequence[ConversationTurn], params: GenerationParams = GenerationParams()) -> str:
        _check_messages(messages)
        body = self.request_body(messages, params)
        url = f"{self.base_url}/chat/completions"
        last: Exception | None = None
        for attempt in range(self.retry.max_attempts):
            if attempt:
                self._sleep(self.retry.delay(attempt - 1))
            try:
                resp = self._client.post(url, json=body, headers=self._headers())
            except httpx.TimeoutException as exc:
                last = BackendTimeout(f"timeout after {self.timeout}s: {exc}")
                continue
            except (httpx.TransportError, httpx.InvalidURL, httpx.UnsupportedProtocol) as exc:
                last = TransportError(f"{type(exc).__name__}: {exc}")
                continue
            if resp.status_code in RETRY_STATUS:
                last = TransportError(f"HTTP {resp.status_code} from {url}")
                continue
            if resp.status_code >= 400:
                raise TransportError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
            return _content_of(resp)
        raise last if isinstance(last, BackendError) else TransportError(str(last))

    def close(self) -> None:
        self._client.close()


def _content_of(resp: httpx.Response) -> str:
    try:
        payload = resp.json()
        content = payload["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise BackendProtocolError(f"response has no choices[0].message.content ({type(exc).__name__})") from None
    if not isinstance(content, str):
        raise BackendProtocolError("response content is not text")
    return content


@dataclass(frozen=True)
class Health:
    reachable: bool
    latency: float
    detail: str = ""


def healthcheck(backend: HttpBackend | str, timeout: float = 5.0) -> Health:
    """One ``GET {base_url}/models``; never raises. Any HTTP answer counts as reachable."""
    base = backend.base_url if isinstance(backend, HttpBackend) else str(backend).rstrip("/")
    t0 = time.perf_counter()
    try:
        url = httpx.URL(f"{base}/models")
        if url.scheme not in ("http", "https") or not url.host:
            return Health(False, 0.0, f"malformed base_url {base!r}")
        resp = httpx.get(url, timeout=timeout)
    except Exception as exc:  # noqa: BLE001 - health probes report, never raise
        return Health(False, time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")
    return Health(True, time.perf_counter() - t0, f"HTTP {resp.status_code}")


Matcher = Callable[[ConversationTurn], bool]


def _as_matcher(m: Matcher | str | None) -> Matcher:
    if m is None:
        return lambda turn: True
    if isinstance(m, str):
        return lambda turn, needle=m: needle in turn.content
    return m


class ScriptedBackend:
    """Returns canned responses.

    ``sequential`` mode hands out responses in order and raises
    :class:`ScriptExhaustedError` when they run out. ``match`` mode returns
    the first response whose matcher accepts the last input turn; a string
    matcher is a substring test. Entries may be exceptions, which are raised.
    """

    def __init__(self, script: Iterable[Any], mode: str = "sequential", name: str = "scripted"):
        if mode not in ("sequential", "match"):
            raise ValueError("mode must be 'sequential' or 'match'")
        self.mode = mode
        self.name = name
        self._entries: list[tuple[Matcher, Any]] = []
        for item in script:
            if isinstance(item, tuple):
                matcher, response = item
            else:
                matcher, response = None, item
            self._entries.append((_as_matcher(matcher), response))
        self._cursor = 0
        self._lock = threading.Lock()
        self.calls: list[list[ConversationTurn]] = []

    def describe(self) -> dict[str, Any]:
        return {"kind": "scripted", "name": self.name, "mode": self.mode, "entries": len(self._entries)}

    @property
    def remaining(self) -> int:
        return len(self._entries) - self._cursor if self.mode == "sequential" else len(self._entries)

    def complete(self, messages: Sequence[ConversationTurn], params: GenerationParams = GenerationParams()) -> str:
        _check_messages(messages)
        with self._lock:
            self.calls.append(list(messages))
            if self.mode == "sequential":
                if self._cursor >= len(self._entries):
                    raise ScriptExhaustedError(f"{self.name}: script exhausted after {self._cursor} responses")
                response = self._entries[self._cursor][1]
                self._cursor += 1
            else:
                last = messages[-1]
                for matcher, candidate in self._entries:
                    if matcher(last):
                        response = candidate
                        break
                else:
                    raise ScriptExhaustedError(f"{self.name}: no scripted response matches {last.content[:60]!r}")
        if isinstance(response, BaseException):
            raise response
        if callable(response):
            return response(messages)
        return response


def load_script(path: str | Path, name: str | None = None) -> ScriptedBackend:
    """Load a scripted backend from a JSON file.

    Either a list of response strings (sequential), or
    ``{"mode": "match", "script": [{"match": "substring", "response": "..."}]}``.
    """
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(doc, list):
        doc = {"mode": "sequential", "script": doc}
    entries = []
    for item in doc.get("script", []):
        if isinstance(item, str):
            entries.append(item)
        else:
            entries.append((item.get("match"), item["response"]))
    return ScriptedBackend(entries, doc.get("mode", "sequential"), name or Path(path).stem)


class ReplayBackend:
    """Plays back recorded exchanges in order, optionally checking each request.

    An exchange is ``{"messages": [...], "response": text}`` or, for a failed
    call, ``{"messages": [...], "error": {"type": ..., "message": ...}}``.
    """

    def __init__(self, exchanges: Sequence[dict[str, Any]], strict: bool = True, name: str = "replay"):
        self._exchanges = list(exchanges)
        self._cursor = 0
        self.strict = strict
        self.name = name

    def describe(self) -> dict[str, Any]:
        return {"kind": "replay", "name": self.name, "exchanges": len(self._exchanges)}

    def complete(self, messages: Sequence[ConversationTurn], params: GenerationParams = GenerationParams()) -> str:
        if self._cursor >= len(self._exchanges):
            raise ScriptExhaustedError(f"{self.name}: no more recorded exchanges")
        ex = self._exchanges[self._cursor]
        self._cursor += 1
        if self.strict and [m.to_json() for m in messages] != ex["messages"]:
            raise ReplayMismatchError(f"{self.name}: request {self._cursor} differs from the recording")
        if "error" in ex:
            raise _ERROR_TYPES.get(ex["error"]["type"], BackendError)(ex["error"]["message"])
        return ex["response"]


_ERROR_TYPES: dict[str, type[BackendError]] = {
    cls.__name__: cls
    for cls in (BackendError, TransportError, BackendTimeout, BackendProtocolError, ScriptExhaustedError)
}


def complete(backend, messages: Sequence[ConversationTurn], params: GenerationParams = GenerationParams()) -> str:
    return backend.complete(messages, params)


def backend_from_ref(ref: str, model: str = "default", auth_env: str | None = None, timeout: float = 60.0,
                     retry: RetryPolicy = RetryPolicy(), name: str | None = None):
    """Resolve a backend reference: an http(s) URL or ``script:PATH``."""
    if ref.startswith("script:"):
        return load_script(ref[len("script:"):], name=name)
    if ref.startswith(("http://", "https://")):
        return HttpBackend(ref, model, auth_env=auth_env, timeout=timeout, retry=retry)
    raise ValueError(f"unrecognised backend reference {ref!r} (expected http(s)://... or script:PATH)")
