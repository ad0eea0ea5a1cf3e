"""Chat-completion and web-search clients behind a record/replay cache."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import threading
import time
import unicodedata
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Protocol, Sequence

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.2
DEFAULT_MAX_TOKENS = 1024
TOKEN_ENV = "PATIENTGRAPH_API_TOKEN"


class ClientError(RuntimeError):
    retriable = False


class TransportError(ClientError):
    retriable = True


class RateLimitError(TransportError):
    pass


class AuthError(ClientError):
    pass


class ReplayMissError(ClientError):
    def __init__(self, fingerprint: str, kind: str = "chat"):
        self.fingerprint = fingerprint
        super().__init__(f"replay cache miss for {kind} request {fingerprint}")


class CacheMode(str, enum.Enum):
    RECORD = "record"
    REPLAY = "replay"
    PASSTHROUGH = "passthrough"


class Message(NamedTuple):
    role: str
    content: str


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    model: str = "default"

    def __post_init__(self):
        msgs = tuple(Message(*m) if not isinstance(m, Message) else m for m in self.messages)
        object.__setattr__(self, "messages", msgs)
        if not msgs:
            raise ValueError("chat request needs at least one message")
        for m in msgs:
            if m.role not in ("system", "user", "assistant"):
                raise ValueError(f"unknown message role {m.role!r}")
        if not 0 <= self.temperature <= 2:
            raise ValueError("temperature must lie in [0, 2]")

    @classmethod
    def user(cls, text: str, **kwargs) -> "ChatRequest":
        return cls((Message("user", text),), **kwargs)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class SearchRequest:
    query: str
    max_results: int = 1

    def __post_init__(self):
        if not self.query.strip():
            raise ValueError("search query must be non-empty")
        if self.max_results < 1:
            raise ValueError("max_results must be >= 1")

    def to_dict(self) -> dict:
        return {"query": self.query, "count": self.max_results}


class SearchResult(NamedTuple):
    title: str
    snippet: str
    url: str


def _canonical(obj):
    if isinstance(obj, str):
        return unicodedata.normalize("NFC", obj)
    if isinstance(obj, dict):
        return {_canonical(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, float) and obj.is_integer():
        return int(obj)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_canonical(obj), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def fingerprint(kind: str, request: dict) -> str:
    """Stable hash of a request: sorted keys, NFC strings, integral floats collapsed."""
    payload = canonical_json({"kind": kind, "request": request})
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ReplayCache:
    """Append-only JSON Lines store mapping request fingerprints to responses."""

    def __init__(self, path=None, mode: CacheMode = CacheMode.REPLAY):
        self.path = Path(path) if path is not None else None
        self.mode = CacheMode(mode)
        self.entries: dict[str, object] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        rec = json.loads(line)
                    except json.JSONDecodeError as exc:
                        raise ValueError(f"{self.path}: line {lineno}: {exc.msg}") from None
                    self.entries[rec["fingerprint"]] = rec["response"]

    def __contains__(self, fp: str) -> bool:
        return fp in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, fp: str):
        return self.entries.get(fp)

    def put(self, fp: str, request: dict, response) -> None:
        with self._lock:
            if fp in self.entries:
                return
            self.entries[fp] = response
            if self.path is None:
                return
            rec = {
                "fingerprint": fp,
                "request": request,
                "response": response,
                "recorded_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            }
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


class ChatBackend(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


class SearchBackend(Protocol):
    def search(self, request: SearchRequest) -> list[SearchResult]: ...


class _Cached:
    kind = ""

    def __init__(self, backend=None, cache: Optional[ReplayCache] = None, mode=None):
        self.backend = backend
        self.cache = cache if cache is not None else ReplayCache(mode=mode or CacheMode.PASSTHROUGH)
        self.mode = CacheMode(mode) if mode is not None else self.cache.mode
        self.calls = 0

    def _lookup(self, payload: dict, live: Callable):
        fp = fingerprint(self.kind, payload)
        if self.mode is CacheMode.PASSTHROUGH:
            return self._live(live)
        if fp in self.cache:
            return self.cache.get(fp)
        if self.mode is CacheMode.REPLAY:
            raise ReplayMissError(fp, self.kind)
        response = self._live(live)
        self.cache.put(fp, payload, response)
        return response

    def _live(self, live: Callable):
        if self.backend is None:
            raise ClientError(f"no live {self.kind} backend configured")
        self.calls += 1
        return live()


class ChatClient(_Cached):
    kind = "chat"

    def chat(self, request: ChatRequest) -> str:
        text = self._lookup(request.to_dict(), lambda: self.backend.complete(request))
        if not isinstance(text, str):
            raise ClientError(f"completion is not text: {type(text).__name__}")
        return text


class SearchClient(_Cached):
    kind = "search"

    def search(self, request: SearchRequest) -> list[SearchResult]:
        # the cache stores the backend's full answer so that a smaller max_results replays it
        payload = {"query": request.query}

        def live():
            return [list(r) for r in self.backend.search(request)]

        rows = self._lookup(payload, live)
        return [SearchResult(*r) for r in rows][: request.max_results]


def with_retries(fn: Callable, retries: int = 2, backoff: float = 0.5, sleep=time.sleep):
    """Call ``fn``; on retriable errors retry up to ``retries`` times with exponential backoff."""
    for attempt in range(retries + 1):
        try:
            return fn()
        except ClientError as exc:
            if not exc.retriable or attempt == retries:
                raise
            delay = backoff * (2 ** attempt)
            log.warning("retriable client error (%s); retrying in %.1fs", exc, delay)
            sleep(delay)


class HttpChatBackend:
    """POSTs ``{"model","messages","temperature","max_tokens"}`` and reads ``choices[0].message.content``."""

    def __init__(self, base_url: str, token_env: str = TOKEN_ENV, timeout: float = 60.0, path: str = "/chat/completions"):
        self.url = base_url.rstrip("/") + path
        self.token_env = token_env
        self.timeout = timeout

    def _headers(self):
        token = os.environ.get(self.token_env)
        return {"Authorization": f"Bearer {token}"} if token else {}

    def complete(self, request: ChatRequest) -> str:
        body = _post(self.url, request.to_dict(), self._headers(), self.timeout)
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise TransportError(f"malformed chat response: {str(body)[:200]}") from None


class HttpSearchBackend:
    """POSTs ``{"query","count"}``; expects a JSON array of ``{"title","snippet","url"}``."""

    def __init__(self, base_url: str, token_env: str = TOKEN_ENV, timeout: float = 30.0, path: str = "/search"):
        self.url = base_url.rstrip("/") + path
        self.token_env = token_env
        self.timeout = timeout

    def search(self, request: SearchRequest) -> list[SearchResult]:
        token = os.environ.get(self.token_env)
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        body = _post(self.url, request.to_dict(), headers, self.timeout)
        if isinstance(body, dict):
            body = body.get("results", [])
        return [SearchResult(r.get("title", ""), r.get("snippet", ""), r.get("url", "")) for r in body][: request.max_results]


def _post(url: str, payload: dict, headers: dict, timeout: float):
    import httpx

    try:
        resp = httpx.post(url, json=payload, headers=headers, timeout=timeout)
    except httpx.HTTPError as exc:
        raise TransportError(str(exc)) from exc
    if resp.status_code in (401, 403):
        raise AuthError(f"authentication failed ({resp.status_code})")
    if resp.status_code == 429:
        raise RateLimitError("rate limited")
    if resp.status_code >= 500:
        raise TransportError(f"server error {resp.status_code}")
    if resp.status_code >= 400:
        raise ClientError(f"request rejected ({resp.status_code}): {resp.text[:200]}")
    try:
        return resp.json()
    except ValueError:
        raise TransportError("response is not JSON") from None


@dataclass
class FunctionChatBackend:
    """Adapts a plain callable ``prompt -> completion`` (used for scripted and offline runs)."""

    fn: Callable[[str], str]
    seen: list = field(default_factory=list)

    def complete(self, request: ChatRequest) -> str:
        prompt = "\n".join(m.content for m in request.messages)
        self.seen.append(prompt)
        return self.fn(prompt)


@dataclass
class StaticSearchBackend:
    """Returns fixed results per query; unknown queries yield nothing."""

    results: dict

    def search(self, request: SearchRequest) -> list[SearchResult]:
        return [SearchResult(*r) if not isinstance(r, dict) else SearchResult(r["title"], r["snippet"], r["url"])
                for r in self.results.get(request.query, [])]


def replay_clients(cache_path, mode: CacheMode = CacheMode.REPLAY, chat_backend=None, search_backend=None):
    """Chat and search clients sharing one cache file."""
    cache = ReplayCache(cache_path, mode)
    return ChatClient(chat_backend, cache, mode), SearchClient(search_backend, cache, mode)


def is_replay(client) -> bool:
    return getattr(client, "mode", None) is CacheMode.REPLAY


def chat_messages(prompt: str, system: Optional[str] = None) -> Sequence[Message]:
    msgs = [Message("system", system)] if system else []
    msgs.append(Message("user", prompt))
    return tuple(msgs)
