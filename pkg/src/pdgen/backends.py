"""Clients for the chat model, the open-vocabulary detector and the captioner.

Every request has a canonical form and a fingerprint (sha256 of the
canonical JSON). ``replay`` mode answers from fixture files named by
fingerprint, ``record`` mode calls upstream and writes those files, and
``scripted`` mode pops queued answers, which is what the tests use.

Wire format for ``live`` mode (JSON over HTTP POST, bearer auth)::

    POST {endpoint}/chat     {"messages": [{"role", "content"}], "temperature", "max_tokens"}
        -> {"choices": [{"message": {"content": "..."}}]}  or  {"text": "..."}
    POST {endpoint}/detect   {"image": ref, "query": text}
        -> {"detections": [{"label", "box": [x, y, w, h], "score"}]}
    POST {endpoint}/caption  {"image": ref, "box": [x, y, w, h], "prompt": text}
        -> {"caption": "..."}
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
import re
import tempfile
import threading
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, Union

import httpx

from .scene import BoundingBox, Detection

DEFAULT_AUTH_ENV = "PDGEN_API_KEY"


class BackendError(Exception):
    pass


class BackendUnavailable(BackendError):
    pass


class FixtureMiss(BackendError):
    def __init__(self, key: str, kind: str = ""):
        self.key = key
        super().__init__(f"no recorded {kind + ' ' if kind else ''}response for request {key}")


class CredentialMissing(BackendError):
    pass


class QueueExhausted(BackendError):
    pass


class Role(str, enum.Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


def _ws(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip()


@dataclass(frozen=True)
class Message:
    role: Role
    content: str

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_tokens: int = 2048
    # purpose of the call (e.g. "init", "goal", "refine"); informational, not fingerprinted
    tag: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        if self.messages[-1].role is not Role.USER:
            raise ValueError("the last chat message must come from the user")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")

    kind = "chat"

    def canonical(self) -> dict:
        return {
            "kind": "chat",
            "messages": [{"content": _ws(m.content), "role": m.role.value} for m in self.messages],
            "max_tokens": self.max_tokens,
            "temperature": float(self.temperature),
        }


@dataclass(frozen=True)
class DetectionRequest:
    image_ref: str
    query: str

    def __post_init__(self):
        if not self.query.strip():
            raise ValueError("detection query is empty")

    kind = "detect"

    def canonical(self) -> dict:
        return {"kind": "detect", "image": self.image_ref, "query": _ws(self.query)}


@dataclass(frozen=True)
class CaptionRequest:
    image_ref: str
    box: BoundingBox
    prompt: str

    def __post_init__(self):
        if "{" in self.prompt:
            raise ValueError("caption prompt still contains an unfilled placeholder")

    kind = "caption"

    def canonical(self) -> dict:
        return {"kind": "caption", "image": self.image_ref, "box": [float(v) for v in self.box.as_list()],
                "prompt": _ws(self.prompt)}


Request = Union[ChatRequest, DetectionRequest, CaptionRequest]


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def fingerprint(request: Request | Mapping) -> str:
    data = request if isinstance(request, Mapping) else request.canonical()
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


class Mode(str, enum.Enum):
    LIVE = "live"
    REPLAY = "replay"
    RECORD = "record"
    SCRIPTED = "scripted"


@dataclass(frozen=True)
class BackendConfig:
    mode: Mode = Mode.SCRIPTED
    endpoint: str = ""
    auth_env: str = DEFAULT_AUTH_ENV
    fixture_dir: Path | None = None
    request_timeout: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.fixture_dir is not None:
            object.__setattr__(self, "fixture_dir", Path(self.fixture_dir))
        if self.mode in (Mode.REPLAY, Mode.RECORD) and self.fixture_dir is None:
            raise ValueError(f"{self.mode.value} mode needs a fixture directory")


class Upstream(Protocol):
    def chat(self, request: ChatRequest) -> str: ...
    def detect(self, request: DetectionRequest) -> list[Detection]: ...
    def caption(self, request: CaptionRequest) -> str: ...


class HttpUpstream:
    """The live models, reached over HTTP."""

    def __init__(self, config: BackendConfig, transport: httpx.BaseTransport | None = None):
        if not config.endpoint:
            raise ValueError("live calls need an endpoint")
        self.config = config
        self._transport = transport
        self._client: httpx.Client | None = None

    def _http(self) -> httpx.Client:
        if self._client is None:
            token = os.environ.get(self.config.auth_env)
            if not token:
                raise CredentialMissing(f"environment variable {self.config.auth_env} is not set")
            self._client = httpx.Client(
                base_url=self.config.endpoint.rstrip("/"),
                headers={"Authorization": f"Bearer {token}"},
                timeout=self.config.request_timeout,
                transport=self._transport,
            )
        return self._client

    def _post(self, path: str, payload: dict) -> dict:
        client = self._http()
        try:
            resp = client.post(path, json=payload)
            resp.raise_for_status()
            return resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise BackendUnavailable(f"POST {path} failed: {exc}") from exc

    def chat(self, request: ChatRequest) -> str:
        data = self._post("/chat", {
            "messages": [{"role": m.role.value, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
        if "choices" in data:
            return data["choices"][0]["message"]["content"]
        return data["text"]

    def detect(self, request: DetectionRequest) -> list[Detection]:
        data = self._post("/detect", {"image": request.image_ref, "query": request.query})
        return [Detection.from_dict(d) for d in data["detections"]]

    def caption(self, request: CaptionRequest) -> str:
        data = self._post("/caption", {"image": request.image_ref, "box": request.box.as_list(),
                                       "prompt": request.prompt})
        return data["caption"]


class FixtureStore:
    """One JSON file per fingerprint: ``{request, response, recorded_at}``."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, request: Request) -> Any:
        key = fingerprint(request)
        path = self.path(key)
        if not path.is_file():
            raise FixtureMiss(key, request.kind)
        return json.loads(path.read_text(encoding="utf-8"))["response"]

    def put(self, request: Request, response: Any, recorded_at: str | None = None) -> Path:
        key = fingerprint(request)
        with self._guard:
            lock = self._locks.setdefault(key, threading.Lock())
        record = {
            "request": request.canonical(),
            "response": response,
            "recorded_at": recorded_at or datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        path = self.path(key)
        with lock:
            self.directory.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(record, fh, indent=2, sort_keys=True, ensure_ascii=False)
                fh.write("\n")
            os.replace(tmp, path)
        return path


@dataclass
class CallLog:
    chat: list[ChatRequest] = field(default_factory=list)
    detect: list[DetectionRequest] = field(default_factory=list)
    caption: list[CaptionRequest] = field(default_factory=list)

    def chat_tags(self) -> list[str]:
        return [r.tag for r in self.chat]


Scripted = Union[str, Callable[[ChatRequest], str]]


class ModelClient:
    """Single entry point for all three external models.

    In scripted mode the answers come from the ``chat``, ``detections`` and
    ``captions`` queues; a queued item may be a callable that receives the
    request, which lets a test compute its answer from the prompt.
    """

    def __init__(self, config: BackendConfig | None = None, *, upstream: Upstream | None = None,
                 chat: Iterable[Scripted] = (), detections: Iterable[Any] = (), captions: Iterable[Any] = (),
                 recorded_at: str | None = None):
        self.config = config or BackendConfig()
        self.calls = CallLog()
        self._queues = {"chat": deque(chat), "detect": deque(detections), "caption": deque(captions)}
        self._upstream = upstream
        self._store = FixtureStore(self.config.fixture_dir) if self.config.fixture_dir else None
        self._recorded_at = recorded_at

    def _live(self) -> Upstream:
        if self._upstream is None:
            self._upstream = HttpUpstream(self.config)
        return self._upstream

    def _dispatch(self, request: Request, call_live: Callable[[Upstream], Any],
                  encode: Callable[[Any], Any], decode: Callable[[Any], Any]):
        getattr(self.calls, request.kind).append(request)
        mode = self.config.mode
        if mode is Mode.SCRIPTED:
            queue = self._queues[request.kind]
            if not queue:
                raise QueueExhausted(f"no scripted {request.kind} response left")
            item = queue.popleft()
            return item(request) if callable(item) else item
        if mode is Mode.REPLAY:
            return decode(self._store.get(request))
        result = call_live(self._live())
        if mode is Mode.RECORD:
            self._store.put(request, encode(result), self._recorded_at)
        return result

    def chat(self, request: ChatRequest) -> str:
        return self._dispatch(request, lambda up: up.chat(request), lambda r: r, lambda r: r)

    def detect(self, request: DetectionRequest) -> list[Detection]:
        def decode(data):
            return [d if isinstance(d, Detection) else Detection.from_dict(d) for d in data]
        out = self._dispatch(request, lambda up: up.detect(request),
                             lambda ds: [d.to_dict() for d in ds], decode)
        return decode(out)

    def caption(self, request: CaptionRequest) -> str:
        return self._dispatch(request, lambda up: up.caption(request), lambda r: r, lambda r: r)
