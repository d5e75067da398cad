"""Chat backend boundary: live calls, scripted replay, and recording.

Every model interaction in the pipeline goes through one narrow
interface so runs can be replayed bit-for-bit. Requests carry a
``purpose_tag`` (what pipeline stage is asking) and a ``subject_id``
(what the question is about); replay files are keyed by
(purpose_tag, subject_id, per-pair sequence number), which makes the
scripted backend independent of prompt wording.

Decoding is pinned to temperature=0, top_p=1, n=1. The live backend
sends exactly those values on every request.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

from untangler.errors import UntanglerError

PURPOSE_TAGS = ("profile", "judge", "synthesize", "review")

DEFAULT_BASE_URL = "http://localhost:8000/v1"
DEFAULT_MODEL = "gpt-4o-mini"

ENV_BASE_URL = "UNTANGLER_BASE_URL"
ENV_MODEL = "UNTANGLER_MODEL"
ENV_API_KEY = "UNTANGLER_API_KEY"


class BackendError(UntanglerError):
    """Base class for chat backend failures."""


class MissingScriptEntry(BackendError):
    """Replay file has no entry for the requested key."""


class ReplayExhausted(BackendError):
    """More calls were made for a key pair than the replay file holds."""


class TransportError(BackendError):
    """Network or protocol failure that survived the retry budget."""


class AuthError(BackendError):
    """The endpoint rejected our credentials (401/403); never retried."""


class WriteError(BackendError):
    """The recording backend could not persist a replay entry."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 0.0
    top_p: float = 1.0
    n: int = 1


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    purpose_tag: str
    subject_id: str
    decoding: DecodingParams = DecodingParams()

    def __post_init__(self):
        if self.purpose_tag not in PURPOSE_TAGS:
            raise ValueError(f"unknown purpose_tag {self.purpose_tag!r}")
        if not self.messages:
            raise ValueError("a chat request needs at least one message")


@dataclass(frozen=True)
class ChatUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: ChatUsage = ChatUsage()


@dataclass
class _TagStats:
    requests: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    wall_seconds: float = 0.0


@dataclass
class UsageLedger:
    """Per-purpose accounting of requests, tokens and wall time.

    Totals are always derived from the per-tag rows, so the books
    balance by construction.
    """

    tags: dict[str, _TagStats] = field(default_factory=dict)

    def record(self, purpose_tag: str, usage: ChatUsage, wall_seconds: float = 0.0) -> None:
        stats = self.tags.setdefault(purpose_tag, _TagStats())
        stats.requests += 1
        stats.prompt_tokens += usage.prompt_tokens
        stats.completion_tokens += usage.completion_tokens
        stats.wall_seconds += wall_seconds

    def requests_for(self, purpose_tag: str) -> int:
        stats = self.tags.get(purpose_tag)
        return stats.requests if stats else 0

    def absorb(self, other: "UsageLedger") -> None:
        """Fold another ledger's books into this one."""
        for tag, stats in other.tags.items():
            mine = self.tags.setdefault(tag, _TagStats())
            mine.requests += stats.requests
            mine.prompt_tokens += stats.prompt_tokens
            mine.completion_tokens += stats.completion_tokens
            mine.wall_seconds += stats.wall_seconds

    def total_requests(self) -> int:
        return sum(s.requests for s in self.tags.values())

    def total_tokens(self) -> int:
        return sum(s.prompt_tokens + s.completion_tokens for s in self.tags.values())

    def snapshot(self) -> dict:
        doc: dict = {"purpose": {}, "totals": {}}
        for tag in sorted(self.tags):
            s = self.tags[tag]
            doc["purpose"][tag] = {
                "requests": s.requests,
                "prompt_tokens": s.prompt_tokens,
                "completion_tokens": s.completion_tokens,
                "wall_seconds": round(s.wall_seconds, 6),
            }
        doc["totals"] = {
            "requests": self.total_requests(),
            "prompt_tokens": sum(s.prompt_tokens for s in self.tags.values()),
            "completion_tokens": sum(s.completion_tokens for s in self.tags.values()),
            "wall_seconds": round(sum(s.wall_seconds for s in self.tags.values()), 6),
        }
        return doc


def call(backend, ledger: UsageLedger | None, request: ChatRequest) -> ChatResponse:
    """Run one request through a backend, booking usage and wall time."""
    started = time.monotonic()
    response = backend.complete(request)
    if ledger is not None:
        ledger.record(request.purpose_tag, response.usage, time.monotonic() - started)
    return response


class ScriptedBackend:
    """Replays answers from a JSONL script, keyed by request identity.

    Each line holds ``purpose_tag``, ``subject_id``, ``seq`` (per-pair
    call number starting at 0), ``text`` and ``usage``. Asking for a
    pair that is absent raises MissingScriptEntry; asking more often
    than the script provides raises ReplayExhausted.
    """

    backend_kind = "scripted"

    def __init__(self, entries):
        self._responses: dict[tuple[str, str, int], ChatResponse] = {}
        self._cursor: dict[tuple[str, str], int] = {}
        for entry in entries:
            key = (entry["purpose_tag"], entry["subject_id"], int(entry.get("seq", 0)))
            if key in self._responses:
                raise ValueError(f"duplicate replay entry for {key}")
            usage = entry.get("usage") or {}
            self._responses[key] = ChatResponse(
                text=entry["text"],
                usage=ChatUsage(
                    prompt_tokens=int(usage.get("prompt_tokens", 0)),
                    completion_tokens=int(usage.get("completion_tokens", 0)),
                ),
            )

    @classmethod
    def from_path(cls, path) -> "ScriptedBackend":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    entries.append(json.loads(line))
        return cls(entries)

    def complete(self, request: ChatRequest) -> ChatResponse:
        pair = (request.purpose_tag, request.subject_id)
        seq = self._cursor.get(pair, 0)
        self._cursor[pair] = seq + 1
        response = self._responses.get((*pair, seq))
        if response is None:
            if seq > 0 or any(k[:2] == pair for k in self._responses):
                raise ReplayExhausted(
                    f"no scripted answer #{seq} for {request.purpose_tag}/{request.subject_id}"
                )
            raise MissingScriptEntry(
                f"no scripted answers for {request.purpose_tag}/{request.subject_id}"
            )
        return response


class RecordingBackend:
    """Wraps another backend and appends every exchange to a JSONL file.

    The file it produces feeds ScriptedBackend for bit-for-bit replay,
    including token usage.
    """

    backend_kind = "record"

    def __init__(self, inner, path):
        self._inner = inner
        self._path = path
        self._cursor: dict[tuple[str, str], int] = {}
        try:
            self._fh = open(path, "w", encoding="utf-8")
        except OSError as exc:
            raise WriteError(f"cannot open replay file {path}: {exc}") from exc

    def complete(self, request: ChatRequest) -> ChatResponse:
        pair = (request.purpose_tag, request.subject_id)
        seq = self._cursor.get(pair, 0)
        self._cursor[pair] = seq + 1
        response = self._inner.complete(request)
        entry = {
            "purpose_tag": request.purpose_tag,
            "subject_id": request.subject_id,
            "seq": seq,
            "text": response.text,
            "usage": {
                "prompt_tokens": response.usage.prompt_tokens,
                "completion_tokens": response.usage.completion_tokens,
            },
        }
        try:
            self._fh.write(json.dumps(entry, sort_keys=True) + "\n")
            self._fh.flush()
        except OSError as exc:
            raise WriteError(f"cannot append to replay file {self._path}: {exc}") from exc
        return response

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()
        return False


class LiveBackend:
    """Talks to an OpenAI-compatible chat completions endpoint.

    Retries transport failures and 5xx responses up to three attempts
    with exponential backoff; 401/403 raise AuthError immediately and
    other client errors are not retried.
    """

    backend_kind = "live"

    def __init__(
        self,
        base_url: str | None = None,
        model: str | None = None,
        api_key: str | None = None,
        timeout: float = 120.0,
        max_attempts: int = 3,
        sleeper=time.sleep,
    ):
        self.base_url = (base_url or os.environ.get(ENV_BASE_URL, DEFAULT_BASE_URL)).rstrip("/")
        self.model = model or os.environ.get(ENV_MODEL, DEFAULT_MODEL)
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY, "")
        self.timeout = timeout
        self.max_attempts = max_attempts
        self._sleep = sleeper
        self._client = None

    def _http(self):
        import httpx

        if self._client is None:
            headers = {"Content-Type": "application/json"}
            if self.api_key:
                headers["Authorization"] = f"Bearer {self.api_key}"
            self._client = httpx.Client(timeout=self.timeout, headers=headers)
        return self._client

    def complete(self, request: ChatRequest) -> ChatResponse:
        import httpx

        payload = {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.decoding.temperature,
            "top_p": request.decoding.top_p,
            "n": request.decoding.n,
        }
        url = f"{self.base_url}/chat/completions"
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(2 ** (attempt - 1))
            try:
                resp = self._http().post(url, json=payload)
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"endpoint rejected credentials (HTTP {resp.status_code})")
            if resp.status_code >= 500:
                last_error = TransportError(f"server error HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise TransportError(f"request rejected: HTTP {resp.status_code}: {resp.text[:500]}")
            try:
                body = resp.json()
                text = body["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise TransportError(f"malformed completion payload: {exc}") from exc
            usage = body.get("usage") or {}
            return ChatResponse(
                text=text,
                usage=ChatUsage(
                    prompt_tokens=int(usage.get("prompt_tokens", 0)),
                    completion_tokens=int(usage.get("completion_tokens", 0)),
                ),
            )
        raise TransportError(f"giving up after {self.max_attempts} attempts: {last_error}")

    def close(self) -> None:
        if self._client is not None:
            self._client.close()
            self._client = None
