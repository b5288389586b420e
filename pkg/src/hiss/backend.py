"""Text-completion backends with stop-sequence semantics.

Two implementations share the ``complete(request)`` surface:

* :class:`ScriptedBackend` replays JSON fixtures deterministically.
* :class:`HttpCompletionBackend` talks to a completion-over-HTTP endpoint.

Stop sequences are matched case-insensitively and the earliest occurrence
wins; the returned text never contains any stop string.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

import httpx

from .errors import BackendUnavailable, BudgetExceeded, InvalidRequest, ScriptExhausted

log = logging.getLogger(__name__)

DEFAULT_MAX_TOKENS = 512
MAX_STOP_SEQUENCES = 4


class FinishReason(str, enum.Enum):
    STOP_SEQUENCE_HIT = "stop_sequence_hit"
    LENGTH = "length"
    NATURAL_END = "natural_end"


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    temperature: float = 0.0
    max_tokens: int = DEFAULT_MAX_TOKENS
    stop_sequences: tuple[str, ...] = ()
    #: keys per-claim conversation state in the scripted backend
    conversation_id: str = ""

    def __post_init__(self) -> None:
        if not self.prompt:
            raise InvalidRequest("prompt is empty")
        if self.temperature < 0:
            raise InvalidRequest("temperature must be >= 0")
        if self.max_tokens < 1:
            raise InvalidRequest("max_tokens must be positive")
        if len(self.stop_sequences) > MAX_STOP_SEQUENCES:
            raise InvalidRequest(f"at most {MAX_STOP_SEQUENCES} stop sequences")
        if any(not s for s in self.stop_sequences):
            raise InvalidRequest("stop sequences must be non-empty")
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    finish_reason: FinishReason
    matched_stop: str | None = None

    def __post_init__(self) -> None:
        if (self.matched_stop is not None) != (self.finish_reason is FinishReason.STOP_SEQUENCE_HIT):
            raise ValueError("matched_stop is set iff finish_reason is stop_sequence_hit")


def _fold(text: str) -> str:
    # per-character lowercasing keeps offsets aligned ("İ".lower() is two chars)
    return "".join(c if len(c.lower()) != 1 else c.lower() for c in text)


def find_stop(text: str, stops: Iterable[str]) -> tuple[int, str] | None:
    """Earliest case-insensitive occurrence of any stop; longest stop breaks ties."""
    folded = _fold(text)
    best: tuple[int, str] | None = None
    for stop in stops:
        pos = folded.find(_fold(stop))
        if pos < 0:
            continue
        if best is None or pos < best[0] or (pos == best[0] and len(stop) > len(best[1])):
            best = (pos, stop)
    return best


def apply_stops(text: str, stops: Sequence[str]) -> tuple[str, str | None]:
    """Cut ``text`` at the earliest stop. Returns (kept text, matched stop or None)."""
    hit = find_stop(text, stops)
    if hit is None:
        return text, None
    return text[: hit[0]], hit[1]


_TOKEN_RE = re.compile(r"\s*\S+|\s+")


def truncate_tokens(text: str, max_tokens: int) -> tuple[str, bool]:
    """Approximate token budget: a token is a run of non-space plus its leading space."""
    count = 0
    for m in _TOKEN_RE.finditer(text):
        count += 1
        if count > max_tokens:
            return text[: m.start()], True
    return text, False


class Backend(Protocol):
    backend_id: str

    def complete(self, request: CompletionRequest) -> CompletionResponse: ...


# --------------------------------------------------------------------------
# scripted backend


@dataclass(frozen=True)
class ScriptEntry:
    match_key: str
    continuation: str

    def __post_init__(self) -> None:
        if not self.continuation:
            raise ValueError("scripted continuation must be non-empty")


@dataclass
class ScriptedTranscript:
    """Ordered (match_key, continuation) entries for one conversation."""

    entries: list[ScriptEntry]

    @classmethod
    def from_list(cls, items: Iterable[Mapping[str, str]]) -> "ScriptedTranscript":
        return cls([ScriptEntry(it.get("match", ""), it["continuation"]) for it in items])


@dataclass
class _Conversation:
    entries: list[ScriptEntry]
    consumed: list[bool]
    # prompt length at the last reply and the unconsumed rest of that entry
    pending_prompt: str | None = None
    pending_rest: str = ""


def _suffix_match(prompt: str, key: str) -> bool:
    return prompt.rstrip().endswith(key.rstrip())


class ScriptedBackend:
    """Deterministic backend replaying fixture continuations.

    For each request the backend picks a continuation, then applies the
    request's stop sequences and token budget to it:

    1. If the prompt extends the previous reply of this conversation by text
       that the unconsumed rest of the previous entry starts with, the rest
       continues (the entry behaves like a model that was merely paused).
    2. Otherwise the unconsumed entry whose ``match_key`` is the longest
       suffix of the prompt wins (ties go to the earlier entry).
    3. Otherwise the first unconsumed entry with an empty key is used.

    Conversations are isolated by ``request.conversation_id``; ids absent
    from the fixture use the ``"*"`` conversation.
    """

    def __init__(self, conversations: Mapping[str, ScriptedTranscript | Sequence[Mapping[str, str]]],
                 backend_id: str = "scripted"):
        self.backend_id = backend_id
        self._scripts: dict[str, list[ScriptEntry]] = {}
        for cid, script in conversations.items():
            if not isinstance(script, ScriptedTranscript):
                script = ScriptedTranscript.from_list(script)
            self._scripts[cid] = list(script.entries)
        self._state: dict[str, _Conversation] = {}
        self._lock = threading.Lock()
        self.calls: list[CompletionRequest] = []

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        path = Path(path)
        data = json.loads(path.read_text(encoding="utf-8"))
        if "conversations" in data:
            convs = data["conversations"]
        else:
            convs = {"*": data["entries"]}
        return cls(convs, backend_id=f"scripted:{path.stem}")

    def _conversation(self, cid: str) -> _Conversation:
        key = cid if cid in self._scripts else "*"
        if key not in self._scripts:
            raise ScriptExhausted(f"no script for conversation {cid!r}")
        state_key = cid if cid in self._scripts else f"*:{cid}"
        conv = self._state.get(state_key)
        if conv is None:
            entries = self._scripts[key]
            conv = _Conversation(entries, [False] * len(entries))
            self._state[state_key] = conv
        return conv

    def _pick(self, conv: _Conversation, prompt: str) -> str:
        if conv.pending_prompt is not None and prompt.startswith(conv.pending_prompt):
            appended = prompt[len(conv.pending_prompt):]
            if conv.pending_rest.startswith(appended) and len(conv.pending_rest) > len(appended):
                return conv.pending_rest[len(appended):]
        best = None
        for i, entry in enumerate(conv.entries):
            if conv.consumed[i] or not entry.match_key:
                continue
            if _suffix_match(prompt, entry.match_key):
                if best is None or len(entry.match_key) > len(conv.entries[best].match_key):
                    best = i
        if best is None:
            best = next((i for i, e in enumerate(conv.entries)
                         if not conv.consumed[i] and not e.match_key), None)
        if best is None:
            raise ScriptExhausted(f"no scripted entry matches prompt ending {prompt[-80:]!r}")
        conv.consumed[best] = True
        return conv.entries[best].continuation

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        with self._lock:
            self.calls.append(request)
            conv = self._conversation(request.conversation_id)
            full = self._pick(conv, request.prompt)
            text, stop = apply_stops(full, request.stop_sequences)
            text, cut = truncate_tokens(text, request.max_tokens)
            conv.pending_prompt = request.prompt + text
            conv.pending_rest = full[len(text):]
        if cut:
            return CompletionResponse(text, FinishReason.LENGTH)
        if stop is not None:
            return CompletionResponse(text, FinishReason.STOP_SEQUENCE_HIT, stop)
        return CompletionResponse(text, FinishReason.NATURAL_END)


# --------------------------------------------------------------------------
# networked backend


@dataclass
class HttpBackendConfig:
    endpoint: str = "https://api.openai.com/v1/completions"
    model: str = "gpt-3.5-turbo-instruct"
    timeout_s: float = 60.0
    api_key_env: str = "HISS_LLM_API_KEY"
    #: forward stop sequences to the server. Servers strip the stop without
    #: saying which one fired, so by default stops are applied locally only.
    server_stops: bool = False

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "HttpBackendConfig":
        keys = ("endpoint", "model", "timeout_s", "api_key_env", "server_stops")
        known = {k: data[k] for k in keys if k in data}
        return cls(**known)


class HttpCompletionBackend:
    """Completion-over-HTTP client.

    Sends ``{"model", "prompt", "temperature", "max_tokens", "stop"}`` and
    accepts either an OpenAI-style ``choices[0].text`` body or a bare
    ``{"text": ...}``. Stops are applied locally because the protocol needs
    to know which stop fired and servers differ in how they honour them.
    """

    def __init__(self, config: HttpBackendConfig | None = None, *, api_key: str | None = None,
                 client: httpx.Client | None = None):
        self.config = config or HttpBackendConfig()
        self.api_key = api_key if api_key is not None else os.environ.get(self.config.api_key_env)
        if not self.api_key:
            raise BackendUnavailable(
                f"no API key: set ${self.config.api_key_env} or pass a scripted --fixture")
        self.backend_id = f"http:{self.config.model}"
        self._client = client or httpx.Client(timeout=self.config.timeout_s)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        payload = {
            "model": self.config.model,
            "prompt": request.prompt,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.stop_sequences and self.config.server_stops:
            payload["stop"] = list(request.stop_sequences)
        try:
            resp = self._client.post(
                self.config.endpoint, json=payload,
                headers={"Authorization": f"Bearer {self.api_key}"})
        except httpx.HTTPError as exc:
            raise BackendUnavailable(f"request failed: {exc}") from exc
        if resp.status_code == 402 or (resp.status_code == 429 and "quota" in resp.text.lower()):
            raise BudgetExceeded(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise BackendUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
        except ValueError as exc:
            raise BackendUnavailable("response is not JSON") from exc
        return self.parse_body(body, request, self.config.server_stops)

    @staticmethod
    def parse_body(body: Mapping[str, Any], request: CompletionRequest,
                   server_stops: bool = False) -> CompletionResponse:
        if "choices" in body:
            choice = body["choices"][0]
            raw = choice.get("text", "")
            server_reason = choice.get("finish_reason")
        else:
            raw = body.get("text", "")
            server_reason = body.get("finish_reason")
        text, stop = apply_stops(raw, request.stop_sequences)
        if stop is not None:
            return CompletionResponse(text, FinishReason.STOP_SEQUENCE_HIT, stop)
        if server_reason == "length":
            return CompletionResponse(text, FinishReason.LENGTH)
        if server_stops and server_reason == "stop" and len(request.stop_sequences) == 1:
            # a server-side stop is not echoed; with one candidate it is known
            return CompletionResponse(text, FinishReason.STOP_SEQUENCE_HIT, request.stop_sequences[0])
        return CompletionResponse(text, FinishReason.NATURAL_END)

    def close(self) -> None:
        self._client.close()


# --------------------------------------------------------------------------
# retry


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base_ms: int = 500

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise InvalidRequest("max_attempts must be >= 1")


def with_retry(backend: Backend, request: CompletionRequest, policy: RetryPolicy = RetryPolicy(),
               sleep: Callable[[float], None] = time.sleep) -> CompletionResponse:
    """Call ``backend.complete``, retrying only BackendUnavailable with exponential backoff."""
    for attempt in range(1, policy.max_attempts + 1):
        try:
            return backend.complete(request)
        except BackendUnavailable as exc:
            if attempt == policy.max_attempts:
                raise
            delay = policy.backoff_base_ms * 2 ** (attempt - 1) / 1000.0
            log.warning("backend unavailable (attempt %d/%d): %s; retrying in %.2fs",
                        attempt, policy.max_attempts, exc, delay)
            sleep(delay)
    raise AssertionError("unreachable")


@dataclass
class RetryingBackend:
    """Backend wrapper applying :func:`with_retry` to every call."""

    inner: Backend
    policy: RetryPolicy = field(default_factory=RetryPolicy)
    sleep: Callable[[float], None] = time.sleep

    @property
    def backend_id(self) -> str:
        return self.inner.backend_id

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        return with_retry(self.inner, request, self.policy, self.sleep)
