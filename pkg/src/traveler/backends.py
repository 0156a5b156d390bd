"""Completion backends: OpenAI-compatible HTTP, scripted fixture replay, and the shared bounded pool."""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

import httpx

from .frames import Frame

logger = logging.getLogger(__name__)

ROLE_TAGS = ("planner", "retriever", "extractor_qgen", "extractor_vqa", "captioner", "evaluator", "summarizer")
IMAGE_ROLES = frozenset({"extractor_vqa", "captioner"})
RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})
API_KEY_ENV = "TRAVELER_API_KEY"


class BackendError(Exception):
    def __init__(self, role_tag: str, message: str) -> None:
        super().__init__(f"[{role_tag}] {message}")
        self.role_tag = role_tag


class TransportError(BackendError):
    """Network failure or timeout that persisted through all retries."""


class EndpointError(BackendError):
    def __init__(self, role_tag: str, status: int, message: str) -> None:
        super().__init__(role_tag, f"HTTP {status}: {message}")
        self.status = status


class ProtocolError(BackendError):
    """The endpoint answered 2xx but the payload was not a chat completion."""


class FixtureMissError(BackendError):
    def __init__(self, role_tag: str, key: str) -> None:
        super().__init__(role_tag, f"no scripted response for key {key!r}")
        self.key = key


@dataclass(frozen=True)
class CompletionRequest:
    role_tag: str
    prompt: str
    images: tuple[Frame, ...] = ()
    max_tokens: int = 1024
    temperature: float = 0.0
    scope: str = ""  # run identifier; scripted replay keeps separate cursors per scope

    def __post_init__(self) -> None:
        object.__setattr__(self, "images", tuple(self.images))
        if self.role_tag not in ROLE_TAGS:
            raise ValueError(f"unknown role tag {self.role_tag!r}")
        if bool(self.images) != (self.role_tag in IMAGE_ROLES):
            raise ValueError(f"role {self.role_tag!r} {'requires' if self.role_tag in IMAGE_ROLES else 'forbids'} images")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    usage: dict[str, int] | None = None
    latency_ms: int = 0


class ChatBackend(Protocol):
    supports_multi_image: bool

    def complete(self, req: CompletionRequest) -> CompletionResponse: ...


def data_url(frame: Frame) -> str:
    return f"data:{frame.mime};base64,{base64.b64encode(frame.data).decode('ascii')}"


class OpenAIChatBackend:
    """Chat-completions client for any OpenAI-compatible server (GPT, vLLM, SGLang, llama.cpp...)."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        *,
        timeout: float = 120.0,
        max_attempts: int = 3,
        backoff_seconds: float = 1.0,
        supports_multi_image: bool = True,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.max_attempts = max_attempts
        self.backoff_seconds = backoff_seconds
        self.supports_multi_image = supports_multi_image
        self._client = client or httpx.Client(timeout=timeout)
        self._sleep = sleep

    def build_payload(self, req: CompletionRequest) -> dict[str, Any]:
        if req.images:
            content: Any = [{"type": "text", "text": req.prompt}]
            content += [{"type": "image_url", "image_url": {"url": data_url(f)}} for f in req.images]
        else:
            content = req.prompt
        return {
            "model": self.model,
            "messages": [{"role": "user", "content": content}],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        }

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        payload = self.build_payload(req)
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        start = time.monotonic()
        for attempt in range(self.max_attempts):
            last_attempt = attempt == self.max_attempts - 1
            try:
                response = self._client.post(self.url, json=payload, headers=headers)
            except httpx.TransportError as exc:  # includes timeouts
                if last_attempt:
                    raise TransportError(req.role_tag, f"{type(exc).__name__}: {exc}") from exc
                logger.warning("%s request failed (%s), retrying", req.role_tag, exc)
                self._sleep(self.backoff_seconds * 2**attempt)
                continue
            if response.status_code in RETRYABLE_STATUS and not last_attempt:
                logger.warning("%s request got HTTP %d, retrying", req.role_tag, response.status_code)
                self._sleep(self.backoff_seconds * 2**attempt)
                continue
            if not response.is_success:
                raise EndpointError(req.role_tag, response.status_code, response.text[:200])
            text, usage = _parse_completion(req.role_tag, response)
            return CompletionResponse(text=text, usage=usage, latency_ms=int((time.monotonic() - start) * 1000))
        raise AssertionError("unreachable")  # pragma: no cover

    def close(self) -> None:
        self._client.close()


def _parse_completion(role_tag: str, response: httpx.Response) -> tuple[str, dict[str, int] | None]:
    try:
        body = response.json()
        text = body["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(role_tag, f"malformed completion payload: {exc!r}") from exc
    if not isinstance(text, str):
        raise ProtocolError(role_tag, "completion content is not a string")
    usage = body.get("usage") if isinstance(body.get("usage"), dict) else None
    return text, usage


def stable_hash(*parts: str | bytes) -> str:
    digest = hashlib.sha256()
    for part in parts:
        digest.update(part.encode("utf-8") if isinstance(part, str) else part)
        digest.update(b"\x00")
    return digest.hexdigest()[:16]


def request_keys(req: CompletionRequest, step: int) -> list[str]:
    """Lookup keys for a keyed fixture map, most specific first."""
    keys = [stable_hash(req.role_tag, req.prompt, *(f.data for f in req.images)), "prompt:" + stable_hash(req.prompt)]
    if req.images:
        keys.append("image:" + stable_hash(req.images[0].data))
    keys += [f"step:{step}", "*"]
    return keys


def scripted_lookup(fixtures: Mapping[str, Any], role_tag: str, key: int | Sequence[str],
                    prompt: str | None = None) -> str:
    """Replay one fixture response.

    ``fixtures`` maps role tags to either an ordered list of responses, indexed
    by step number, or a keyed map searched with the candidate keys in order.
    In a keyed map, ``"contains:<text>"`` entries match any prompt containing
    ``<text>``; they are tried after the hash keys and before ``step:``/``*``.
    """
    script = fixtures.get(role_tag)
    if isinstance(script, list):
        step = key if isinstance(key, int) else _step_from_keys(key)
        if step is not None and 0 <= step < len(script):
            return str(script[step])
        raise FixtureMissError(role_tag, f"step:{step}")
    if isinstance(script, dict):
        candidates = [f"step:{key}", "*"] if isinstance(key, int) else list(key)
        fallbacks = [c for c in candidates if c.startswith("step:") or c == "*"]
        for candidate in candidates:
            if candidate in fallbacks:
                continue
            if candidate in script:
                return str(script[candidate])
        if prompt is not None:
            for pattern, response in script.items():
                if pattern.startswith("contains:") and pattern[9:] in prompt:
                    return str(response)
        for candidate in fallbacks:
            if candidate in script:
                return str(script[candidate])
        raise FixtureMissError(role_tag, candidates[0] if candidates else "")
    raise FixtureMissError(role_tag, f"step:{key}" if isinstance(key, int) else (key[0] if key else ""))


def _step_from_keys(keys: Sequence[str]) -> int | None:
    for k in keys:
        if k.startswith("step:"):
            return int(k[5:])
    return None


@dataclass(frozen=True)
class CallRecord:
    role_tag: str
    scope: str
    step: int
    prompt: str
    n_images: int
    max_tokens: int


class ScriptedBackend:
    """Deterministic replay of fixture responses.

    Fixture layout (JSON)::

        {"planner": ["PLAN\\n1. ..."], "captioner": {"image:<hash>": "...", "*": "..."},
         "scenarios": {"<scope>": {"evaluator": ["... Final Answer: 2"]}}}

    Per-scope role scripts override the top-level ones. Step cursors are kept
    per (scope, role), so concurrent runs with distinct scopes never interfere.
    """

    def __init__(self, fixtures: Mapping[str, Any], *, supports_multi_image: bool = True, delay: float = 0.0) -> None:
        self.fixtures = dict(fixtures)
        self.supports_multi_image = supports_multi_image
        self.delay = delay
        self.calls: list[CallRecord] = []
        self._steps: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, **kwargs: Any) -> ScriptedBackend:
        return cls(json.loads(Path(path).read_text("utf-8")), **kwargs)

    def script_for(self, scope: str) -> dict[str, Any]:
        script = {k: v for k, v in self.fixtures.items() if k != "scenarios"}
        script.update(self.fixtures.get("scenarios", {}).get(scope, {}))
        return script

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        with self._lock:
            step = self._steps.get((req.scope, req.role_tag), 0)
            self._steps[(req.scope, req.role_tag)] = step + 1
            self.calls.append(CallRecord(req.role_tag, req.scope, step, req.prompt, len(req.images), req.max_tokens))
        if self.delay:
            time.sleep(self.delay)
        text = scripted_lookup(self.script_for(req.scope), req.role_tag, request_keys(req, step), req.prompt)
        return CompletionResponse(text=text, latency_ms=0)

    def consumed(self, role_tag: str, scope: str = "") -> int:
        with self._lock:
            return self._steps.get((scope, role_tag), 0)

    def calls_for(self, role_tag: str, scope: str | None = None) -> list[CallRecord]:
        with self._lock:
            return [c for c in self.calls if c.role_tag == role_tag and (scope is None or c.scope == scope)]


@dataclass
class BackendPool:
    """Routes text requests to the LLM and image requests to the LMM through one bounded queue."""

    llm: ChatBackend
    lmm: ChatBackend | None = None
    queue_capacity: int = 4
    in_flight: int = field(default=0, init=False)
    high_water: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        if self.queue_capacity < 1:
            raise ValueError("queue_capacity must be >= 1")
        if self.lmm is None:
            self.lmm = self.llm
        self._slots = threading.BoundedSemaphore(self.queue_capacity)
        self._counter_lock = threading.Lock()

    def backend_for(self, req: CompletionRequest) -> ChatBackend:
        return self.lmm if req.images else self.llm  # type: ignore[return-value]

    @property
    def lmm_supports_multi_image(self) -> bool:
        return bool(getattr(self.lmm, "supports_multi_image", False))

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        backend = self.backend_for(req)
        with self._slots:
            with self._counter_lock:
                self.in_flight += 1
                self.high_water = max(self.high_water, self.in_flight)
            try:
                return backend.complete(req)
            finally:
                with self._counter_lock:
                    self.in_flight -= 1
