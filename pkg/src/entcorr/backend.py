"""Model backend abstraction: a deterministic scripted mock for tests and a
JSON-over-HTTP client for real inference services.

Both honor the reasoning-mode directive.  The wire protocol is chat-style:

    POST <url>
    {"messages": [{"role": "user", "content": "..."}],
     "mode": "think" | "nothink" | "auto",
     "sampling": {"temperature": 0.7, "max_tokens": 512},
     "request_id": "..."}

    200 -> {"text": "...", "usage": {"completion_tokens": 42}}

The usage block is optional; absent usage means no reported token count.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Protocol

import httpx

from .errors import (
    BackendFailureError,
    BackendTimeoutError,
    ConfigError,
    ProtocolError,
)


class Mode(Enum):
    THINK = "think"
    NOTHINK = "nothink"
    AUTO = "auto"

    @classmethod
    def parse(cls, value: str) -> "Mode":
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise ValueError(f"unknown mode {value!r}") from None


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.0
    max_tokens: int = 512

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")


@dataclass(frozen=True)
class BackendRequest:
    prompt: str
    mode: Mode
    sampling: SamplingParams = SamplingParams()
    request_id: str = ""


@dataclass(frozen=True)
class BackendReply:
    """Raw response text plus whatever the backend knows about its length."""

    text: str
    token_count: int | None = None
    used_fallback: bool = False


class Backend(Protocol):
    def invoke(self, request: BackendRequest) -> BackendReply: ...


@dataclass(frozen=True)
class ScriptedRule:
    """One canned response.

    ``match`` is a substring test on the prompt; ``mode`` None matches any
    mode; ``attempt`` -1 matches any attempt index.
    """

    match: str
    response: str
    mode: Mode | None = None
    attempt: int = -1
    tokens: int | None = None


class ScriptedBackend:
    """Table-driven mock: first rule whose (match, mode, attempt) fits wins.

    Attempt indices count invocations per (prompt, mode) pair, so a fixture
    can script "fail twice, then succeed" for rejection-sampling tests.
    Unmatched prompts get the default response with ``used_fallback`` set.
    A lock keeps the counters consistent under concurrent invokes.
    """

    def __init__(self, rules: list[ScriptedRule], default: BackendReply | None = None):
        self.rules = list(rules)
        self.default = default
        self._attempts: dict[tuple[str, Mode], int] = {}
        self._lock = threading.Lock()
        self.history: list[tuple[str, Mode, int]] = []

    @classmethod
    def from_json_file(cls, path: str | Path) -> "ScriptedBackend":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load scripted backend {path}: {exc}") from exc
        return cls.from_json_dict(data, source=str(path))

    @classmethod
    def from_json_dict(cls, data: dict, source: str = "<dict>") -> "ScriptedBackend":
        if not isinstance(data, dict) or "rules" not in data:
            raise ConfigError(f"{source}: expected an object with a 'rules' list")
        rules = []
        for i, raw in enumerate(data["rules"]):
            try:
                mode_raw = raw.get("mode", "any")
                mode = None if mode_raw == "any" else Mode.parse(mode_raw)
                rules.append(ScriptedRule(
                    match=raw["match"],
                    response=raw["response"],
                    mode=mode,
                    attempt=int(raw.get("attempt", -1)),
                    tokens=raw.get("tokens"),
                ))
            except (KeyError, ValueError, TypeError) as exc:
                raise ConfigError(f"{source}: bad rule #{i}: {exc}") from exc
        default = None
        if data.get("default") is not None:
            d = data["default"]
            try:
                default = BackendReply(
                    text=d["response"], token_count=d.get("tokens"), used_fallback=True)
            except (KeyError, TypeError) as exc:
                raise ConfigError(f"{source}: bad default: {exc}") from exc
        return cls(rules, default)

    def attempt_count(self, prompt: str, mode: Mode) -> int:
        with self._lock:
            return self._attempts.get((prompt, mode), 0)

    def invoke(self, request: BackendRequest) -> BackendReply:
        with self._lock:
            key = (request.prompt, request.mode)
            attempt = self._attempts.get(key, 0)
            self._attempts[key] = attempt + 1
            self.history.append((request.prompt, request.mode, attempt))
            for rule in self.rules:
                if rule.match not in request.prompt:
                    continue
                if rule.mode is not None and rule.mode is not request.mode:
                    continue
                if rule.attempt != -1 and rule.attempt != attempt:
                    continue
                return BackendReply(rule.response, rule.tokens, used_fallback=False)
            if self.default is not None:
                return self.default
            raise BackendFailureError(
                f"no scripted rule matches prompt {request.prompt[:60]!r} "
                f"(mode={request.mode.value}, attempt={attempt}) and no default is set")


@dataclass(frozen=True)
class HttpBackendConfig:
    url: str
    auth_token: str | None = None
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.25
    # Some services only honor the mode as an in-prompt control token; when
    # enabled the suffix for the request's mode is appended to the content.
    append_mode_suffix: bool = False
    think_suffix: str = " /think"
    nothink_suffix: str = " /no_think"

    def __post_init__(self):
        if not self.url:
            raise ConfigError("backend url must be non-empty")
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")


class HttpBackend:
    """Wire client with retry.

    Transport failures and 5xx responses are retried with exponential
    backoff up to ``max_retries`` extra attempts, then surface as
    BackendFailureError (BackendTimeoutError when the last failure was a
    timeout).  Non-5xx HTTP errors and unparseable bodies are protocol
    errors and are not retried.  With the suffix option off (the default)
    the prompt goes on the wire byte-identical.
    """

    def __init__(
        self,
        config: HttpBackendConfig,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self._own_client = client is None
        self._client = client or httpx.Client(timeout=config.timeout)
        self._sleep = sleep

    def close(self) -> None:
        if self._own_client:
            self._client.close()

    def __enter__(self) -> "HttpBackend":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _content(self, request: BackendRequest) -> str:
        if not self.config.append_mode_suffix:
            return request.prompt
        if request.mode is Mode.THINK:
            return request.prompt + self.config.think_suffix
        if request.mode is Mode.NOTHINK:
            return request.prompt + self.config.nothink_suffix
        return request.prompt

    def _headers(self) -> dict[str, str]:
        headers = {"content-type": "application/json"}
        if self.config.auth_token:
            headers["authorization"] = f"Bearer {self.config.auth_token}"
        return headers

    def invoke(self, request: BackendRequest) -> BackendReply:
        body = {
            "messages": [{"role": "user", "content": self._content(request)}],
            "mode": request.mode.value,
            "sampling": {
                "temperature": request.sampling.temperature,
                "max_tokens": request.sampling.max_tokens,
            },
            "request_id": request.request_id,
        }
        last_exc: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt > 0:
                self._sleep(self.config.backoff_base * (2 ** (attempt - 1)))
            try:
                response = self._client.post(
                    self.config.url, json=body, headers=self._headers())
            except httpx.TimeoutException as exc:
                last_exc = exc
                continue
            except httpx.TransportError as exc:
                last_exc = exc
                continue
            if response.status_code >= 500:
                last_exc = BackendFailureError(
                    f"server error {response.status_code} from {self.config.url}")
                continue
            if response.status_code != 200:
                raise ProtocolError(
                    f"unexpected status {response.status_code} from {self.config.url}")
            return self._parse_body(response)
        if isinstance(last_exc, httpx.TimeoutException):
            raise BackendTimeoutError(
                f"{self.config.url} timed out after "
                f"{self.config.max_retries + 1} attempts") from last_exc
        raise BackendFailureError(
            f"{self.config.url} failed after {self.config.max_retries + 1} attempts: "
            f"{last_exc}") from last_exc

    def _parse_body(self, response: httpx.Response) -> BackendReply:
        try:
            data = response.json()
        except (json.JSONDecodeError, ValueError) as exc:
            raise ProtocolError(f"non-JSON reply from {self.config.url}") from exc
        if not isinstance(data, dict) or not isinstance(data.get("text"), str):
            raise ProtocolError(
                f"reply from {self.config.url} lacks a string 'text' field")
        token_count = None
        usage = data.get("usage")
        if isinstance(usage, dict) and isinstance(usage.get("completion_tokens"), int):
            token_count = usage["completion_tokens"]
        return BackendReply(text=data["text"], token_count=token_count)
