"""Uniform chat interface to any LLM backend.

Two providers ship built in: a live HTTP adapter speaking the de-facto
chat-completion wire shape, and a deterministic replay adapter that serves
pre-recorded responses from a directory (for offline, reproducible runs).
Engines hold one gateway per agent role for the lifetime of a loop so the
replay cursor advances exactly once per call.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

import requests

from veriloop.errors import (
    ConfigError,
    ProtocolError,
    ReplayExhausted,
    TransportError,
)
from veriloop.model import from_dict, to_canonical_json

__all__ = [
    "Role",
    "AgentRole",
    "Provider",
    "ChatMessage",
    "AgentConfig",
    "Transcript",
    "ChatGateway",
    "ReplayGateway",
    "HttpChatGateway",
    "Recorder",
    "RecordingGateway",
    "build_gateway",
    "send_chat",
    "record_transcript",
]

_BACKOFF_BASE_SECONDS = 0.5


class Role(Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


class AgentRole(Enum):
    CODE = "code"
    REVIEW = "review"


class Provider(Enum):
    HTTP_CHAT = "http_chat"
    REPLAY = "replay"


@dataclass(frozen=True, slots=True)
class ChatMessage:
    role: Role
    content: str

    def __post_init__(self) -> None:
        if self.role in (Role.USER, Role.ASSISTANT) and not self.content:
            raise ValueError(f"ChatMessage.content: must be non-empty for {self.role.value} role")


@dataclass(frozen=True, slots=True)
class AgentConfig:
    """Backend selection plus the knobs both providers understand.

    endpoint/api_key_env apply to the http_chat provider, replay_dir to the
    replay provider; each provider requires exactly its own fields. The
    bearer token is read from the environment variable named by api_key_env,
    never stored here.
    """

    provider: Provider
    model_id: str = "default"
    temperature: float = 0.2
    endpoint: Optional[str] = None
    replay_dir: Optional[str] = None
    request_timeout_seconds: int = 30
    max_retries: int = 2
    api_key_env: Optional[str] = None
    sampling_seed: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("AgentConfig.temperature: must be in [0, 2]")
        if self.request_timeout_seconds <= 0:
            raise ValueError("AgentConfig.request_timeout_seconds: must be positive")
        if self.max_retries < 0:
            raise ValueError("AgentConfig.max_retries: must be non-negative")
        if self.provider is Provider.HTTP_CHAT:
            if not self.endpoint:
                raise ValueError("AgentConfig.endpoint: required for http_chat provider")
            if self.replay_dir is not None:
                raise ValueError("AgentConfig.replay_dir: not allowed for http_chat provider")
        else:
            if not self.replay_dir:
                raise ValueError("AgentConfig.replay_dir: required for replay provider")
            if self.endpoint is not None:
                raise ValueError("AgentConfig.endpoint: not allowed for replay provider")


@dataclass(frozen=True, slots=True)
class Transcript:
    """Ordered conversation for one agent role.

    Invariant: any number of system messages first, then user/assistant
    strictly alternating starting with user.
    """

    messages: tuple[ChatMessage, ...]
    agent_role: AgentRole

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("Transcript.messages: must be non-empty")
        if self.messages[0].role is not Role.SYSTEM:
            raise ValueError("Transcript.messages: first message must have system role")
        tail = [m.role for m in self.messages if m.role is not Role.SYSTEM]
        system_prefix_len = 0
        for m in self.messages:
            if m.role is not Role.SYSTEM:
                break
            system_prefix_len += 1
        if any(m.role is Role.SYSTEM for m in self.messages[system_prefix_len:]):
            raise ValueError("Transcript.messages: system messages allowed only as a prefix")
        for i, role in enumerate(tail):
            expected = Role.USER if i % 2 == 0 else Role.ASSISTANT
            if role is not expected:
                raise ValueError(
                    f"Transcript.messages: expected {expected.value} at exchange position {i}"
                )

    def append(self, message: ChatMessage) -> "Transcript":
        return Transcript(messages=self.messages + (message,), agent_role=self.agent_role)

    def ends_with_user(self) -> bool:
        return self.messages[-1].role is Role.USER

    def char_size(self) -> int:
        return sum(len(m.content) for m in self.messages)


def new_transcript(system_prompt: str, user_prompt: str, agent_role: AgentRole) -> Transcript:
    return Transcript(
        messages=(
            ChatMessage(Role.SYSTEM, system_prompt),
            ChatMessage(Role.USER, user_prompt),
        ),
        agent_role=agent_role,
    )


class ChatGateway:
    """Base provider interface: one assistant reply per send()."""

    def send(self, transcript: Transcript) -> ChatMessage:
        if not transcript.ends_with_user():
            raise ValueError("send: transcript must end with a user message")
        reply = self._complete(transcript)
        if reply.role is not Role.ASSISTANT:
            raise ProtocolError("provider returned a non-assistant message")
        return reply

    def _complete(self, transcript: Transcript) -> ChatMessage:
        raise NotImplementedError


class ReplayGateway(ChatGateway):
    """Serves files from replay_dir in lexicographic order, one per send().

    Consumption is serialized internally, so concurrent workers each receive
    a distinct response exactly once.
    """

    def __init__(self, replay_dir: str | Path):
        self._dir = Path(replay_dir)
        if not self._dir.is_dir():
            raise ConfigError(f"replay_dir does not exist: {self._dir}")
        self._files = sorted(
            p for p in self._dir.iterdir() if p.is_file() and not p.name.startswith(".")
        )
        self._cursor = 0
        self._lock = threading.Lock()

    def remaining(self) -> int:
        with self._lock:
            return len(self._files) - self._cursor

    def _complete(self, transcript: Transcript) -> ChatMessage:
        with self._lock:
            if self._cursor >= len(self._files):
                raise ReplayExhausted(f"no response left in {self._dir} (served {self._cursor})")
            path = self._files[self._cursor]
            self._cursor += 1
        content = path.read_text(encoding="utf-8")
        if not content:
            content = "\n"
        return ChatMessage(Role.ASSISTANT, content)


class HttpChatGateway(ChatGateway):
    """POSTs the chat-completion JSON shape and returns the first choice.

    Retries transport failures and HTTP >= 500 with exponential backoff;
    4xx responses fail immediately (retrying a rejected request is useless).
    """

    def __init__(self, config: AgentConfig, session: Optional[requests.Session] = None):
        if config.provider is not Provider.HTTP_CHAT:
            raise ConfigError("HttpChatGateway requires an http_chat provider config")
        self._config = config
        self._session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self._config.api_key_env:
            token = os.environ.get(self._config.api_key_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def _body(self, transcript: Transcript) -> dict:
        body = {
            "model": self._config.model_id,
            "messages": [
                {"role": m.role.value, "content": m.content} for m in transcript.messages
            ],
            "temperature": self._config.temperature,
        }
        if self._config.sampling_seed is not None:
            body["seed"] = self._config.sampling_seed
        return body

    def _complete(self, transcript: Transcript) -> ChatMessage:
        last_error: Exception | None = None
        for attempt in range(self._config.max_retries + 1):
            if attempt:
                time.sleep(_BACKOFF_BASE_SECONDS * 2 ** (attempt - 1))
            try:
                response = self._session.post(
                    self._config.endpoint,
                    json=self._body(transcript),
                    headers=self._headers(),
                    timeout=self._config.request_timeout_seconds,
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code >= 500:
                last_error = TransportError(f"HTTP {response.status_code} from provider")
                continue
            if response.status_code >= 400:
                raise TransportError(
                    f"HTTP {response.status_code} from provider: {response.text[:200]}"
                )
            return self._parse(response)
        raise TransportError(f"provider unreachable after {self._config.max_retries + 1} attempts: {last_error}")

    @staticmethod
    def _parse(response: requests.Response) -> ChatMessage:
        try:
            payload = response.json()
        except ValueError as exc:
            raise ProtocolError(f"provider response is not JSON: {exc}") from exc
        try:
            content = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"provider response missing choices[0].message.content: {exc}") from exc
        if not isinstance(content, str) or not content:
            raise ProtocolError("provider returned empty completion content")
        return ChatMessage(Role.ASSISTANT, content)


class Recorder:
    """Shared sink saving agent replies as NNN.txt for later replay.

    One recorder may back several gateways (one per agent role); the shared
    counter preserves the global call order, which is exactly the order the
    replay provider will serve the files back.
    """

    def __init__(self, record_dir: str | Path, *, force: bool = False):
        self._dir = Path(record_dir)
        self._dir.mkdir(parents=True, exist_ok=True)
        if any(self._dir.iterdir()) and not force:
            raise ConfigError(f"record directory not empty: {self._dir} (use force to overwrite)")
        if force:
            for p in self._dir.iterdir():
                if p.is_file():
                    p.unlink()
        self._lock = threading.Lock()
        self._count = 0

    def save(self, content: str) -> Path:
        with self._lock:
            self._count += 1
            path = self._dir / f"{self._count:03d}.txt"
        path.write_text(content, encoding="utf-8")
        return path

    def wrap(self, inner: ChatGateway) -> "RecordingGateway":
        return RecordingGateway(inner, self)

    @property
    def calls_recorded(self) -> int:
        return self._count


class RecordingGateway(ChatGateway):
    """Delegates to another gateway, saving every reply through a Recorder."""

    def __init__(self, inner: ChatGateway, recorder: Recorder):
        self._inner = inner
        self._recorder = recorder

    def _complete(self, transcript: Transcript) -> ChatMessage:
        reply = self._inner.send(transcript)
        self._recorder.save(reply.content)
        return reply


def build_gateway(config: AgentConfig) -> ChatGateway:
    if config.provider is Provider.REPLAY:
        return ReplayGateway(config.replay_dir)
    return HttpChatGateway(config)


def send_chat(config: AgentConfig, transcript: Transcript) -> ChatMessage:
    """One-shot convenience: build a gateway from *config* and send once.

    A replay gateway built here starts from the first file every call; loops
    must hold a gateway instance instead so the cursor advances.
    """
    return build_gateway(config).send(transcript)


_TRANSCRIPT_FILE_RE = re.compile(r"^transcript_(\d{3,})\.json$")


def record_transcript(transcript: Transcript, workspace: str | Path) -> Path:
    """Write *transcript* under *workspace* as transcript_NNN.json; returns the path."""
    root = Path(workspace)
    if not root.is_dir():
        raise OSError(f"workspace does not exist: {root}")
    taken = [
        int(m.group(1))
        for p in root.iterdir()
        if (m := _TRANSCRIPT_FILE_RE.match(p.name))
    ]
    number = max(taken, default=0) + 1
    path = root / f"transcript_{number:03d}.json"
    path.write_text(to_canonical_json(transcript), encoding="utf-8")
    return path


def load_transcript(path: str | Path) -> Transcript:
    return from_dict(Transcript, json.loads(Path(path).read_text(encoding="utf-8")))
