from __future__ import annotations

import threading
import time

import pytest

from veriloop.errors import ConfigError, ProtocolError, ReplayExhausted, TransportError
from veriloop.gateway import (
    AgentConfig,
    AgentRole,
    ChatMessage,
    HttpChatGateway,
    Provider,
    Recorder,
    ReplayGateway,
    Role,
    Transcript,
    build_gateway,
    load_transcript,
    new_transcript,
    record_transcript,
    send_chat,
)

from conftest import completion


def _transcript(user_text="hello") -> Transcript:
    return new_transcript("system prompt", user_text, AgentRole.CODE)


# --- transcript invariants ---------------------------------------------------

def test_transcript_requires_system_first() -> None:
    with pytest.raises(ValueError):
        Transcript(messages=(ChatMessage(Role.USER, "hi"),), agent_role=AgentRole.CODE)


def test_transcript_roles_alternate_after_system_prefix() -> None:
    ok = _transcript().append(ChatMessage(Role.ASSISTANT, "yes")).append(ChatMessage(Role.USER, "more"))
    assert ok.messages[-1].role is Role.USER
    with pytest.raises(ValueError):
        _transcript().append(ChatMessage(Role.USER, "again"))


def test_transcript_forbids_system_after_exchange() -> None:
    with pytest.raises(ValueError):
        Transcript(
            messages=(
                ChatMessage(Role.SYSTEM, "s"),
                ChatMessage(Role.USER, "u"),
                ChatMessage(Role.SYSTEM, "late"),
            ),
            agent_role=AgentRole.CODE,
        )


def test_chat_message_content_required_for_user() -> None:
    with pytest.raises(ValueError):
        ChatMessage(Role.USER, "")


def test_agent_config_requires_provider_specific_fields() -> None:
    with pytest.raises(ValueError):
        AgentConfig(provider=Provider.HTTP_CHAT)  # no endpoint
    with pytest.raises(ValueError):
        AgentConfig(provider=Provider.REPLAY)  # no replay_dir
    with pytest.raises(ValueError):
        AgentConfig(provider=Provider.REPLAY, replay_dir="x", endpoint="http://nope")


# --- replay provider ---------------------------------------------------------

def test_replay_returns_file_content_verbatim(tmp_path) -> None:
    (tmp_path / "001.txt").write_text("module m; endmodule", encoding="utf-8")
    reply = send_chat(
        AgentConfig(provider=Provider.REPLAY, replay_dir=str(tmp_path)), _transcript()
    )
    assert reply.role is Role.ASSISTANT
    assert reply.content == "module m; endmodule"


def test_replay_exhaustion(tmp_path) -> None:
    (tmp_path / "001.txt").write_text("one", encoding="utf-8")
    gateway = ReplayGateway(tmp_path)
    gateway.send(_transcript())
    with pytest.raises(ReplayExhausted):
        gateway.send(_transcript())


def test_replay_consumes_in_lexicographic_order(tmp_path) -> None:
    for name, text in [("b.txt", "second"), ("a.txt", "first"), ("c.txt", "third")]:
        (tmp_path / name).write_text(text, encoding="utf-8")
    gateway = ReplayGateway(tmp_path)
    got = [gateway.send(_transcript()).content for _ in range(3)]
    assert got == ["first", "second", "third"]


def test_replay_is_deterministic_byte_for_byte(tmp_path) -> None:
    for i in range(3):
        (tmp_path / f"{i:03d}.txt").write_text(f"response {i}\n", encoding="utf-8")
    runs = []
    for _ in range(2):
        gateway = ReplayGateway(tmp_path)
        runs.append([gateway.send(_transcript()).content.encode() for _ in range(3)])
    assert runs[0] == runs[1]


def test_replay_delivers_each_response_exactly_once_concurrently(tmp_path) -> None:
    for i in range(20):
        (tmp_path / f"{i:03d}.txt").write_text(f"r{i}", encoding="utf-8")
    gateway = ReplayGateway(tmp_path)
    got: list[str] = []
    lock = threading.Lock()

    def worker():
        for _ in range(5):
            reply = gateway.send(_transcript())
            with lock:
                got.append(reply.content)

    threads = [threading.Thread(target=worker) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(got) == sorted(f"r{i}" for i in range(20))


def test_send_requires_trailing_user_message(tmp_path) -> None:
    (tmp_path / "001.txt").write_text("x", encoding="utf-8")
    gateway = ReplayGateway(tmp_path)
    ended = _transcript().append(ChatMessage(Role.ASSISTANT, "done"))
    with pytest.raises(ValueError):
        gateway.send(ended)


# --- http provider -----------------------------------------------------------

def _http_config(url: str, **kwargs) -> AgentConfig:
    defaults = dict(
        provider=Provider.HTTP_CHAT,
        endpoint=url,
        model_id="test-model",
        request_timeout_seconds=5,
        max_retries=1,
    )
    defaults.update(kwargs)
    return AgentConfig(**defaults)


def test_http_chat_passes_through_stub_completion(chat_server) -> None:
    server, url = chat_server
    server.behavior = lambda body: (200, completion("the completion"))
    reply = HttpChatGateway(_http_config(url)).send(_transcript())
    assert reply.content == "the completion"


def test_http_chat_sends_expected_wire_shape(chat_server) -> None:
    server, url = chat_server
    seen = {}

    def behavior(body):
        seen.update(body)
        return 200, completion("ok")

    server.behavior = behavior
    HttpChatGateway(_http_config(url, temperature=0.5)).send(_transcript("make an adder"))
    assert seen["model"] == "test-model"
    assert seen["temperature"] == 0.5
    assert [m["role"] for m in seen["messages"]] == ["system", "user"]
    assert seen["messages"][1]["content"] == "make an adder"


def test_http_chat_retries_500_then_succeeds(chat_server, monkeypatch) -> None:
    monkeypatch.setattr("veriloop.gateway._BACKOFF_BASE_SECONDS", 0.01)
    server, url = chat_server
    attempts = []

    def behavior(body):
        attempts.append(1)
        if len(attempts) == 1:
            return 500, {"error": "try again"}
        return 200, completion("recovered")

    server.behavior = behavior
    reply = HttpChatGateway(_http_config(url)).send(_transcript())
    assert reply.content == "recovered"
    assert len(attempts) == 2


def test_http_chat_400_fails_without_retry(chat_server) -> None:
    server, url = chat_server
    attempts = []

    def behavior(body):
        attempts.append(1)
        return 400, {"error": "bad request"}

    server.behavior = behavior
    with pytest.raises(TransportError):
        HttpChatGateway(_http_config(url)).send(_transcript())
    assert len(attempts) == 1


def test_http_chat_malformed_response_is_protocol_error(chat_server) -> None:
    server, url = chat_server
    server.behavior = lambda body: (200, {"choices": []})
    with pytest.raises(ProtocolError):
        HttpChatGateway(_http_config(url)).send(_transcript())
    server.behavior = lambda body: (200, b"not json at all")
    with pytest.raises(ProtocolError):
        HttpChatGateway(_http_config(url)).send(_transcript())


def test_http_chat_empty_content_is_protocol_error(chat_server) -> None:
    server, url = chat_server
    server.behavior = lambda body: (200, completion(""))
    with pytest.raises(ProtocolError):
        HttpChatGateway(_http_config(url)).send(_transcript())


def test_http_chat_bearer_token_from_named_env_var(chat_server, monkeypatch) -> None:
    server, url = chat_server
    monkeypatch.setenv("MY_PROVIDER_KEY", "sekret")
    gateway = HttpChatGateway(_http_config(url, api_key_env="MY_PROVIDER_KEY"))
    headers = gateway._headers()
    assert headers["Authorization"] == "Bearer sekret"


def test_http_chat_unreachable_respects_time_bound(monkeypatch) -> None:
    monkeypatch.setattr("veriloop.gateway._BACKOFF_BASE_SECONDS", 0.05)
    config = _http_config("http://127.0.0.1:9/nothing", request_timeout_seconds=1, max_retries=1)
    start = time.monotonic()
    with pytest.raises(TransportError):
        HttpChatGateway(config).send(_transcript())
    elapsed = time.monotonic() - start
    # bound: timeout * (retries + 1) + backoff sum, with scheduling slack
    assert elapsed < 1 * 2 + 0.05 + 1.0


# --- transcript recording ----------------------------------------------------

def test_record_transcript_numbers_files_and_round_trips(tmp_path) -> None:
    transcript = _transcript().append(ChatMessage(Role.ASSISTANT, "module m; endmodule"))
    first = record_transcript(transcript, tmp_path)
    second = record_transcript(transcript, tmp_path)
    assert first.name == "transcript_001.json"
    assert second.name == "transcript_002.json"
    assert load_transcript(first) == transcript


def test_record_transcript_requires_existing_workspace(tmp_path) -> None:
    with pytest.raises(OSError):
        record_transcript(_transcript(), tmp_path / "missing")


# --- recorder ----------------------------------------------------------------

def test_recorder_saves_in_global_call_order(tmp_path, chat_server) -> None:
    server, url = chat_server
    counter = iter(range(100))
    server.behavior = lambda body: (200, completion(f"reply {next(counter)}"))
    recorder = Recorder(tmp_path / "rec")
    gw_a = recorder.wrap(HttpChatGateway(_http_config(url)))
    gw_b = recorder.wrap(HttpChatGateway(_http_config(url)))
    gw_a.send(_transcript())
    gw_b.send(_transcript())
    gw_a.send(_transcript())
    files = sorted(p.name for p in (tmp_path / "rec").iterdir())
    assert files == ["001.txt", "002.txt", "003.txt"]
    assert recorder.calls_recorded == 3
    assert (tmp_path / "rec" / "001.txt").read_text() == "reply 0"


def test_recorder_refuses_nonempty_dir_without_force(tmp_path) -> None:
    target = tmp_path / "rec"
    target.mkdir()
    (target / "leftover.txt").write_text("old")
    with pytest.raises(ConfigError):
        Recorder(target)
    Recorder(target, force=True)
    assert not (target / "leftover.txt").exists()


def test_build_gateway_dispatches_on_provider(tmp_path) -> None:
    (tmp_path / "001.txt").write_text("x")
    assert isinstance(build_gateway(AgentConfig(provider=Provider.REPLAY, replay_dir=str(tmp_path))), ReplayGateway)
    assert isinstance(
        build_gateway(AgentConfig(provider=Provider.HTTP_CHAT, endpoint="http://localhost:1/x")),
        HttpChatGateway,
    )
