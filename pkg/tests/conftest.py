from __future__ import annotations

import http.server
import json
import threading
from pathlib import Path

import pytest

from veriloop.autoreview import AutoReviewConfig
from veriloop.eda import make_workspace, stub_profile
from veriloop.gateway import AgentConfig, Provider
from veriloop.model import Budget

FIXTURES = Path(__file__).parent / "fixtures"
REPLAY = FIXTURES / "replay"
GOLDEN_LOGS = FIXTURES / "golden_logs"
DATASET = FIXTURES / "dataset"

ADDER_PROMPT = "2-bit adder with ports a[1:0], b[1:0], q[2:0]; adds the inputs"

GOOD_ADDER = """\
module adder(input [1:0] a, input [1:0] b, output [2:0] q);
  assign q = a + b;
endmodule
"""

BAD_ADDER = """\
module adder(input [1:0] a, input [1:0] b, output [2:0] q);
  assign q = a + b
endmodule
"""

ADDER_TB = """\
module tb_adder;
  reg [1:0] a;
  reg [1:0] b;
  wire [2:0] q;
  adder dut(.a(a), .b(b), .q(q));
  // STUB_SIM_EXPECT: assign\\s+q\\s*=\\s*a\\s*\\+\\s*b\\s*;
  // STUB_COV: line 10/10
  initial begin
    a = 2'b01; b = 2'b10;
    #10;
    $display("ALL TESTS PASSED");
    $finish;
  end
endmodule
"""


def response_with(*blocks: str) -> str:
    return "\n\n".join(f"```verilog\n{block}```" for block in blocks) + "\n"


def write_replay(directory: Path, *responses: str) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    for i, text in enumerate(responses, start=1):
        (directory / f"{i:03d}.txt").write_text(text, encoding="utf-8")
    return directory


def replay_agent(directory: Path) -> AgentConfig:
    return AgentConfig(provider=Provider.REPLAY, replay_dir=str(directory))


def review_config(replay_dir: Path, max_iterations: int = 5, **kwargs) -> AutoReviewConfig:
    return AutoReviewConfig(
        code_agent=replay_agent(replay_dir),
        tool_profile=stub_profile(),
        budget=Budget(
            max_iterations=max_iterations, max_agent_calls=15, tool_timeout_seconds=30
        ),
        **kwargs,
    )


@pytest.fixture
def workspace(tmp_path):
    return make_workspace("task", tmp_path)


class _ChatHandler(http.server.BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length) or b"{}")
        status, payload = self.server.behavior(body)  # type: ignore[attr-defined]
        data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):  # silence request logging
        pass


def completion(content: str) -> dict:
    return {"choices": [{"message": {"role": "assistant", "content": content}}]}


@pytest.fixture
def chat_server():
    """Local chat-completions stub; tests set server.behavior(body) -> (status, payload)."""
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), _ChatHandler)
    server.behavior = lambda body: (200, completion("ok"))  # type: ignore[attr-defined]
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server, f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions"
    finally:
        server.shutdown()
        thread.join(timeout=5)
