import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from conftest import engine_cmd
from slmhealth.errors import CapacityError, ConfigError, ContractError, EmptyGenerationError, TimestampError, TransportError
from slmhealth.inference import (
    GenerationParams,
    GenerationResult,
    MockBackend,
    OpenAICompletionBackend,
    SubprocessBackend,
    TokenEvent,
    generate,
    quantization_tag,
    spaced_script,
)

NO_STOP = GenerationParams(max_new_tokens=64, stop_sequences=())


def test_mock_timings_follow_script():
    r = generate(MockBackend(spaced_script(5, 0.05, 0.02)), "a b c", NO_STOP)
    assert r.output_token_count == 5 and r.prompt_token_count == 3
    ttft = (r.t_first_token - r.t_request) / 1e9
    oet = (r.t_last_token - r.t_first_token) / 1e9
    assert 0.045 <= ttft <= 0.1
    assert 0.075 <= oet <= 0.14


def test_max_new_tokens_enforced():
    r = generate(MockBackend(spaced_script(10, 0, 0)), "p", GenerationParams(max_new_tokens=1, stop_sequences=()))
    assert r.output_token_count == 1 and r.completion_text == " x"


def test_empty_generation():
    with pytest.raises(EmptyGenerationError):
        generate(MockBackend([]), "p", NO_STOP)
    with pytest.raises(EmptyGenerationError):
        generate(MockBackend([(0, ""), (0, "")]), "p", NO_STOP)


def test_stop_sequence_after_content():
    script = [(0, "\n"), (0, " 4"), (0, "\n"), (0, "extra")]
    r = generate(MockBackend(script), "p", GenerationParams())
    assert r.completion_text == "\n 4"
    assert [e.index for e in r.events] == [0, 1]


def test_stop_sequence_split_across_pieces():
    script = [(0, "3 EN"), (0, "D more")]
    r = generate(MockBackend(script), "p", GenerationParams(stop_sequences=("END",)))
    assert r.completion_text == "3 "
    assert r.output_token_count == 1


def test_capacity_error():
    with pytest.raises(CapacityError):
        generate(MockBackend([(0, "1")], context_window=2), "a b c", NO_STOP)


def test_on_event_callback():
    seen = []
    generate(MockBackend(spaced_script(3, 0, 0)), "p", NO_STOP, on_event=seen.append)
    assert [e.index for e in seen] == [0, 1, 2]


def test_result_validation():
    ev = [TokenEvent(0, "a", 10), TokenEvent(1, "b", 5)]
    with pytest.raises(TimestampError):
        GenerationResult(1, 2, ev, "ab", 0, 10, 5, 20).validate()
    good = [TokenEvent(0, "a", 10)]
    with pytest.raises(TimestampError):
        GenerationResult(1, 1, good, "a", 11, 10, 10, 20).validate()
    with pytest.raises(ContractError):
        GenerationResult(1, 1, good, "b", 0, 10, 10, 20).validate()
    with pytest.raises(ContractError):
        GenerationParams(max_new_tokens=0)


def test_quantization_tag():
    assert quantization_tag("phi-3-mini-4k-instruct-q4_k_m.gguf") == "Q4_K_M"
    assert quantization_tag("tinyllama-1.1b.Q8_0.gguf") == "Q8_0"
    assert quantization_tag("llama-2-7b") is None


# --- HTTP adapter against a local SSE server -------------------------------------------

class _Handler(BaseHTTPRequestHandler):
    reply = [" 4", "\n", "ignored"]

    def log_message(self, *a):
        pass

    def do_GET(self):
        body = json.dumps({"data": [{"id": "phi-3-mini-Q4_K_M"}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        req = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        self.server.requests.append(req)
        prompt = req["prompt"]
        if "OVERFLOW" in prompt:
            return self._plain(400, "the request exceeds the available context size")
        if "BOOM" in prompt:
            return self._plain(500, "internal")
        self.send_response(200)
        self.send_header("Content-Type", "text/event-stream")
        self.end_headers()
        for piece in self.reply:
            self._event({"choices": [{"text": piece}]})
        self._event({"choices": [], "usage": {"prompt_tokens": len(prompt.split()), "completion_tokens": 3}})
        self.wfile.write(b"data: [DONE]\n\n")

    def _event(self, obj):
        self.wfile.write(f"data: {json.dumps(obj)}\n\n".encode())
        self.wfile.flush()

    def _plain(self, code, text):
        body = text.encode()
        self.send_response(code)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


@pytest.fixture
def sse_server():
    srv = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    srv.requests = []
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield srv
    srv.shutdown()
    srv.server_close()


def test_http_stream_and_usage(sse_server):
    url = f"http://127.0.0.1:{sse_server.server_address[1]}"
    with OpenAICompletionBackend(url, model="phi-3-mini-Q4_K_M") as b:
        r = generate(b, "one two three", GenerationParams(seed=1))
        assert r.completion_text == " 4"
        assert r.prompt_token_count == 3
        assert b.probe().quantization == "Q4_K_M"
        assert b.pid is None
    req = sse_server.requests[0]
    assert req["stream"] is True and req["stop"] == ["\n"] and req["seed"] == 1
    assert req["stream_options"] == {"include_usage": True}


def test_http_matches_mock_output(sse_server):
    url = f"http://127.0.0.1:{sse_server.server_address[1]}"
    mock = MockBackend([(0, p) for p in _Handler.reply])
    with OpenAICompletionBackend(url) as b:
        a = generate(b, "x y", GenerationParams())
    m = generate(mock, "x y", GenerationParams())
    assert (a.completion_text, a.output_token_count, a.prompt_token_count) == \
           (m.completion_text, m.output_token_count, m.prompt_token_count)


def test_http_errors(sse_server):
    url = f"http://127.0.0.1:{sse_server.server_address[1]}"
    with OpenAICompletionBackend(url) as b:
        with pytest.raises(CapacityError):
            generate(b, "OVERFLOW", GenerationParams())
        with pytest.raises(TransportError) as ei:
            generate(b, "BOOM", GenerationParams())
        assert ei.value.retryable
        assert b.probe().name == "phi-3-mini-Q4_K_M"


def test_http_unreachable():
    with OpenAICompletionBackend("http://127.0.0.1:9", timeout=2) as b:
        with pytest.raises(TransportError):
            generate(b, "p", GenerationParams())


# --- subprocess adapter ----------------------------------------------------------------

def test_subprocess_round_trip():
    with SubprocessBackend(engine_cmd("--reply", " 3\nmore", "--piece-chars", "2")) as b:
        r = generate(b, "a b c d", GenerationParams())
        assert r.completion_text == " 3"
        assert r.prompt_token_count == 4
        # the stream was stopped early; the protocol must still be in sync
        r2 = generate(b, "a b", GenerationParams())
        assert r2.completion_text == " 3" and r2.prompt_token_count == 2
        d = b.probe()
        assert d.name == "scripted-engine" and d.quantization == "Q4_0" and d.load_s >= 0
        assert b.pid is not None


def test_subprocess_capacity():
    with SubprocessBackend(engine_cmd("--n-ctx", "2")) as b:
        with pytest.raises(CapacityError):
            generate(b, "a b c", GenerationParams())
        assert generate(b, "a", GenerationParams()).completion_text == " 3"


def test_subprocess_crash_is_retryable_and_restarts():
    b = SubprocessBackend(engine_cmd("--reply", "12345", "--crash-after", "2"), token_timeout=10)
    try:
        with pytest.raises(TransportError) as ei:
            generate(b, "p", NO_STOP)
        assert ei.value.retryable
        first_pid = b._proc.pid
        # a fresh engine is launched lazily; it crashes again after 2 tokens
        with pytest.raises(TransportError):
            generate(b, "p", NO_STOP)
        assert b._proc.pid != first_pid
    finally:
        b.close()


def test_subprocess_missing_model(tmp_path):
    with pytest.raises(ConfigError):
        SubprocessBackend(engine_cmd("--name", "{model}"), model_path=str(tmp_path / "nope.gguf"))
    model = tmp_path / "tiny-Q8_0.gguf"
    model.write_bytes(b"GGUF")
    with SubprocessBackend(engine_cmd("--name", "{model}"), model_path=str(model)) as b:
        assert b.probe().name == str(model)


def test_subprocess_bad_command():
    b = SubprocessBackend(["/nonexistent/engine-binary"])
    with pytest.raises(TransportError) as ei:
        generate(b, "p", GenerationParams())
    assert not ei.value.retryable
