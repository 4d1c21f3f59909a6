import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


class MockScorer:
    """Scriptable stand-in for the embedding service.

    ``script`` is a list of (status, body) consumed one per embed request;
    once empty, requests are answered by ``default`` which echoes each
    text's index into a vector of ``dimension`` values.
    """

    def __init__(self, dimension=4, delay=0.0):
        self.dimension = dimension
        self.delay = delay
        self.script = []
        self.health = {"dimension": 512, "model": "mock-encoder"}
        self.requests = []
        self.in_flight = 0
        self.max_in_flight = 0
        self.lock = threading.Lock()

    def default(self, texts):
        vectors = [[float(len(t)), float(i)] + [1.0] * (self.dimension - 2) for i, t in enumerate(texts)]
        return 200, {"vectors": vectors, "dimension": self.dimension, "model": "mock"}

    def handle(self, method, path, body):
        with self.lock:
            self.requests.append((method, path, body))
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
            scripted = self.script.pop(0) if (self.script and path == "/v1/embed") else None
        try:
            if self.delay:
                time.sleep(self.delay)
            if path == "/v1/health":
                return 200, self.health
            if path != "/v1/embed":
                return 404, {"error": "not found"}
            if scripted is not None:
                status, payload = scripted
                return status, payload(body["texts"]) if callable(payload) else payload
            return self.default(body["texts"])
        finally:
            with self.lock:
                self.in_flight -= 1

    @property
    def embed_requests(self):
        return [r for r in self.requests if r[1] == "/v1/embed"]


@pytest.fixture
def mock_scorer():
    state = MockScorer()

    class Handler(BaseHTTPRequestHandler):
        def _reply(self, method):
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b""
            body = json.loads(raw) if raw else None
            status, payload = state.handle(method, self.path, body)
            data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self):
            self._reply("GET")

        def do_POST(self):
            self._reply("POST")

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    server.daemon_threads = True
    thread = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True)
    thread.start()
    state.url = f"http://127.0.0.1:{server.server_address[1]}"
    yield state
    server.shutdown()
    server.server_close()


@pytest.fixture
def fixtures_dir():
    return FIXTURES


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance_log(request):
    return request.config.stash.setdefault(_ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(_ACCEPTANCE, {})
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(log):
        ok, title, detail = log[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
