import base64
import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from dermkit.pipeline.clients import ClientError, HttpClient, MockClient


class _Handler(BaseHTTPRequestHandler):
    received = []
    status = 200

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        _Handler.received.append({"body": body, "auth": self.headers.get("Authorization")})
        self.send_response(_Handler.status)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        if _Handler.status == 200:
            self.wfile.write(json.dumps({"text": "pong"}).encode())
        else:
            self.wfile.write(b"{}")

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    _Handler.received = []
    _Handler.status = 200
    srv = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{srv.server_port}/generate"
    srv.shutdown()


class TestHttpClient:
    def test_wire_format(self, server, monkeypatch):
        monkeypatch.setenv("DERMKIT_API_KEY", "sekret")
        client = HttpClient(server, model_id="remote-1")
        out = client.generate("hello", image=b"\x00\x01", max_tokens=77, temperature=0.5)
        assert out == "pong"
        req = _Handler.received[0]
        assert req["body"] == {
            "prompt": "hello",
            "max_tokens": 77,
            "temperature": 0.5,
            "image_b64": base64.b64encode(b"\x00\x01").decode(),
        }
        assert req["auth"] == "Bearer sekret"

    def test_image_omitted_when_absent(self, server, monkeypatch):
        monkeypatch.delenv("DERMKIT_API_KEY", raising=False)
        client = HttpClient(server, model_id="remote-1")
        client.generate("text only")
        req = _Handler.received[0]
        assert "image_b64" not in req["body"]
        assert req["auth"] is None

    def test_http_error_raises_client_error(self, server):
        _Handler.status = 500
        client = HttpClient(server, model_id="remote-1")
        with pytest.raises(ClientError):
            client.generate("boom")

    def test_missing_text_field(self, server):
        _Handler.status = 404
        client = HttpClient(server, model_id="remote-1")
        with pytest.raises(ClientError):
            client.generate("x")


class TestMockClient:
    def test_deterministic_for_same_inputs(self):
        a = MockClient(seed=5).generate("Describe only what is visible ...", image=b"img")
        b = MockClient(seed=5).generate("Describe only what is visible ...", image=b"img")
        assert a == b

    def test_seed_changes_output(self):
        a = MockClient(seed=5).generate("Describe only what is visible ...", image=b"img")
        b = MockClient(seed=6).generate("Describe only what is visible ...", image=b"img")
        assert a != b

    def test_image_changes_output(self):
        client = MockClient(seed=5)
        a = client.generate("Describe only what is visible ...", image=b"one")
        b = client.generate("Describe only what is visible ...", image=b"two")
        assert a != b
