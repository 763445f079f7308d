"""In-process HTTP mocks: a chat-completions endpoint with scripted
behavior and the demo application as a live target."""
from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import urlsplit

from ..demo import DemoApp
from ..traffic import normalize_path

SCRIPTS = ("valid", "retry_then_valid", "garbage")
_ENDPOINT = re.compile(r"^- ([A-Z]+) (\S+) \|", re.M)


def plan_from_prompt(prompt: str) -> list[dict]:
    """Build a plausible plan from the endpoint lines of a generation prompt."""
    endpoints = _ENDPOINT.findall(prompt)
    reads = [(m, p) for m, p in endpoints if m == "GET"] or endpoints or [("GET", "/")]
    malicious = "Role: malicious" in prompt

    def target(path, who):
        return path.replace("<*>", "{%s}" % who)

    if not malicious:
        return [{"method": m, "path": target(p, "own"), "declared_intent": "use own account",
                 "identity_slot": "own"} for m, p in reads[:3]]
    m, p = reads[0]
    return [
        {"method": m, "path": target(p, "foreign"), "declared_intent": "probe another account",
         "identity_slot": "own"},
        {"method": m, "path": target(p, "foreign"), "declared_intent": "access another account's data",
         "identity_slot": "foreign"},
        {"method": m, "path": target(p, "own"), "declared_intent": "blend in", "identity_slot": "own"},
    ]


class _HttpServer(ThreadingHTTPServer):
    # keep-alive handler threads may idle on open client connections
    block_on_close = False


class _Server:
    def __init__(self, handler_cls):
        self.httpd = _HttpServer(("127.0.0.1", 0), handler_cls)
        self.httpd.owner = self
        self._thread = threading.Thread(target=self.httpd.serve_forever, args=(0.05,), daemon=True)

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self):
        self._thread.start()
        return self

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


class _Quiet(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    # headers and body go out as separate writes; avoid the delayed-ACK stall
    disable_nagle_algorithm = True

    def log_message(self, *args):
        pass

    def _reply(self, status: int, body: dict):
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


class _LlmHandler(_Quiet):
    def do_POST(self):
        server = self.server.owner
        length = int(self.headers.get("Content-Length", 0))
        try:
            body = json.loads(self.rfile.read(length))
        except ValueError:
            return self._reply(400, {"error": "bad json"})
        if urlsplit(self.path).path.rstrip("/") != "/chat/completions":
            return self._reply(404, {"error": "not found"})
        with server.lock:
            server.requests.append({"body": body, "auth": self.headers.get("Authorization")})
        content = server.respond(body["messages"])
        self._reply(200, {
            "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}],
            "usage": {"total_tokens": len(json.dumps(body["messages"]).split()) + len(content.split())},
        })


class MockLlmServer(_Server):
    """Speaks the chat-completions protocol.

    ``valid`` answers plan prompts correctly; ``retry_then_valid`` answers
    prose first and a valid plan once repaired; ``garbage`` never produces JSON.
    """

    def __init__(self, script: str = "valid"):
        if script not in SCRIPTS:
            raise ValueError(f"unknown script {script!r}")
        super().__init__(_LlmHandler)
        self.script = script
        self.lock = threading.Lock()
        self.requests: list[dict] = []

    def respond(self, messages: list[dict]) -> str:
        prompt = messages[0]["content"]
        if "JSON array" not in prompt:
            return "read the profile page and update account settings"
        if self.script == "garbage":
            return "I am unable to produce that plan, but here is some prose instead."
        if self.script == "retry_then_valid" and len(messages) == 1:
            return "Sure! Here is the plan you asked for: first log in, then browse."
        return json.dumps(plan_from_prompt(prompt))


class _TargetHandler(_Quiet):
    def _handle(self):
        app: DemoApp = self.server.owner.app
        length = int(self.headers.get("Content-Length", 0) or 0)
        if length:
            self.rfile.read(length)
        cookie = None
        for part in (self.headers.get("Cookie") or "").split(";"):
            name, _, value = part.strip().partition("=")
            if name == "session":
                cookie = value
        path, _ = normalize_path(self.path)
        status = app.handle_cookie(self.command, path, cookie)
        self._reply(status, {"status": status})

    do_GET = do_POST = do_PUT = do_PATCH = do_DELETE = do_OPTIONS = _handle

    def do_HEAD(self):
        self.send_response(200)
        self.send_header("Content-Length", "0")
        self.end_headers()


class MockTargetServer(_Server):
    def __init__(self, app: DemoApp):
        super().__init__(_TargetHandler)
        self.app = app
