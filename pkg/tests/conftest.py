import contextlib
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest


class _ScoreHandler(BaseHTTPRequestHandler):
    def log_message(self, *args):  # keep test output quiet
        pass

    def do_POST(self):
        server = self.server
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        with server.lock:
            server.requests.append(raw)
            if server.fail_next > 0:
                server.fail_next -= 1
                self.send_response(500)
                self.end_headers()
                return
        if self.path != "/score":
            self.send_response(404)
            self.end_headers()
            return
        body = json.loads(raw)
        payload = server.respond(body)
        data = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


def _echo_zero(body):
    """Protocol-conformant reply: ln(1) = 0 for every token."""
    return {
        "id": body["id"],
        "token_log_probs": [[0.0] * len(entry["tokens"]) for entry in body["labels"]],
    }


@contextlib.contextmanager
def run_scoring_server(respond=_echo_zero, fail_next=0):
    server = ThreadingHTTPServer(("127.0.0.1", 0), _ScoreHandler)
    server.respond = respond
    server.fail_next = fail_next
    server.requests = []
    server.lock = threading.Lock()
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_address[1]}", server
    finally:
        server.shutdown()
        server.server_close()


@pytest.fixture
def scoring_server():
    return run_scoring_server


def random_label_matrix(rng, rows=None, cols=None):
    rows = rows if rows is not None else int(rng.integers(2, 40))
    cols = cols if cols is not None else int(rng.integers(2, 7))
    return rng.normal(size=(rows, cols)) * rng.uniform(0.5, 3.0)


def random_graph_edges(rng, max_nodes=50):
    n = int(rng.integers(2, max_nodes + 1))
    density = float(rng.uniform(0.02, 0.35))
    mask = rng.random((n, n)) < density
    src, dst = np.nonzero(mask)
    return n, src, dst
