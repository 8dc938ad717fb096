import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from acqtree import CandidatePool, LlmEndpointConfig, ObservationSet, PromptTemplate, RngHandle
from acqtree.llm import RESPONSE_INSTRUCTION


@pytest.fixture
def rng():
    return RngHandle(12345, "tests")


def make_pool(n=20, d=2, seed=0, sense="maximize", clusters=None, text=None):
    gen = RngHandle(seed, "tests/pool").generator()
    features = gen.normal(size=(n, d))
    values = gen.normal(size=n)
    return CandidatePool(features, values, sense, text=text, clusters=clusters)


def observe(pool, ids):
    obs = ObservationSet()
    for cid in ids:
        obs.add(int(cid), pool.oracle_query(int(cid)))
    return obs


@pytest.fixture
def small_pool():
    return make_pool()


# --- shared mock chat-completion endpoint ---------------------------------

MOL_PATTERN = re.compile(r"^(\d+): MOL(\d+)$", re.MULTILINE)


def make_text_pool(n=8):
    gen = np.random.default_rng(0)
    return CandidatePool(
        gen.normal(size=(n, 2)),
        gen.normal(size=n),
        "maximize",
        text=[f"MOL{i}" for i in range(n)],
    )


def simple_template(batch_size=5):
    text = (
        "Group the molecules into five clusters (0-4).\n\n"
        f"Response Format: {RESPONSE_INSTRUCTION}\n\n"
        "{{MOLECULES}}\n"
    )
    return PromptTemplate(task="toy", text=text, batch_size=batch_size)


class MockChatHandler(BaseHTTPRequestHandler):
    """Labels each MOL<i> with i mod 5; per-request behavior is scripted
    through ``server.behaviors`` ('clean' | 'garbage' | 'error')."""

    def do_POST(self):
        server = self.server
        server.request_count += 1
        server.last_headers = dict(self.headers)
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        prompt = body["messages"][0]["content"]
        behavior = server.behaviors[min(server.request_count - 1, len(server.behaviors) - 1)]
        if behavior == "error":
            self.send_response(500)
            self.end_headers()
            return
        if behavior == "garbage":
            content = "I could not find any molecules to cluster, sorry!"
        else:
            lines = [
                f"{counter}: {int(mol) % 5}" for counter, mol in MOL_PATTERN.findall(prompt)
            ]
            content = "\n".join(lines)
        data = json.dumps({"choices": [{"message": {"content": content}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):  # keep pytest output clean
        pass


@pytest.fixture
def mock_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), MockChatHandler)
    server.request_count = 0
    server.behaviors = ["clean"]
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server
    finally:
        server.shutdown()
        server.server_close()


def endpoint_for(server, max_retries=2):
    return LlmEndpointConfig(
        url=f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions",
        model="mock-model",
        max_retries=max_retries,
        timeout=5.0,
        backoff_base=0.01,
    )
