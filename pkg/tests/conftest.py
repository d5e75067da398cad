"""Shared fixtures: graph builders, oracle helpers, a mock chat server."""

from __future__ import annotations

import json
import threading
from collections import deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from itertools import permutations

import pytest

from untangler.changegraph import ChangeGraph, StatementNode, Version


def make_node(
    nid: str,
    changed: bool = False,
    scope: str | None = None,
    file_path: str = "f",
    version: Version = Version.OLD,
    span: tuple[int, int] = (1, 1),
    kind: str = "other",
    text: str | None = None,
) -> StatementNode:
    return StatementNode(
        node_id=nid,
        file_path=file_path,
        version=version,
        span=span,
        kind=kind,
        text=nid if text is None else text,
        changed=changed,
        scope=scope,
    )


def make_graph(nodes, edges=(), seeds=(), correspondence=()) -> ChangeGraph:
    graph = ChangeGraph()
    for node in nodes:
        graph.add_node(node)
    graph.edges |= set(edges)
    graph.seeds |= set(seeds)
    graph.correspondence |= set(correspondence)
    return graph


def bfs_components(members, undirected_edges):
    """Oracle: connected components of ``members`` via breadth-first search.

    Written independently of the production union-find so the two can
    disagree. Edges are (a, b) pairs; only edges with both endpoints in
    ``members`` connect anything.
    """
    members = set(members)
    adjacency = {m: set() for m in members}
    for a, b in undirected_edges:
        if a in members and b in members:
            adjacency[a].add(b)
            adjacency[b].add(a)
    seen: set[str] = set()
    components = []
    for start in sorted(members):
        if start in seen:
            continue
        queue = deque([start])
        seen.add(start)
        component = set()
        while queue:
            current = queue.popleft()
            component.add(current)
            for neighbor in sorted(adjacency[current]):
                if neighbor not in seen:
                    seen.add(neighbor)
                    queue.append(neighbor)
        components.append(frozenset(component))
    return sorted(components, key=min)


def permutation_matching_max(predicted, truth) -> int:
    """Oracle: exhaustive maximum of correctly placed statements.

    Tries every injective assignment between predicted groups and true
    labels (smaller side into larger) and returns the best count.
    """
    groups = sorted(set(predicted.values()))
    labels = sorted(set(truth.values()))
    if not groups or not truth:
        return 0
    counts = {}
    for key, label in truth.items():
        group = predicted.get(key)
        if group is None:
            continue
        counts[(group, label)] = counts.get((group, label), 0) + 1
    best = 0
    if len(groups) <= len(labels):
        for perm in permutations(labels, len(groups)):
            best = max(best, sum(counts.get((g, lab), 0) for g, lab in zip(groups, perm)))
    else:
        for perm in permutations(groups, len(labels)):
            best = max(best, sum(counts.get((g, lab), 0) for g, lab in zip(perm, labels)))
    return best


def profile_json(category: str, summary: str, **extra) -> str:
    """A model-style profiling answer with reasoning around the JSON."""
    payload = {
        "category": category,
        "summary": summary,
        "what": extra.get("what", "w"),
        "how": extra.get("how", "h"),
        "why": extra.get("why", "y"),
    }
    return "Step 1: looked at the change.\nStep 4: concluded.\n" + json.dumps(payload)


class _MockChatHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        payload = json.loads(self.rfile.read(length) or b"{}")
        self.server.observed.append({"path": self.path, "payload": payload})
        status, body = self.server.responder(payload)
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


def completion_body(text: str, prompt_tokens: int = 10, completion_tokens: int = 5) -> dict:
    return {
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
    }


class MockChatServer:
    """In-process OpenAI-style endpoint that records every request."""

    def __init__(self):
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), _MockChatHandler)
        self._server.observed = []
        self._server.responder = lambda payload: (200, completion_body("ok"))
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}/v1"

    @property
    def observed(self) -> list:
        return self._server.observed

    def set_responder(self, responder) -> None:
        self._server.responder = responder

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture()
def mock_chat_server():
    server = MockChatServer()
    yield server
    server.close()
