import os

# set before any provider is built; live adapters check it on every call
os.environ["MKGE_OFFLINE_ONLY"] = "1"

import pytest  # noqa: E402

from mkge.graph_store import EdgeLabel, KnowledgeGraph, NodeKind  # noqa: E402


def graph_from_edges(edges, isolates=()):
    """Entity-only graph; names double as texts so ids are predictable via find()."""
    g = KnowledgeGraph()
    ids = {}

    def nid(name):
        if name not in ids:
            ids[name] = g.add_node(NodeKind.ENTITY, name)
        return ids[name]

    for a, b in edges:
        g.add_edge(nid(a), nid(b), EdgeLabel.CO_OCCURS)
    for name in isolates:
        nid(name)
    return g, ids


@pytest.fixture
def two_triangles():
    return graph_from_edges([("a", "b"), ("b", "c"), ("a", "c"),
                             ("x", "y"), ("y", "z"), ("x", "z")])


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
