import os

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mkge import graph_store as gs
from mkge.graph_store import (EdgeLabel, EmptyText, KnowledgeGraph, MalformedInput, NodeKind,
                              SelfLoop, Stage, UnknownNode)


def test_offline_only_flag_is_set():
    assert os.environ.get("MKGE_OFFLINE_ONLY") == "1"


def test_add_node_base_and_idempotence():
    g = KnowledgeGraph()
    a = g.add_node(NodeKind.CHUNK, "abc")
    assert len(g) == 1
    assert g.add_node(NodeKind.CHUNK, "abc") == a
    assert len(g) == 1
    b = g.add_node(NodeKind.CHUNK, "abd")
    assert b != a and len(g) == 2


def test_same_text_different_kind_is_distinct():
    g = KnowledgeGraph()
    assert g.add_node(NodeKind.CHUNK, "Alice") != g.add_node(NodeKind.ENTITY, "Alice")


def test_whitespace_and_nfc_normalization_share_an_id():
    g = KnowledgeGraph()
    a = g.add_node(NodeKind.ENTITY, "Café  de Flore")
    b = g.add_node(NodeKind.ENTITY, "Café de\nFlore")
    assert a == b


@pytest.mark.parametrize("text", ["", "   ", "\n\t"])
def test_empty_text_rejected(text):
    with pytest.raises(EmptyText):
        KnowledgeGraph().add_node(NodeKind.CHUNK, text)


def test_add_edge_contract():
    g = KnowledgeGraph()
    a = g.add_node(NodeKind.ENTITY, "A")
    b = g.add_node(NodeKind.ENTITY, "B")
    assert g.add_edge(a, b, EdgeLabel.MENTIONS) is True
    assert g.add_edge(a, b, EdgeLabel.MENTIONS) is False
    assert g.edge_count == 1
    with pytest.raises(SelfLoop):
        g.add_edge(a, a, EdgeLabel.CO_OCCURS)
    with pytest.raises(UnknownNode):
        g.add_edge(a, "nope", EdgeLabel.CO_OCCURS)


def test_clear():
    g = KnowledgeGraph()
    ids = [g.add_node(NodeKind.CHUNK, f"c{i}") for i in range(10)]
    g.add_edge(ids[0], ids[1], EdgeLabel.CO_OCCURS)
    g.clear()
    assert g.counts() == (0, 0)
    g.clear()
    assert g.counts() == (0, 0)


def test_clear_then_reseed_regenerates_ids():
    g = KnowledgeGraph()
    texts = ["Monsoon winds reverse seasonally.", "Monsoon", "Indian Ocean"]
    first = [g.add_node(NodeKind.CHUNK if i == 0 else NodeKind.ENTITY, t)
             for i, t in enumerate(texts)]
    g.clear()
    second = [g.add_node(NodeKind.CHUNK if i == 0 else NodeKind.ENTITY, t)
              for i, t in enumerate(texts)]
    assert first == second
    # and the id is the content hash, not an insertion counter
    assert first[0] == gs.content_key(NodeKind.CHUNK, texts[0])


def test_projection_merges_labels_and_directions():
    g = KnowledgeGraph()
    a, b, c = (g.add_node(NodeKind.ENTITY, t) for t in "ABC")
    g.add_edge(a, b, EdgeLabel.MENTIONS)
    g.add_edge(b, a, EdgeLabel.CO_OCCURS)
    proj = g.undirected_projection()
    assert proj[a] == {b} and proj[b] == {a}
    assert proj[c] == frozenset()


def test_projection_path():
    g = KnowledgeGraph()
    a, b, c = (g.add_node(NodeKind.ENTITY, t) for t in "ABC")
    g.add_edge(a, b, EdgeLabel.CO_OCCURS)
    g.add_edge(b, c, EdgeLabel.CO_OCCURS)
    proj = g.undirected_projection()
    assert sorted(len(v) for v in proj.values()) == [1, 1, 2]
    assert c not in proj[a]


def test_roundtrip_empty_and_small():
    assert gs.loads(gs.dumps(KnowledgeGraph())) == KnowledgeGraph()
    g = KnowledgeGraph()
    ids = [g.add_node(NodeKind.ENTITY, t, Stage.ENRICHMENT, "Clique") for t in "ABCDE"]
    for x, y in zip(ids, ids[1:]):
        g.add_edge(x, y, EdgeLabel.CO_OCCURS, "why?")
    back = gs.loads(gs.dumps(g))
    assert back == g
    assert gs.dumps(back) == gs.dumps(g)


def test_roundtrip_with_vectors():
    g = KnowledgeGraph()
    a = g.add_node(NodeKind.CHUNK, "alpha")
    data = gs.dumps(g, {a: [0.1, 0.2, 1e-300]})
    back, vectors = gs.loads_bundle(data)
    assert back == g and vectors == {a: [0.1, 0.2, 1e-300]}


def _five_node_bytes():
    g = KnowledgeGraph()
    ids = [g.add_node(NodeKind.ENTITY, t) for t in "ABCDE"]
    for x, y in zip(ids, ids[1:]):
        g.add_edge(x, y, EdgeLabel.CO_OCCURS)
    return gs.dumps(g)


def test_truncated_stream_raises():
    data = _five_node_bytes()
    with pytest.raises(MalformedInput):
        gs.loads(data[: len(data) // 2])
    with pytest.raises(MalformedInput):
        gs.loads(data[:-1])


@pytest.mark.parametrize("bad", [
    b"not json\n",
    b"[1,2]\n",
    b'{"id":"x"}\n',
    b'{"src":"a","dst":"b","label":"Mentions","provenance":"seed"}\n',
])
def test_malformed_records(bad):
    with pytest.raises(MalformedInput):
        gs.loads(bad)


def test_duplicate_edge_record_rejected():
    data = _five_node_bytes()
    last_edge = data.rstrip(b"\n").rsplit(b"\n", 1)[1] + b"\n"
    with pytest.raises(MalformedInput):
        gs.loads(data + last_edge)


texts = st.text(min_size=1, max_size=40).filter(lambda t: t.strip())


@st.composite
def graphs(draw):
    g = KnowledgeGraph()
    n = draw(st.integers(0, 50))
    ids = []
    for _ in range(n):
        kind = draw(st.sampled_from(list(NodeKind)))
        stage = draw(st.sampled_from(list(Stage)))
        origin = draw(st.none() | st.sampled_from(["Clique", "Louvain"]))
        ids.append(g.add_node(kind, draw(texts), stage, origin))
    ids = list(dict.fromkeys(ids))
    if len(ids) >= 2:
        pairs = draw(st.lists(st.tuples(st.sampled_from(ids), st.sampled_from(ids)), max_size=80))
        for a, b in pairs:
            if a != b:
                g.add_edge(a, b, draw(st.sampled_from(list(EdgeLabel))), draw(texts))
    return g


@settings(max_examples=120, deadline=None)
@given(graphs())
def test_roundtrip_property(g):
    data = gs.dumps(g)
    back = gs.loads(data)
    assert back == g
    assert gs.dumps(back) == data
    back.check_integrity()
