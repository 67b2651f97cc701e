import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from mkge.graph_store import EdgeLabel, KnowledgeGraph, NodeKind
from mkge.ingest import VectorIndex, chunk_text, extract_entities, ingest_documents, top_k
from mkge.providers import HashingEmbedder, ProviderUnavailable


def test_chunk_lengths():
    assert [len(c) for c in chunk_text("x" * 1200)] == [500, 500, 200]
    assert [len(c) for c in chunk_text("y" * 500)] == [500]
    assert chunk_text("") == []
    with pytest.raises(ValueError):
        chunk_text("abc", span=0)


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=1500))
def test_chunk_reconstruction(text):
    chunks = chunk_text(text)
    assert "".join(chunks) == text
    assert all(len(c) == 500 for c in chunks[:-1])


@pytest.mark.parametrize("text,expected", [
    ("Alice is friends with Bob", ["Alice", "Bob"]),
    ("the quick brown fox", []),
    ("Tuskegee Airmen trained at Moton Field", ["Tuskegee Airmen", "Moton Field"]),
    ("Bank of England, Bank of England", ["Bank of England"]),
    ("Procter and Gamble", ["Procter and Gamble"]),
    ("The Tuskegee Airmen flew. In Alabama, Moton Field", ["Tuskegee Airmen", "Alabama", "Moton Field"]),
    ("Paris, France", ["Paris", "France"]),
    ("the Bay of Bengal", ["Bay of Bengal"]),
    ("Alice and the dog", ["Alice"]),
])
def test_extract_entities(text, expected):
    assert extract_entities(text) == expected


def test_ingest_counts_and_structure():
    g, idx = KnowledgeGraph(), VectorIndex()
    doc = ("Alice is friends with Bob. " + "they talk about nothing in particular. " * 7)[:300]
    c = ingest_documents(g, idx, HashingEmbedder(), [(doc, "seed")])
    assert (c.chunks_added, c.entities_added, c.edges_added) == (1, 2, 3)
    labels = sorted(e.label.value for e in g.edges())
    assert labels == ["CoOccurs", "Mentions", "Mentions"]
    assert set(idx.ids()) == set(g.chunk_ids())
    again = ingest_documents(g, idx, HashingEmbedder(), [(doc, "seed")])
    assert (again.chunks_added, again.entities_added, again.edges_added) == (0, 0, 0)
    assert g.counts() == (3, 3)


def test_shared_entity_across_docs():
    g, idx = KnowledgeGraph(), VectorIndex()
    ingest_documents(g, idx, HashingEmbedder(), [("Alice met Bob.", "seed"),
                                                  ("Alice met Carol.", "why?")])
    alice = g.find(NodeKind.ENTITY, "Alice")
    mentions = [e for e in g.edges() if e.dst == alice and e.label is EdgeLabel.MENTIONS]
    assert len(mentions) == 2
    assert {e.provenance for e in mentions} == {"seed", "why?"}


def test_long_doc_chunks_all_indexed():
    g, idx = KnowledgeGraph(), VectorIndex()
    text = " ".join(f"w{i}" for i in range(400))
    c = ingest_documents(g, idx, HashingEmbedder(), [(text, "seed")])
    assert c.chunks_added == len(chunk_text(text)) == 4
    assert sorted(idx.ids()) == sorted(g.chunk_ids())


def test_embed_failure_leaves_no_unindexed_chunk():
    class Broken:
        def embed(self, text):
            raise ProviderUnavailable("down")

    g, idx = KnowledgeGraph(), VectorIndex()
    with pytest.raises(ProviderUnavailable):
        ingest_documents(g, idx, Broken(), [("Alice met Bob.", "seed")])
    assert g.chunk_ids() == [] and len(idx) == 0


def test_empty_document_rejected():
    with pytest.raises(ValueError):
        ingest_documents(KnowledgeGraph(), VectorIndex(), HashingEmbedder(), [("  ", "seed")])


def test_top_k_examples():
    idx = VectorIndex()
    idx.add("a", [1.0, 0.0])
    idx.add("b", [0.0, 1.0])
    assert top_k(idx, [1.0, 0.0], 1) == [("a", 1.0)]
    assert [i for i, _ in top_k(idx, [1.0, 0.0], 10)] == ["a", "b"]
    assert top_k(VectorIndex(), [1.0], 3) == []
    with pytest.raises(ValueError):
        top_k(idx, [1.0, 0.0], 0)


def _random_index(rng, n, dim, ties):
    idx, vectors = VectorIndex(), {}
    pool = []
    for i in range(n):
        if ties and pool and rng.random() < 0.3:
            v = list(rng.choice(pool)) if rng.random() < 0.5 else [2 * x for x in rng.choice(pool)]
        else:
            v = [float(rng.randint(-3, 3)) for _ in range(dim)]
        pool.append(v)
        nid = f"c{rng.randrange(10**6):06d}-{i}"
        idx.add(nid, v)
        vectors[nid] = v
    return idx, vectors


def test_top_k_matches_full_sort_oracle():
    rng = random.Random(99)
    for case in range(100):
        n = rng.randint(1, 200)
        dim = rng.choice([2, 3, 8, 32])
        idx, vectors = _random_index(rng, n, dim, ties=case % 2 == 0)
        query = [float(rng.randint(-3, 3)) for _ in range(dim)]
        k = rng.randint(1, n + 3)
        got = top_k(idx, query, k)
        want = oracles.cosine_rank_oracle(vectors, query, k)
        assert [i for i, _ in got] == [i for i, _ in want]
        assert np.allclose([s for _, s in got], [s for _, s in want], atol=1e-12)
