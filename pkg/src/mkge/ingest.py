"""Chunking, entity extraction and the exact cosine chunk index."""
from __future__ import annotations

import logging
import re
import threading
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .graph_store import EdgeLabel, KnowledgeGraph, NodeId, NodeKind, Stage
from .providers import ProviderError

log = logging.getLogger(__name__)

CHUNK_CHARS = 500
TIE_DECIMALS = 12

_WORD_RE = re.compile(r"[A-Za-z0-9][A-Za-z0-9'’\-]*")
_CONNECTORS = frozenset({"of", "the", "and"})
_LEADING_FUNCTION_WORDS = frozenset(
    "A An And As At But By For From He Her His How If In It Its On Or She So That The Their "
    "There These They This Those To Was We What When Where Which While Who Why With".split()
)


def chunk_text(text: str, span: int = CHUNK_CHARS) -> List[str]:
    """Consecutive non-overlapping ``span``-character slices.

    Python strings index by code point, so a slice never splits one.
    """
    if span <= 0:
        raise ValueError("span must be positive")
    return [text[i:i + span] for i in range(0, len(text), span)]


def _is_capitalized(word: str) -> bool:
    return word[0].isupper()


def extract_entities(text: str) -> List[str]:
    """Maximal runs of capitalized words, optionally joined by of/the/and.

    A connector only joins when a capitalized word follows it; the result is
    de-duplicated case-sensitively in order of first occurrence.
    """
    words = [(m.group(0), m.start(), m.end()) for m in _WORD_RE.finditer(text)]
    found: List[str] = []
    seen = set()
    i = 0
    while i < len(words):
        if not _is_capitalized(words[i][0]):
            i += 1
            continue
        start = words[i][1]
        end = words[i][2]
        j = i + 1
        while j < len(words):
            gap = text[words[j - 1][2]:words[j][1]]
            if gap.strip():  # punctuation breaks a run
                break
            w = words[j][0]
            if _is_capitalized(w):
                end = words[j][2]
                j += 1
                continue
            if w in _CONNECTORS:
                k = j
                while k < len(words) and words[k][0] in _CONNECTORS \
                        and not text[words[k - 1][2]:words[k][1]].strip():
                    k += 1
                if k < len(words) and _is_capitalized(words[k][0]) \
                        and not text[words[k - 1][2]:words[k][1]].strip():
                    end = words[k][2]
                    j = k + 1
                    continue
            break
        # sentence-initial function words ("The", "In") are capitalized by position only
        while i < j and words[i][0] in _LEADING_FUNCTION_WORDS:
            i += 1
            if i < j:
                start = words[i][1]
        if i >= j:
            continue
        surface = text[start:end]
        if surface not in seen:
            seen.add(surface)
            found.append(surface)
        i = j
    return found


class VectorIndex:
    """Exact brute-force cosine index over chunk embeddings."""

    def __init__(self) -> None:
        self._vectors: Dict[NodeId, np.ndarray] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._vectors

    def ids(self) -> List[NodeId]:
        return list(self._vectors)

    def add(self, node_id: NodeId, vector: Sequence[float]) -> None:
        with self._lock:
            self._vectors[node_id] = np.asarray(vector, dtype=np.float64)

    def clear(self) -> None:
        with self._lock:
            self._vectors.clear()

    def vectors(self) -> Dict[NodeId, np.ndarray]:
        return dict(self._vectors)

    def top_k(self, query: Sequence[float], k: int) -> List[Tuple[NodeId, float]]:
        return top_k(self, query, k)


def top_k(index: VectorIndex, query: Sequence[float], k: int) -> List[Tuple[NodeId, float]]:
    """Cosine ranking, descending score then ascending id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    snapshot = index.vectors()
    if not snapshot:
        return []
    q = np.asarray(query, dtype=np.float64)
    qn = np.linalg.norm(q)
    ids = list(snapshot)
    mat = np.stack([snapshot[i] for i in ids])
    norms = np.linalg.norm(mat, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = (mat @ q) / (norms * qn)
    sims = np.where((norms == 0) | (qn == 0), 0.0, sims)
    # round the sort key so mathematically equal cosines tie on id, not on float noise
    keys = np.round(sims, TIE_DECIMALS).tolist()
    ranked = sorted(range(len(ids)), key=lambda i: (-keys[i], ids[i]))
    return [(ids[i], float(sims[i])) for i in ranked[:k]]


@dataclass
class IngestCounts:
    chunks_added: int = 0
    entities_added: int = 0
    edges_added: int = 0

    def __iadd__(self, other: "IngestCounts") -> "IngestCounts":
        self.chunks_added += other.chunks_added
        self.entities_added += other.entities_added
        self.edges_added += other.edges_added
        return self


def ingest_documents(
    graph: KnowledgeGraph,
    index: VectorIndex,
    embedder,
    batch: Iterable[Tuple[str, str]],
    stage: Stage = Stage.SEED,
    metric_origin: Optional[str] = None,
    extractor=extract_entities,
) -> IngestCounts:
    """Chunk, embed and link every ``(text, provenance)`` item of ``batch``.

    Embedder failures are logged and propagated; anything already committed
    stays in the graph.
    """
    counts = IngestCounts()
    for text, provenance in batch:
        if not text or not text.strip():
            raise ValueError("document text must be non-empty")
        try:
            counts += _ingest_one(graph, index, embedder, text, provenance, stage,
                                  metric_origin, extractor)
        except ProviderError as exc:
            log.warning("ingest of item from %r failed: %s", provenance, exc)
            raise
    return counts


def _ingest_one(graph, index, embedder, text, provenance, stage, metric_origin, extractor):
    counts = IngestCounts()
    for piece in chunk_text(text):
        if not piece.strip():
            continue
        existing = graph.find(NodeKind.CHUNK, piece)
        # embed before inserting so a failed embed never leaves an unindexed chunk
        vector = embedder.embed(piece) if existing is None or existing not in index else None
        cid = graph.add_node(NodeKind.CHUNK, piece, stage, metric_origin)
        if existing is None:
            counts.chunks_added += 1
        if vector is not None:
            index.add(cid, vector)
        entity_ids: List[NodeId] = []
        for surface in extractor(piece):
            before = graph.node_count
            eid = graph.add_node(NodeKind.ENTITY, surface, stage, metric_origin)
            if graph.node_count > before:
                counts.entities_added += 1
            if eid not in entity_ids:
                entity_ids.append(eid)
            counts.edges_added += graph.add_edge(cid, eid, EdgeLabel.MENTIONS, provenance)
        for a, b in combinations(entity_ids, 2):
            src, dst = sorted((a, b))
            counts.edges_added += graph.add_edge(src, dst, EdgeLabel.CO_OCCURS, provenance)
    return counts
