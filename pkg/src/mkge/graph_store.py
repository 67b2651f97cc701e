"""In-memory property graph of chunk and entity nodes with JSONL persistence."""
from __future__ import annotations

import enum
import hashlib
import json
import threading
import unicodedata
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

NodeId = str
Projection = Dict[NodeId, frozenset]


class GraphError(Exception):
    pass


class EmptyText(GraphError, ValueError):
    pass


class UnknownNode(GraphError, KeyError):
    pass


class SelfLoop(GraphError, ValueError):
    pass


class MalformedInput(GraphError, ValueError):
    pass


class NodeKind(str, enum.Enum):
    CHUNK = "Chunk"
    ENTITY = "Entity"


class Stage(str, enum.Enum):
    SEED = "Seed"
    ENRICHMENT = "Enrichment"


class EdgeLabel(str, enum.Enum):
    MENTIONS = "Mentions"
    CO_OCCURS = "CoOccurs"
    RELATED_THROUGH = "RelatedThrough"


@dataclass(frozen=True)
class Node:
    id: NodeId
    kind: NodeKind
    text: str
    stage: Stage = Stage.SEED
    metric_origin: Optional[str] = None


@dataclass(frozen=True)
class Edge:
    src: NodeId
    dst: NodeId
    label: EdgeLabel
    provenance: str = "seed"


def normalize_text(text: str) -> str:
    return " ".join(unicodedata.normalize("NFC", text).split())


def content_key(kind: NodeKind, text: str) -> str:
    digest = hashlib.sha256(f"{NodeKind(kind).value}\x00{normalize_text(text)}".encode("utf-8"))
    return digest.hexdigest()[:16]


class KnowledgeGraph:
    """Single-writer property graph.

    Node ids are content-addressed (kind + normalized text), so re-adding the
    same content is a no-op that returns the existing id. Iteration order is
    insertion order everywhere, which is what makes persistence bit-exact.
    """

    def __init__(self) -> None:
        self._nodes: Dict[NodeId, Node] = {}
        self._by_content: Dict[Tuple[str, str], NodeId] = {}
        self._edges: Dict[Tuple[NodeId, NodeId, EdgeLabel], Edge] = {}
        self._lock = threading.RLock()

    # -- queries ---------------------------------------------------------

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._nodes

    @property
    def node_count(self) -> int:
        return len(self._nodes)

    @property
    def edge_count(self) -> int:
        return len(self._edges)

    def nodes(self) -> List[Node]:
        return list(self._nodes.values())

    def edges(self) -> List[Edge]:
        return list(self._edges.values())

    def node(self, node_id: NodeId) -> Node:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def find(self, kind: NodeKind, text: str) -> Optional[NodeId]:
        return self._by_content.get((NodeKind(kind).value, normalize_text(text)))

    def chunk_ids(self) -> List[NodeId]:
        return [n.id for n in self._nodes.values() if n.kind is NodeKind.CHUNK]

    def counts(self) -> Tuple[int, int]:
        return len(self._nodes), len(self._edges)

    # -- mutation --------------------------------------------------------

    def add_node(
        self,
        kind: NodeKind,
        text: str,
        stage: Stage = Stage.SEED,
        metric_origin: Optional[str] = None,
    ) -> NodeId:
        if not text or not text.strip():
            raise EmptyText("node text must be non-empty")
        kind = NodeKind(kind)
        norm = normalize_text(text)
        with self._lock:
            existing = self._by_content.get((kind.value, norm))
            if existing is not None:
                return existing
            node_id = content_key(kind, text)
            if node_id in self._nodes:
                # hash prefix collision between different contents
                node_id = f"{node_id}-{len(self._nodes)}"
            self._nodes[node_id] = Node(node_id, kind, text, Stage(stage), metric_origin)
            self._by_content[(kind.value, norm)] = node_id
            return node_id

    def add_edge(
        self,
        src: NodeId,
        dst: NodeId,
        label: EdgeLabel,
        provenance: str = "seed",
    ) -> bool:
        label = EdgeLabel(label)
        with self._lock:
            for end in (src, dst):
                if end not in self._nodes:
                    raise UnknownNode(end)
            if src == dst:
                raise SelfLoop(src)
            key = (src, dst, label)
            if key in self._edges:
                return False
            self._edges[key] = Edge(src, dst, label, provenance)
            return True

    def clear(self) -> None:
        with self._lock:
            self._nodes.clear()
            self._by_content.clear()
            self._edges.clear()

    def _insert_raw(self, node: Node) -> None:
        if node.id in self._nodes:
            raise MalformedInput(f"duplicate node id {node.id!r}")
        self._nodes[node.id] = node
        self._by_content.setdefault((node.kind.value, normalize_text(node.text)), node.id)

    # -- views -----------------------------------------------------------

    def undirected_projection(self) -> Projection:
        """Simple undirected adjacency over every node, isolates included."""
        with self._lock:
            adj: Dict[NodeId, set] = {nid: set() for nid in self._nodes}
            for src, dst, _ in self._edges:
                adj[src].add(dst)
                adj[dst].add(src)
        return {nid: frozenset(nbrs) for nid, nbrs in adj.items()}

    def texts(self) -> Dict[NodeId, str]:
        return {nid: n.text for nid, n in self._nodes.items()}

    def copy(self) -> "KnowledgeGraph":
        other = KnowledgeGraph()
        with self._lock:
            other._nodes = dict(self._nodes)
            other._by_content = dict(self._by_content)
            other._edges = dict(self._edges)
        return other

    def check_integrity(self) -> None:
        for src, dst, _ in self._edges:
            if src not in self._nodes or dst not in self._nodes:
                raise GraphError(f"dangling edge {src}->{dst}")
            if src == dst:
                raise GraphError(f"self-loop on {src}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (
            list(self._nodes.values()) == list(other._nodes.values())
            and list(self._edges.values()) == list(other._edges.values())
        )

    def __repr__(self) -> str:
        return f"KnowledgeGraph(nodes={len(self._nodes)}, edges={len(self._edges)})"


# -- persistence -------------------------------------------------------------

_NODE_FIELDS = ("id", "kind", "text", "stage", "metric_origin")
_EDGE_FIELDS = ("src", "dst", "label", "provenance")
_VECTOR_FIELDS = ("node", "vector")


def _line(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def dumps(graph: KnowledgeGraph, vectors: Optional[Mapping[NodeId, Iterable[float]]] = None) -> bytes:
    """Serialize to JSON Lines: nodes, then edges, then optional index vectors."""
    lines = []
    for n in graph.nodes():
        lines.append(_line({"id": n.id, "kind": n.kind.value, "text": n.text,
                            "stage": n.stage.value, "metric_origin": n.metric_origin}))
    for e in graph.edges():
        lines.append(_line({"src": e.src, "dst": e.dst, "label": e.label.value,
                            "provenance": e.provenance}))
    for nid, vec in (vectors or {}).items():
        lines.append(_line({"node": nid, "vector": [float(x) for x in vec]}))
    return "".join(line + "\n" for line in lines).encode("utf-8")


def loads_bundle(data: bytes) -> Tuple[KnowledgeGraph, Dict[NodeId, List[float]]]:
    """Inverse of :func:`dumps`; returns the graph and any persisted vectors."""
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedInput(f"not UTF-8: {exc}") from None
    if text and not text.endswith("\n"):
        raise MalformedInput("truncated stream (missing final newline)")
    graph = KnowledgeGraph()
    vectors: Dict[NodeId, List[float]] = {}
    section = 0  # 0 nodes, 1 edges, 2 vectors
    # split on "\n" only: raw U+2028 and friends are legal inside JSON strings
    for lineno, line in enumerate(text.split("\n")[:-1], 1):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedInput(f"line {lineno}: {exc}") from None
        if not isinstance(rec, dict):
            raise MalformedInput(f"line {lineno}: expected an object")
        keys = tuple(rec)
        try:
            if keys == _NODE_FIELDS and section == 0:
                if not isinstance(rec["text"], str) or not rec["text"].strip():
                    raise MalformedInput(f"line {lineno}: empty node text")
                graph._insert_raw(Node(str(rec["id"]), NodeKind(rec["kind"]), rec["text"],
                                       Stage(rec["stage"]), rec["metric_origin"]))
            elif keys == _EDGE_FIELDS and section <= 1:
                section = 1
                if not graph.add_edge(rec["src"], rec["dst"], EdgeLabel(rec["label"]),
                                      rec["provenance"]):
                    raise MalformedInput(f"line {lineno}: duplicate edge")
            elif keys == _VECTOR_FIELDS:
                section = 2
                if rec["node"] not in graph:
                    raise MalformedInput(f"line {lineno}: vector for unknown node")
                vectors[rec["node"]] = [float(x) for x in rec["vector"]]
            else:
                raise MalformedInput(f"line {lineno}: unexpected record {keys}")
        except (ValueError, TypeError, GraphError) as exc:
            if isinstance(exc, MalformedInput):
                raise
            raise MalformedInput(f"line {lineno}: {exc}") from None
    return graph, vectors


def loads(data: bytes) -> KnowledgeGraph:
    return loads_bundle(data)[0]
