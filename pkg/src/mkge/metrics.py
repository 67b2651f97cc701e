"""Graph sparsity metrics over an undirected projection.

Every metric takes a projection (``{node: frozenset(neighbours)}``) and returns
a score per node. Sparse nodes are those at or below the per-metric median.
"""
from __future__ import annotations

import enum
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from .graph_store import NodeId

Adjacency = Mapping[NodeId, Iterable[NodeId]]
MetricScores = Dict[NodeId, float]

PREVIEW_CHARS = 160
MAX_SPARSE = 50


class EmptyInput(ValueError):
    pass


class InvalidPartition(ValueError):
    pass


class MetricKey(str, enum.Enum):
    CLIQUE = "Clique"
    NON_CLIQUE = "NonClique"
    CLUSTERING = "Clustering"
    DEGREE = "Degree"
    BETWEENNESS = "Betweenness"
    DIAMETER = "Diameter"
    LOUVAIN = "Louvain"


@dataclass(frozen=True)
class MetricEntry:
    key: MetricKey
    cognitive_label: str
    shortcoming: str


# Low-score readings, in the fixed cycle order.
REGISTRY: Tuple[MetricEntry, ...] = (
    MetricEntry(MetricKey.CLIQUE, "Over-confidence in tight clusters",
                "Deduction; connecting known concepts"),
    MetricEntry(MetricKey.NON_CLIQUE, "Isolated “unknown unknowns”",
                "New, unconnected information"),
    MetricEntry(MetricKey.CLUSTERING, "Over-specialisation without breadth",
                "Over-specialization"),
    MetricEntry(MetricKey.DEGREE, "Misleading fluency/popularity cues", "Fluency illusion"),
    MetricEntry(MetricKey.BETWEENNESS, "Missing bridges across topics", "Bridging concepts"),
    MetricEntry(MetricKey.DIAMETER, "Fragmented global monitoring", "Global awareness"),
    MetricEntry(MetricKey.LOUVAIN, "Poor strategy transfer between modules", "Modular transfer"),
)


def registry_entry(key) -> MetricEntry:
    key = MetricKey(key)
    for entry in REGISTRY:
        if entry.key is key:
            return entry
    raise KeyError(key)


def _adj(projection: Adjacency) -> Dict[NodeId, Set[NodeId]]:
    return {v: set(nbrs) for v, nbrs in projection.items()}


# ---------------------------------------------------------------------------
# cliques

def maximal_cliques(projection: Adjacency) -> List[frozenset]:
    """Bron-Kerbosch with Tomita pivoting; deterministic output order."""
    adj = _adj(projection)
    out: List[frozenset] = []
    # explicit stack instead of recursion: (R, P, X)
    stack = [(frozenset(), set(adj), set())]
    while stack:
        r, p, x = stack.pop()
        if not p and not x:
            out.append(r)
            continue
        if not p:
            continue
        pivot = max(sorted(p | x), key=lambda u: len(p & adj[u]))
        for v in sorted(p - adj[pivot]):
            stack.append((r | {v}, p & adj[v], x & adj[v]))
            p = p - {v}
            x = x | {v}
    return out


def clique_score(projection: Adjacency) -> MetricScores:
    """Size of the largest maximal clique containing each node (isolates score 1)."""
    scores = {v: 1.0 for v in projection}
    for clique in maximal_cliques(projection):
        size = float(len(clique))
        for v in clique:
            if size > scores[v]:
                scores[v] = size
    return scores


def isolate_indicator(projection: Adjacency) -> MetricScores:
    return {v: (0.0 if not set(nbrs) else 1.0) for v, nbrs in projection.items()}


def local_clustering(projection: Adjacency) -> MetricScores:
    adj = _adj(projection)
    scores: MetricScores = {}
    for v, nbrs in adj.items():
        d = len(nbrs)
        if d < 2:
            scores[v] = 0.0
            continue
        links = sum(len(adj[u] & nbrs) for u in nbrs) // 2
        scores[v] = 2.0 * links / (d * (d - 1))
    return scores


def degree_centrality(projection: Adjacency) -> MetricScores:
    adj = _adj(projection)
    n = len(adj)
    if n < 2:
        return {v: 0.0 for v in adj}
    return {v: len(nbrs) / (n - 1) for v, nbrs in adj.items()}


def betweenness(projection: Adjacency) -> MetricScores:
    """Unnormalized shortest-path betweenness (Brandes accumulation)."""
    adj = _adj(projection)
    cb = {v: 0.0 for v in adj}
    # sorted iteration keeps float summation order independent of hash seeds
    nbrs = {v: sorted(adj[v]) for v in adj}
    for s in sorted(adj):
        order: List[NodeId] = []
        preds: Dict[NodeId, List[NodeId]] = {v: [] for v in adj}
        sigma = dict.fromkeys(adj, 0)
        dist = dict.fromkeys(adj, -1)
        sigma[s] = 1
        dist[s] = 0
        queue = deque([s])
        while queue:
            v = queue.popleft()
            order.append(v)
            for w in nbrs[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = dict.fromkeys(adj, 0.0)
        for w in reversed(order):
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                cb[w] += delta[w]
    # each unordered pair was counted from both ends
    return {v: cb[v] / 2.0 for v in projection}


def _bfs_dist(adj: Mapping[NodeId, Set[NodeId]], s: NodeId) -> Dict[NodeId, int]:
    dist = {s: 0}
    queue = deque([s])
    while queue:
        v = queue.popleft()
        for w in adj[v]:
            if w not in dist:
                dist[w] = dist[v] + 1
                queue.append(w)
    return dist


def connected_components(projection: Adjacency) -> List[List[NodeId]]:
    adj = _adj(projection)
    seen: Set[NodeId] = set()
    comps = []
    for v in adj:
        if v in seen:
            continue
        comp = list(_bfs_dist(adj, v))
        seen.update(comp)
        comps.append(comp)
    return comps


def component_diameter_score(projection: Adjacency) -> MetricScores:
    adj = _adj(projection)
    scores: MetricScores = {}
    for comp in connected_components(adj):
        diam = max(max(_bfs_dist(adj, v).values()) for v in comp)
        for v in comp:
            scores[v] = float(diam)
    return scores


# ---------------------------------------------------------------------------
# communities

def modularity(projection: Adjacency, partition: Iterable[Iterable[NodeId]]) -> float:
    adj = _adj(projection)
    blocks = [set(b) for b in partition]
    covered: Set[NodeId] = set()
    for b in blocks:
        if covered & b:
            raise InvalidPartition("blocks overlap")
        covered |= b
    if covered != set(adj):
        raise InvalidPartition("partition does not cover the node set")
    two_l = sum(len(n) for n in adj.values())
    if two_l == 0:
        return 0.0
    q = 0.0
    for b in blocks:
        internal = sum(len(adj[v] & b) for v in b) / 2.0
        deg = sum(len(adj[v]) for v in b)
        q += internal / (two_l / 2.0) - (deg / two_l) ** 2
    return q


@dataclass
class LouvainResult:
    partition: List[frozenset]
    membership: Dict[NodeId, int]
    level_modularity: List[float] = field(default_factory=list)


def _one_level(nbr_w: List[Dict[int, float]], order: List[int], resolution: float) -> List[int]:
    """Local moving phase on a weighted graph with nodes 0..n-1.

    ``nbr_w[i]`` maps neighbour -> weight; a self-loop weight counts once
    into the degree twice, as in the aggregated graphs.
    """
    n = len(nbr_w)
    k = [sum(w for j, w in nbr_w[i].items()) + nbr_w[i].get(i, 0.0) for i in range(n)]
    m2 = sum(k)
    com = list(range(n))
    tot = list(k)
    if m2 == 0:
        return com
    improved = True
    while improved:
        improved = False
        for i in order:
            ci = com[i]
            links: Dict[int, float] = {}
            for j, w in nbr_w[i].items():
                if j != i:
                    links[com[j]] = links.get(com[j], 0.0) + w
            tot[ci] -= k[i]
            base = links.get(ci, 0.0) - resolution * tot[ci] * k[i] / m2
            best_c, best_gain = ci, base
            for c in sorted(links):
                gain = links[c] - resolution * tot[c] * k[i] / m2
                if gain > best_gain + 1e-12 or (abs(gain - best_gain) <= 1e-12 and c < best_c
                                                 and gain > base + 1e-12):
                    best_c, best_gain = c, gain
            tot[best_c] += k[i]
            com[i] = best_c
            if best_c != ci:
                improved = True
    return com


def louvain(projection: Adjacency, seed: int = 0, resolution: float = 1.0) -> LouvainResult:
    """Louvain community detection with seeded, fully deterministic node order."""
    nodes = sorted(projection)
    if not nodes:
        return LouvainResult([], {}, [])
    index = {v: i for i, v in enumerate(nodes)}
    adj = _adj(projection)
    nbr_w: List[Dict[int, float]] = [
        {index[u]: 1.0 for u in sorted(adj[v])} for v in nodes
    ]
    rng = random.Random(seed)
    members: List[List[int]] = [[i] for i in range(len(nodes))]  # super-node -> original nodes
    history: List[float] = []

    def current_partition() -> List[frozenset]:
        return [frozenset(nodes[i] for i in grp) for grp in members]

    history.append(modularity(adj, current_partition()))
    while True:
        order = list(range(len(nbr_w)))
        rng.shuffle(order)
        com = _one_level(nbr_w, order, resolution)
        # renumber communities by first appearance in super-node order
        relabel: Dict[int, int] = {}
        for c in com:
            relabel.setdefault(c, len(relabel))
        if len(relabel) == len(nbr_w):
            break
        new_members: List[List[int]] = [[] for _ in relabel]
        new_w: List[Dict[int, float]] = [{} for _ in relabel]
        for i, c in enumerate(com):
            ci = relabel[c]
            new_members[ci].extend(members[i])
            for j, w in nbr_w[i].items():
                cj = relabel[com[j]]
                if ci == cj and i != j:
                    # intra-community edge seen from both ends; store half each time
                    new_w[ci][ci] = new_w[ci].get(ci, 0.0) + w / 2.0
                else:
                    new_w[ci][cj] = new_w[ci].get(cj, 0.0) + w
        members, nbr_w = new_members, new_w
        history.append(modularity(adj, current_partition()))

    parts = sorted((sorted(nodes[i] for i in grp) for grp in members), key=lambda b: b[0])
    partition = [frozenset(b) for b in parts]
    membership = {v: ci for ci, b in enumerate(parts) for v in b}
    return LouvainResult(partition, membership, history)


def louvain_community_size(projection: Adjacency, seed: int = 0) -> Tuple[MetricScores, List[frozenset]]:
    result = louvain(projection, seed)
    sizes = {v: float(len(result.partition[c])) for v, c in result.membership.items()}
    return {v: sizes[v] for v in projection}, result.partition


# ---------------------------------------------------------------------------
# sparsity

def median(values: Sequence[float]) -> float:
    if not values:
        raise EmptyInput("median of an empty list")
    ordered = sorted(values)
    mid = len(ordered) // 2
    if len(ordered) % 2:
        return float(ordered[mid])
    return (ordered[mid - 1] + ordered[mid]) / 2.0


@dataclass(frozen=True)
class SparseEntry:
    id: NodeId
    preview: str
    score: float


@dataclass(frozen=True)
class SparseNodeSet:
    metric: MetricKey
    entries: Tuple[SparseEntry, ...]
    flagged_count: int
    threshold: Optional[float] = None

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> List[NodeId]:
        return [e.id for e in self.entries]

    def records(self) -> List[dict]:
        return [{"metric": self.metric.value, "node": e.id, "score": e.score,
                 "preview": e.preview} for e in self.entries]


def sparse_ids(scores: Mapping[NodeId, float], key, orientation: str = "below") -> Tuple[List[NodeId], Optional[float]]:
    """All flagged node ids, in report order, plus the threshold used."""
    if not scores:
        raise EmptyInput("no scores to threshold")
    key = MetricKey(key)
    if key is MetricKey.NON_CLIQUE:
        flagged = [v for v, s in scores.items() if s == 0]
        return sorted(flagged, key=lambda v: (scores[v], v)), None
    thr = median(list(scores.values()))
    if orientation == "below":
        flagged = [v for v, s in scores.items() if s <= thr]
        return sorted(flagged, key=lambda v: (scores[v], v)), thr
    if orientation == "above":
        flagged = [v for v, s in scores.items() if s >= thr]
        return sorted(flagged, key=lambda v: (-scores[v], v)), thr
    raise ValueError(f"unknown orientation {orientation!r}")


def detect_sparse(
    scores: Mapping[NodeId, float],
    key,
    texts: Optional[Mapping[NodeId, str]] = None,
    orientation: str = "below",
    cap: int = MAX_SPARSE,
) -> SparseNodeSet:
    flagged, thr = sparse_ids(scores, key, orientation)
    texts = texts or {}
    entries = tuple(
        SparseEntry(v, texts.get(v, "")[:PREVIEW_CHARS], float(scores[v])) for v in flagged[:cap]
    )
    return SparseNodeSet(MetricKey(key), entries, len(flagged), thr)


_SCORERS: Dict[MetricKey, Callable[..., MetricScores]] = {
    MetricKey.CLIQUE: clique_score,
    MetricKey.NON_CLIQUE: isolate_indicator,
    MetricKey.CLUSTERING: local_clustering,
    MetricKey.DEGREE: degree_centrality,
    MetricKey.BETWEENNESS: betweenness,
    MetricKey.DIAMETER: component_diameter_score,
}


def compute_metric(projection: Adjacency, key, seed: int = 0) -> MetricScores:
    key = MetricKey(key)
    if key is MetricKey.LOUVAIN:
        return louvain_community_size(projection, seed)[0]
    return _SCORERS[key](projection)


def all_metrics(projection: Adjacency, seed: int = 0) -> Dict[MetricKey, MetricScores]:
    return {e.key: compute_metric(projection, e.key, seed) for e in REGISTRY}


def is_finite_nonneg(scores: Mapping[NodeId, float]) -> bool:
    return all(math.isfinite(s) and s >= 0 for s in scores.values())
