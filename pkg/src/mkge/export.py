"""DOT export of a persisted graph, optionally highlighting one metric's sparse nodes."""
from __future__ import annotations

from typing import Iterable, Optional

from .graph_store import KnowledgeGraph, NodeKind
from .metrics import compute_metric, sparse_ids

LABEL_CHARS = 40
HIGHLIGHT_STYLE = 'style=filled, fillcolor="#f4a6a6"'


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", " ") + '"'


def _label(text: str) -> str:
    text = " ".join(text.split())
    return text if len(text) <= LABEL_CHARS else text[:LABEL_CHARS - 3] + "..."


def to_dot(graph: KnowledgeGraph, highlight: Optional[Iterable[str]] = None,
           name: str = "kg") -> str:
    marked = set(highlight or ())
    lines = [f"digraph {name} {{", "  rankdir=LR;", "  node [fontsize=10];"]
    for n in graph.nodes():
        shape = "box" if n.kind is NodeKind.CHUNK else "ellipse"
        attrs = f"label={_quote(_label(n.text))}, shape={shape}"
        if n.id in marked:
            attrs += ", " + HIGHLIGHT_STYLE
        lines.append(f"  {_quote(n.id)} [{attrs}];")
    for e in graph.edges():
        lines.append(f"  {_quote(e.src)} -> {_quote(e.dst)} [label={_quote(e.label.value)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def sparse_highlight(graph: KnowledgeGraph, metric, seed: int = 0,
                     orientation: str = "below") -> list:
    projection = graph.undirected_projection()
    if not projection:
        return []
    scores = compute_metric(projection, metric, seed)
    return sparse_ids(scores, metric, orientation)[0]
