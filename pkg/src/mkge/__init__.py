"""Metric-guided knowledge-graph enrichment."""

from .graph_store import Edge, EdgeLabel, KnowledgeGraph, Node, NodeKind, Stage
from .ingest import VectorIndex, chunk_text, extract_entities, ingest_documents, top_k
from .metrics import REGISTRY, MetricKey, detect_sparse
from .pipeline import Context, PipelineConfig, QuestionItem, run_query, run_set

__version__ = "0.1.0"

__all__ = [
    "Context", "Edge", "EdgeLabel", "KnowledgeGraph", "MetricKey", "Node", "NodeKind",
    "PipelineConfig", "QuestionItem", "REGISTRY", "Stage", "VectorIndex", "chunk_text",
    "detect_sparse", "extract_entities", "ingest_documents", "run_query", "run_set", "top_k",
]
