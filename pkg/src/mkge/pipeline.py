"""Per-query enrichment loop and run-set aggregation."""
from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .graph_store import KnowledgeGraph, Stage
from .ingest import VectorIndex, ingest_documents
from .metrics import REGISTRY, MetricEntry, compute_metric, detect_sparse
from .providers import ProviderError
from .qa import (DEFAULT_F1_DEADBAND, DEFAULT_TEMPLATES, AnswerRecord, Outcome, Phase, Templates,
                 Verdict, answer, generate_questions, judge)

log = logging.getLogger(__name__)

SEED_MAX_RESULTS = 3
ENRICH_MAX_RESULTS = 1


class PipelineError(Exception):
    pass


# ---------------------------------------------------------------------------
# question sets

@dataclass(frozen=True)
class QuestionItem:
    id: str
    question: str
    reference_answer: Optional[str] = None


def parse_question_set(lines: Iterable[str]) -> List[QuestionItem]:
    items: List[QuestionItem] = []
    seen = set()
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            item = QuestionItem(str(rec["id"]), rec["question"], rec.get("reference_answer"))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValueError(f"question set line {lineno}: {exc}") from None
        if not isinstance(item.question, str) or not item.question.strip():
            raise ValueError(f"question set line {lineno}: empty question")
        if item.id in seen:
            raise ValueError(f"question set line {lineno}: duplicate id {item.id!r}")
        seen.add(item.id)
        items.append(item)
    return items


def load_question_set(path) -> List[QuestionItem]:
    with open(path, encoding="utf-8") as fh:
        return parse_question_set(fh)


# ---------------------------------------------------------------------------
# logging

def _jsonl(records: Iterable[Mapping[str, Any]]) -> bytes:
    return "".join(json.dumps(r, ensure_ascii=False, separators=(",", ":")) + "\n"
                   for r in records).encode("utf-8")


class EventLog:
    """Append-only event and snippet log with a per-run ordinal clock."""

    def __init__(self) -> None:
        self.events: List[Dict[str, Any]] = []
        self.snippets: List[Dict[str, Any]] = []
        self.query_id: Optional[str] = None
        self._lock = threading.Lock()

    def emit(self, event: str, payload: Optional[Dict[str, Any]] = None) -> None:
        with self._lock:
            self.events.append({"ts_ordinal": len(self.events), "query_id": self.query_id,
                                "event": event, "payload": payload or {}})

    def snippet(self, source_question: str, url: str, content: str) -> None:
        with self._lock:
            self.snippets.append({"query_id": self.query_id, "source_question": source_question,
                                  "url": url, "content": content})

    def extend(self, other: "EventLog") -> None:
        with self._lock:
            for rec in other.events:
                self.events.append({**rec, "ts_ordinal": len(self.events)})
            self.snippets.extend(other.snippets)

    def count(self, event: str, query_id: Optional[str] = None) -> int:
        return sum(1 for r in self.events
                   if r["event"] == event and (query_id is None or r["query_id"] == query_id))

    def events_bytes(self) -> bytes:
        return _jsonl(self.events)

    def snippets_bytes(self) -> bytes:
        return _jsonl(self.snippets)


class _Metered:
    def __init__(self, inner, log: EventLog) -> None:
        self.inner = inner
        self.log = log
        self.calls = 0

    @property
    def mode(self) -> str:
        return getattr(self.inner, "mode", "offline")


class MeteredChat(_Metered):
    def chat(self, request):
        self.calls += 1
        self.log.emit("chat", {"template": request.template_id, "role": request.role,
                               "fingerprint": request.fingerprint()})
        return self.inner.chat(request)


class MeteredSearch(_Metered):
    def search(self, query: str, max_results: int):
        self.calls += 1
        self.log.emit("search", {"query": query, "max_results": max_results})
        return self.inner.search(query, max_results)


class MeteredEmbedder(_Metered):
    def embed(self, text: str):
        self.calls += 1
        self.log.emit("embed", {"chars": len(text)})
        return self.inner.embed(text)


# ---------------------------------------------------------------------------
# context

@dataclass
class PipelineConfig:
    orientation: Dict[str, str] = field(default_factory=dict)
    f1_deadband: float = DEFAULT_F1_DEADBAND
    louvain_seed: int = 0
    seed_max_results: int = SEED_MAX_RESULTS
    enrich_max_results: int = ENRICH_MAX_RESULTS
    templates: Templates = DEFAULT_TEMPLATES
    registry: Tuple[MetricEntry, ...] = REGISTRY


class Context:
    """Graph, index, metered providers and log for one pipeline thread."""

    def __init__(self, chat, search, embedder, config: Optional[PipelineConfig] = None,
                 graph: Optional[KnowledgeGraph] = None, index: Optional[VectorIndex] = None,
                 log: Optional[EventLog] = None) -> None:
        self.config = config or PipelineConfig()
        self.graph = graph if graph is not None else KnowledgeGraph()
        self.index = index if index is not None else VectorIndex()
        self.log = log if log is not None else EventLog()
        self._raw = (chat, search, embedder)
        self.chat = MeteredChat(chat, self.log)
        self.search = MeteredSearch(search, self.log)
        self.embedder = MeteredEmbedder(embedder, self.log)

    def fork(self) -> "Context":
        return Context(*self._raw, config=self.config)

    def reset(self) -> None:
        self.index.clear()
        self.graph.clear()
        if self.graph.counts() != (0, 0) or len(self.index):
            raise PipelineError("graph not empty after clear")


# ---------------------------------------------------------------------------
# cycles

@dataclass
class CycleStats:
    metric: str
    flagged: int = 0
    questions: int = 0
    searches: int = 0
    documents: int = 0
    nodes_added: int = 0
    edges_added: int = 0
    skipped: bool = False


def run_metric_cycle(ctx: Context, entry: MetricEntry, blindspot_topic: str) -> CycleStats:
    """Score one metric, question its sparse nodes, and ingest the first hit per question."""
    stats = CycleStats(entry.key.value)
    n0, e0 = ctx.graph.counts()
    projection = ctx.graph.undirected_projection()
    if not projection:
        stats.skipped = True
        ctx.log.emit("cycle_skipped", {"metric": entry.key.value, "reason": "empty graph"})
        return stats
    scores = compute_metric(projection, entry.key, ctx.config.louvain_seed)
    orientation = ctx.config.orientation.get(entry.key.value, "below")
    sparse = detect_sparse(scores, entry.key, ctx.graph.texts(), orientation)
    stats.flagged = sparse.flagged_count
    ctx.log.emit("sparse_detected", {"metric": entry.key.value, "flagged": sparse.flagged_count,
                                     "threshold": sparse.threshold, "nodes": sparse.ids})
    if not sparse.entries:
        stats.skipped = True
        ctx.log.emit("cycle_skipped", {"metric": entry.key.value, "reason": "no sparse nodes"})
        return stats

    questions = generate_questions(ctx.chat, entry, sparse, blindspot_topic,
                                   ctx.config.templates, ctx.log.emit)
    stats.questions = len(questions)
    for q in questions:
        ctx.log.emit("question", {"metric": entry.key.value, "text": q.text})
        stats.searches += 1
        try:
            results = ctx.search.search(q.text, ctx.config.enrich_max_results)
        except ProviderError as exc:
            ctx.log.emit("question_failed", {"question": q.text, "reason": str(exc)})
            continue
        if not results or not results[0].content.strip():
            ctx.log.emit("question_failed", {"question": q.text, "reason": "no results"})
            continue
        top = results[0]
        ctx.log.snippet(q.text, top.url, top.content)
        try:
            ingest_documents(ctx.graph, ctx.index, ctx.embedder, [(top.content, q.text)],
                             Stage.ENRICHMENT, entry.key.value)
        except ProviderError as exc:
            ctx.log.emit("question_failed", {"question": q.text, "reason": str(exc)})
            continue
        stats.documents += 1
    n1, e1 = ctx.graph.counts()
    stats.nodes_added, stats.edges_added = n1 - n0, e1 - e0
    ctx.log.emit("cycle_done", {**asdict(stats), "nodes": n1, "edges": e1})
    return stats


# ---------------------------------------------------------------------------
# queries

@dataclass
class QueryRunRecord:
    question_id: str
    question: str
    reference_answer: Optional[str]
    seeded: bool
    seed_snippet: str = ""
    seed_url: str = ""
    ans_before: Optional[AnswerRecord] = None
    ans_after: Optional[AnswerRecord] = None
    verdict: Optional[Verdict] = None
    cycles: List[CycleStats] = field(default_factory=list)
    search_call_count: int = 0
    growth: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def seed_nodes(self) -> int:
        return self.growth[0][0] if self.growth else 0

    @property
    def final_nodes(self) -> int:
        return self.growth[-1][0] if self.growth else 0

    @property
    def documents_ingested(self) -> int:
        return sum(c.documents for c in self.cycles)

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "question": self.question,
            "reference_answer": self.reference_answer,
            "seeded": self.seeded,
            "seed_snippet": self.seed_snippet,
            "seed_url": self.seed_url,
            "ans_before": self.ans_before.to_dict() if self.ans_before else None,
            "ans_after": self.ans_after.to_dict() if self.ans_after else None,
            "verdict": self.verdict.to_dict() if self.verdict else None,
            "cycles": [asdict(c) for c in self.cycles],
            "search_call_count": self.search_call_count,
            "growth": [list(g) for g in self.growth],
        }


def run_query(ctx: Context, item: QuestionItem) -> QueryRunRecord:
    ctx.log.query_id = item.id
    ctx.reset()
    ctx.log.emit("query_start", {"question": item.question})
    record = QueryRunRecord(item.id, item.question, item.reference_answer, seeded=False)

    results = ctx.search.search(item.question, ctx.config.seed_max_results)
    record.search_call_count = 1
    if not results or not results[0].content.strip():
        ctx.log.emit("unseeded", {"question": item.question})
        return record
    seed = results[0]
    record.seeded = True
    record.seed_snippet, record.seed_url = seed.content, seed.url
    ctx.log.snippet(item.question, seed.url, seed.content)
    ingest_documents(ctx.graph, ctx.index, ctx.embedder, [(seed.content, "seed")], Stage.SEED)
    record.growth.append(ctx.graph.counts())
    ctx.log.emit("seeded", {"nodes": ctx.graph.node_count, "edges": ctx.graph.edge_count})

    record.ans_before = answer(ctx.chat, ctx.graph, ctx.index, ctx.embedder, item.question,
                               Phase.BEFORE, ctx.config.templates)
    ctx.log.emit("answer", record.ans_before.to_dict())

    for entry in ctx.config.registry:
        stats = run_metric_cycle(ctx, entry, item.question)
        record.cycles.append(stats)
        record.search_call_count += stats.searches
        record.growth.append(ctx.graph.counts())

    record.ans_after = answer(ctx.chat, ctx.graph, ctx.index, ctx.embedder, item.question,
                              Phase.AFTER, ctx.config.templates)
    ctx.log.emit("answer", record.ans_after.to_dict())
    record.verdict = judge(ctx.chat, item.question, record.ans_before, record.ans_after,
                           item.reference_answer, ctx.graph, ctx.config.f1_deadband,
                           ctx.config.templates)
    ctx.log.emit("verdict", record.verdict.to_dict())
    return record


# ---------------------------------------------------------------------------
# run sets

@dataclass
class RunReport:
    n_questions: int
    n_evaluated: int
    n_unseeded: int
    improved: int
    unchanged: int
    degraded: int
    improvement_rate: float
    collateral_stability: float
    collateral_stability_undefined: bool
    mean_cost: float
    per_metric: Dict[str, Dict[str, int]]

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(records: Sequence[QueryRunRecord]) -> RunReport:
    outcomes = [r.verdict.outcome for r in records if r.seeded and r.verdict is not None]
    improved = outcomes.count(Outcome.IMPROVED)
    unchanged = outcomes.count(Outcome.UNCHANGED)
    degraded = outcomes.count(Outcome.DEGRADED)
    evaluated = len(outcomes)
    non_improved = unchanged + degraded
    per_metric: Dict[str, Dict[str, int]] = {
        e.key.value: {"questions": 0, "searches": 0, "documents": 0, "nodes_added": 0,
                      "edges_added": 0, "skipped": 0}
        for e in REGISTRY
    }
    for r in records:
        for c in r.cycles:
            agg = per_metric.setdefault(c.metric, dict.fromkeys(
                ("questions", "searches", "documents", "nodes_added", "edges_added", "skipped"), 0))
            agg["questions"] += c.questions
            agg["searches"] += c.searches
            agg["documents"] += c.documents
            agg["nodes_added"] += c.nodes_added
            agg["edges_added"] += c.edges_added
            agg["skipped"] += int(c.skipped)
    return RunReport(
        n_questions=len(records),
        n_evaluated=evaluated,
        n_unseeded=sum(1 for r in records if not r.seeded),
        improved=improved,
        unchanged=unchanged,
        degraded=degraded,
        improvement_rate=improved / evaluated if evaluated else 0.0,
        collateral_stability=unchanged / non_improved if non_improved else 1.0,
        collateral_stability_undefined=non_improved == 0,
        mean_cost=(sum(r.search_call_count for r in records) / len(records)) if records else 0.0,
        per_metric=per_metric,
    )


def run_set(ctx: Context, items: Sequence[QuestionItem], workers: int = 1
            ) -> Tuple[RunReport, List[QueryRunRecord]]:
    """Run every question; ``workers > 1`` gives each query its own graph and log."""
    if not items:
        raise ValueError("question set is empty")
    if workers <= 1:
        records = [run_query(ctx, item) for item in items]
    else:
        def one(item):
            sub = ctx.fork()
            return run_query(sub, item), sub.log

        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(one, items))
        records = []
        for rec, sub_log in outs:
            records.append(rec)
            ctx.log.extend(sub_log)
    ctx.log.query_id = None
    report = summarize(records)
    ctx.log.emit("run_done", {"improvement_rate": report.improvement_rate,
                              "collateral_stability": report.collateral_stability,
                              "mean_cost": report.mean_cost})
    return report, records


def report_bytes(report: RunReport, records: Sequence[QueryRunRecord]) -> bytes:
    doc = {"report": report.to_dict(), "records": [r.to_dict() for r in records]}
    return (json.dumps(doc, ensure_ascii=False, indent=2) + "\n").encode("utf-8")
