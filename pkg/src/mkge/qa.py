"""Question generation, graph-RAG answering and before/after judging."""
from __future__ import annotations

import enum
import logging
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence

from .graph_store import KnowledgeGraph, NodeId, Stage
from .ingest import VectorIndex, extract_entities, top_k
from .metrics import MetricEntry, MetricKey, SparseNodeSet
from .providers import ChatRequest, ScriptedChat, content_tokens

log = logging.getLogger(__name__)

QUESTIONS_PER_METRIC = 5
CONTEXT_CHUNKS = 5
DEFAULT_F1_DEADBAND = 0.05

EventSink = Callable[[str, Dict[str, Any]], None]


class UnparseableVerdict(ValueError):
    pass


class Phase(str, enum.Enum):
    BEFORE = "Before"
    AFTER = "After"


class Outcome(str, enum.Enum):
    IMPROVED = "Improved"
    UNCHANGED = "Unchanged"
    DEGRADED = "Degraded"


@dataclass(frozen=True)
class EnrichmentQuestion:
    metric: MetricKey
    text: str
    target_nodes: tuple = ()

    def __post_init__(self):
        if not self.text.strip() or not self.text.rstrip().endswith("?"):
            raise ValueError(f"not a question: {self.text!r}")


@dataclass
class AnswerRecord:
    question: str
    answer: str
    phase: Phase
    context_chunks: List[NodeId] = field(default_factory=list)
    empty_index: bool = False

    def __post_init__(self):
        if len(self.context_chunks) > CONTEXT_CHUNKS:
            raise ValueError("at most five context chunks")

    def to_dict(self) -> dict:
        return {"question": self.question, "answer": self.answer, "phase": self.phase.value,
                "context_chunks": list(self.context_chunks), "empty_index": self.empty_index}


@dataclass(frozen=True)
class Verdict:
    outcome: Outcome
    rationale: str = ""

    def to_dict(self) -> dict:
        return {"outcome": self.outcome.value, "rationale": self.rationale}


# ---------------------------------------------------------------------------
# templates

class Templates:
    """Plain-text prompt templates; the template id is the file stem."""

    def __init__(self, directory: Optional[Path] = None) -> None:
        self.directory = Path(directory) if directory else None

    def text(self, template_id: str) -> str:
        if self.directory is not None:
            return (self.directory / f"{template_id}.txt").read_text(encoding="utf-8")
        return _packaged_template(template_id)

    def render(self, template_id: str, **slots: Any) -> str:
        return string.Template(self.text(template_id)).substitute(**slots)


@lru_cache(maxsize=None)
def _packaged_template(template_id: str) -> str:
    return resources.files("mkge").joinpath("templates", f"{template_id}.txt").read_text(
        encoding="utf-8")


DEFAULT_TEMPLATES = Templates()


# ---------------------------------------------------------------------------
# question generation

_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")


def parse_questions(text: str) -> List[str]:
    out = []
    for line in text.splitlines():
        line = _BULLET_RE.sub("", line.strip()).strip()
        if line and line.endswith("?"):
            out.append(line)
    return out


def _node_lines(sparse: SparseNodeSet) -> str:
    return "\n".join(f"- {e.id}: {e.preview}" for e in sparse.entries)


def generate_questions(
    chat,
    entry: MetricEntry,
    sparse: SparseNodeSet,
    blindspot_topic: str,
    templates: Templates = DEFAULT_TEMPLATES,
    events: Optional[EventSink] = None,
) -> List[EnrichmentQuestion]:
    """Ask the chat model for five metric-targeted questions.

    Lines that do not end in "?" are dropped. Fewer than five survivors earn
    exactly one stricter re-prompt; whatever has accumulated after that is
    returned, possibly empty.
    """
    if not sparse.entries:
        raise ValueError("sparse node set is empty")
    slots = {
        "metric": entry.key.value,
        "label": entry.cognitive_label,
        "topic": blindspot_topic,
        "nodes": [[e.id, e.preview] for e in sparse.entries],
    }
    nodes_text = _node_lines(sparse)
    collected: List[str] = []
    for attempt, template_id in enumerate(("question_gen", "question_gen_retry"), 1):
        prompt = templates.render(template_id, topic=blindspot_topic, metric=entry.key.value,
                                  label=entry.cognitive_label, nodes=nodes_text)
        reply = chat.chat(ChatRequest(prompt, 0.0, template_id, {**slots, "attempt": attempt},
                                      role="question"))
        for q in parse_questions(reply):
            if q not in collected:
                collected.append(q)
        if len(collected) >= QUESTIONS_PER_METRIC:
            break
        if events and attempt == 1:
            events("question_reprompt", {"metric": entry.key.value, "valid": len(collected)})
    if not collected:
        log.warning("no valid questions for metric %s", entry.key.value)
        if events:
            events("question_generation_failed", {"metric": entry.key.value})
    targets = tuple(sparse.ids)
    return [EnrichmentQuestion(entry.key, q, targets) for q in collected[:QUESTIONS_PER_METRIC]]


_FRAMES: Dict[str, Sequence[str]] = {
    "Clique": ("What fact links {s} and {s2}?",
               "What else is directly related to both {s} and {t}?",
               "Which other facts involve {s}?"),
    "NonClique": ("How is {s} related to {t}?",
                  "What background connects {s} to other known facts?",
                  "Why is {s} relevant?"),
    "Clustering": ("What other events or entities share a connection with {s}?",
                   "Which people, places or things are associated with {s}?",
                   "Is {s} related to any other topics connected with {t}?"),
    "Degree": ("What are the most widely reported facts about {s}?",
               "What is {s} best known for?",
               "Where is {s} commonly mentioned?"),
    "Betweenness": ("What is the connection between {s} and {s2}?",
                    "Which intermediate fact connects {s} to {t}?",
                    "What links {s} with other subjects?"),
    "Diameter": ("What is the timeline of events involving {s}?",
                 "What happened before and after {s}?",
                 "How does {s} fit into the overall picture of {t}?"),
    "Louvain": ("How does {s} relate to other aspects of {t}?",
                "What do {s} and {s2} have in common?",
                "Which fields or communities does {s} belong to?"),
}
_GENERIC_FRAMES = ("What recent facts are reported about {s}?",
                   "Which sources describe {s}?")
_QUESTION_LEAD = frozenset(
    "what which who whom whose when where why how is are was were do does did can could "
    "causes cause".split())


def topic_phrase(query: str) -> str:
    """The query with its trailing "?" and leading interrogative words removed."""
    words = query.strip().rstrip("?").split()
    while len(words) > 1 and words[0].lower() in _QUESTION_LEAD:
        words = words[1:]
    return " ".join(words)


def _subject(preview: str) -> str:
    ents = extract_entities(preview)
    if ents:
        return ents[0]
    words = preview.split()
    return " ".join(words[:6]).rstrip(".,;:!?") or preview


def offline_question_handler(slots: Mapping[str, Any]) -> str:
    """Deterministic stand-in for the question-generation model."""
    topic = topic_phrase(str(slots["topic"]))
    frames = list(_FRAMES.get(slots["metric"], ())) + list(_GENERIC_FRAMES)
    subjects: List[str] = []
    for _, preview in slots["nodes"]:
        s = _subject(preview)
        if s and s not in subjects:
            subjects.append(s)
    # frame-major order spreads the five questions over several flagged nodes
    lines: List[str] = []
    for frame in frames:
        for i, s in enumerate(subjects):
            s2 = subjects[(i + 1) % len(subjects)] if len(subjects) > 1 else topic
            q = frame.format(s=s, s2=s2, t=topic)
            if q not in lines:
                lines.append(q)
    return "Here are five questions:\n" + "\n".join(lines[:QUESTIONS_PER_METRIC])


# ---------------------------------------------------------------------------
# answering

_SENT_RE = re.compile(r"(?<=[.!?])\s+")


_ABBREVIATIONS = frozenset("st dr mr mrs ms jr sr mt no vs etc inc ltd co".split())


def split_sentences(text: str) -> List[str]:
    out: List[str] = []
    for piece in _SENT_RE.split(text):
        piece = piece.strip()
        if not piece:
            continue
        if out:
            last = out[-1].rsplit(None, 1)[-1].rstrip(".").lower()
            # "St. George", "Benjamin O. Davis"
            if out[-1].endswith(".") and (last in _ABBREVIATIONS or len(last) == 1):
                out[-1] = f"{out[-1]} {piece}"
                continue
        out.append(piece)
    return out


NO_CONTEXT_ANSWER = "I could not find supporting information."


def extractive_answer(query: str, chunks: Sequence[str]) -> str:
    """Sentence with the largest content-token overlap with the query.

    Ties go to the earlier chunk, then the earlier sentence.
    """
    qtok = set(content_tokens(query))
    best, best_score = None, 0
    for chunk in chunks:
        for sent in split_sentences(chunk):
            score = len(qtok & set(content_tokens(sent)))
            if score > best_score:
                best, best_score = sent, score
    return best if best is not None else NO_CONTEXT_ANSWER


def offline_answer_handler(slots: Mapping[str, Any]) -> str:
    return extractive_answer(slots["query"], slots["chunks"])


def answer(
    chat,
    graph: KnowledgeGraph,
    index: VectorIndex,
    embedder,
    query: str,
    phase: Phase,
    templates: Templates = DEFAULT_TEMPLATES,
    k: int = CONTEXT_CHUNKS,
) -> AnswerRecord:
    if not query or not query.strip():
        raise ValueError("query must be non-empty")
    phase = Phase(phase)
    hits = top_k(index, embedder.embed(query), k) if len(index) else []
    ids = [nid for nid, _ in hits if nid in graph]
    texts = [graph.node(nid).text for nid in ids]
    context = "\n\n".join(f"[{i}] {t}" for i, t in enumerate(texts, 1)) or "(no context)"
    prompt = templates.render("answer", query=query, context=context)
    reply = chat.chat(ChatRequest(prompt, 0.0, "answer", {"query": query, "chunks": texts},
                                  role="answer"))
    return AnswerRecord(query, reply.strip(), phase, ids, empty_index=not ids)


# ---------------------------------------------------------------------------
# judging

_ARTICLES_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> List[str]:
    text = text.lower().translate(_PUNCT_TABLE)
    return _ARTICLES_RE.sub(" ", text).split()


def token_f1(prediction: str, reference: str) -> float:
    pred, ref = normalize_answer(prediction), normalize_answer(reference)
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    common = sum((Counter(pred) & Counter(ref)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred)
    recall = common / len(ref)
    return 2 * precision * recall / (precision + recall)


_VERDICT_RE = re.compile(r"^\s*VERDICT:\s*(IMPROVED|UNCHANGED|DEGRADED)\b(.*)$",
                         re.IGNORECASE | re.MULTILINE)


def parse_verdict(text: str) -> Verdict:
    m = _VERDICT_RE.search(text)
    if not m:
        raise UnparseableVerdict(text[:200])
    rationale = (m.group(2) + text[m.end():]).strip()
    return Verdict(Outcome(m.group(1).capitalize()), rationale)


def judge(
    chat,
    query: str,
    before: AnswerRecord,
    after: AnswerRecord,
    reference: Optional[str] = None,
    graph: Optional[KnowledgeGraph] = None,
    deadband: float = DEFAULT_F1_DEADBAND,
    templates: Templates = DEFAULT_TEMPLATES,
) -> Verdict:
    if before.phase is not Phase.BEFORE or after.phase is not Phase.AFTER:
        raise ValueError("expected a Before record and an After record")
    if before.question != after.question:
        raise ValueError("records answer different questions")
    if getattr(chat, "mode", "offline") == "live":
        ref_line = f"Reference answer: {reference}\n" if reference else ""
        prompt = templates.render("judge", query=query, reference=ref_line,
                                  before=before.answer, after=after.answer)
        reply = chat.chat(ChatRequest(prompt, 0.0, "judge",
                                      {"query": query, "before": before.answer,
                                       "after": after.answer, "reference": reference},
                                      role="judge"))
        return parse_verdict(reply)
    if reference is not None:
        f1_before = token_f1(before.answer, reference)
        f1_after = token_f1(after.answer, reference)
        delta = f1_after - f1_before
        why = f"token-F1 {f1_before:.3f} -> {f1_after:.3f}"
        if delta > deadband:
            return Verdict(Outcome.IMPROVED, why)
        if delta < -deadband:
            return Verdict(Outcome.DEGRADED, why)
        return Verdict(Outcome.UNCHANGED, why)
    if before.answer == after.answer:
        return Verdict(Outcome.UNCHANGED, "identical answers")
    seen = set(before.context_chunks)
    fresh = [
        nid for nid in after.context_chunks
        if nid not in seen and graph is not None and nid in graph
        and graph.node(nid).stage is Stage.ENRICHMENT
    ]
    if fresh:
        return Verdict(Outcome.IMPROVED, f"{len(fresh)} enrichment chunk(s) in context")
    return Verdict(Outcome.UNCHANGED, "no new enrichment context")


def offline_chat(script: Optional[Mapping[str, str]] = None) -> ScriptedChat:
    """Scripted chat wired with the deterministic question and answer handlers."""
    return ScriptedChat(script, {
        "question_gen": offline_question_handler,
        "question_gen_retry": offline_question_handler,
        "answer": offline_answer_handler,
    })
