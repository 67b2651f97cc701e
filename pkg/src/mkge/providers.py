"""Chat, search and embedding providers.

Each capability has an offline implementation that is a pure function of its
inputs and fixture files, and a live adapter speaking plain HTTP. Live adapters
refuse to touch the network while ``MKGE_OFFLINE_ONLY`` is set (the test suite
sets it).
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, List, Mapping, Optional, Sequence

import httpx
import numpy as np

log = logging.getLogger(__name__)

OFFLINE_ONLY_ENV = "MKGE_OFFLINE_ONLY"
CHAT_KEY_ENV = "MKGE_CHAT_API_KEY"
SEARCH_KEY_ENV = "MKGE_SEARCH_API_KEY"
EMBED_KEY_ENV = "MKGE_EMBED_API_KEY"

RETRY_DELAYS = (0.5, 2.0)
DEFAULT_DIMENSION = 256

STOPWORDS = frozenset(
    """a an and are as at be by did do does for from had has have how in is it its
    of on or that the this to was were what when where which who whom whose why
    with would can could will any other about into than then there these those""".split()
)

_TOKEN_RE = re.compile(r"[^0-9a-z]+")


class ProviderError(Exception):
    pass


class ProviderUnavailable(ProviderError):
    pass


class ResponseMalformed(ProviderError):
    pass


def tokenize(text: str) -> List[str]:
    """Lowercase and split on non-alphanumerics."""
    return [t for t in _TOKEN_RE.split(text.lower()) if t]


def content_tokens(text: str) -> List[str]:
    return [t for t in tokenize(text) if t not in STOPWORDS]


def live_network_allowed() -> bool:
    return not os.environ.get(OFFLINE_ONLY_ENV)


class CallCounter:
    """Thread-safe call tally, one per provider instance."""

    def __init__(self) -> None:
        self._n = 0
        self._lock = threading.Lock()

    def increment(self) -> int:
        with self._lock:
            self._n += 1
            return self._n

    @property
    def value(self) -> int:
        return self._n


# ---------------------------------------------------------------------------
# chat

@dataclass(frozen=True)
class ChatRequest:
    prompt: str
    temperature: float = 0.0
    template_id: str = ""
    slots: Mapping[str, Any] = field(default_factory=dict)
    role: str = "answer"  # which configured model answers: question | answer | judge

    def __post_init__(self):
        if not self.prompt or not self.prompt.strip():
            raise ValueError("chat prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def fingerprint(self) -> str:
        payload = json.dumps({"template": self.template_id, "slots": self.slots},
                             sort_keys=True, ensure_ascii=False, default=str)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:20]


class ScriptedChat:
    """Deterministic offline chat model.

    Responses are looked up by request fingerprint in ``script`` first, then
    produced by the handler registered for the request's template id.
    """

    mode = "offline"

    def __init__(
        self,
        script: Optional[Mapping[str, str]] = None,
        handlers: Optional[Mapping[str, Callable[[Mapping[str, Any]], str]]] = None,
    ) -> None:
        self.script = dict(script or {})
        self.handlers = dict(handlers or {})
        self.counter = CallCounter()

    @classmethod
    def from_file(cls, path, handlers=None) -> "ScriptedChat":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh), handlers)

    def chat(self, request: ChatRequest) -> str:
        self.counter.increment()
        fp = request.fingerprint()
        if fp in self.script:
            return self.script[fp]
        handler = self.handlers.get(request.template_id)
        if handler is None:
            raise ResponseMalformed(
                f"no scripted response for template {request.template_id!r} ({fp})")
        return handler(request.slots)


# ---------------------------------------------------------------------------
# search

@dataclass(frozen=True)
class SearchResult:
    rank: int
    title: str
    url: str
    content: str


class FixtureSearch:
    """Ranks a bundled corpus by distinct content-token overlap with the query."""

    mode = "offline"

    def __init__(self, docs: Iterable[Mapping[str, str]]) -> None:
        self.docs = sorted(
            ({"id": str(d["id"]), "title": d.get("title", ""), "url": d.get("url", ""),
              "content": d["content"]} for d in docs),
            key=lambda d: d["id"],
        )
        self._tokens = [set(content_tokens(d["title"] + " " + d["content"])) for d in self.docs]
        self.counter = CallCounter()

    @classmethod
    def from_jsonl(cls, path) -> "FixtureSearch":
        docs = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    docs.append(json.loads(line))
        return cls(docs)

    def score(self, query: str, doc_index: int) -> int:
        return len(set(content_tokens(query)) & self._tokens[doc_index])

    def search(self, query: str, max_results: int = 3) -> List[SearchResult]:
        if not query or not query.strip():
            raise ValueError("search query must be non-empty")
        if max_results < 1:
            raise ValueError("max_results must be >= 1")
        self.counter.increment()
        scored = [(self.score(query, i), d) for i, d in enumerate(self.docs)]
        scored = [(s, d) for s, d in scored if s > 0]
        scored.sort(key=lambda sd: (-sd[0], sd[1]["id"]))
        return [SearchResult(r, d["title"], d["url"], d["content"])
                for r, (_, d) in enumerate(scored[:max_results], 1)]


# ---------------------------------------------------------------------------
# embeddings

def token_bucket(token: str, dimension: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dimension


class HashingEmbedder:
    """Feature-hashed bag of tokens, L2-normalized."""

    mode = "offline"

    def __init__(self, dimension: int = DEFAULT_DIMENSION) -> None:
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.dimension = dimension
        self.counter = CallCounter()

    def embed(self, text: str) -> np.ndarray:
        self.counter.increment()
        vec = np.zeros(self.dimension, dtype=np.float64)
        for tok in tokenize(text):
            vec[token_bucket(tok, self.dimension)] += 1.0
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


# ---------------------------------------------------------------------------
# live adapters

class _HttpAdapter:
    mode = "live"

    def __init__(self, endpoint: str, api_key: str, *, client: Optional[httpx.Client] = None,
                 timeout: float = 30.0, sleep: Callable[[float], None] = time.sleep,
                 retry_delays: Sequence[float] = RETRY_DELAYS) -> None:
        if not endpoint:
            raise ValueError("endpoint is required for live providers")
        self.endpoint = endpoint
        self.api_key = api_key
        self._client = client
        self.timeout = timeout
        self.sleep = sleep
        self.retry_delays = tuple(retry_delays)
        self.counter = CallCounter()

    def _http(self) -> httpx.Client:
        if self._client is None:
            if not live_network_allowed():
                raise ProviderUnavailable(f"live network disabled ({OFFLINE_ONLY_ENV} is set)")
            self._client = httpx.Client(timeout=self.timeout)
        return self._client

    def _post(self, payload: dict) -> Any:
        client = self._http()
        headers = {"Authorization": f"Bearer {self.api_key}"}
        last: Optional[str] = None
        for attempt in range(len(self.retry_delays) + 1):
            if attempt:
                self.sleep(self.retry_delays[attempt - 1])
            try:
                resp = client.post(self.endpoint, json=payload, headers=headers)
            except httpx.HTTPError as exc:
                last = f"{type(exc).__name__}: {exc}"
                continue
            if resp.status_code in (401, 403):
                raise ProviderUnavailable(f"authentication rejected ({resp.status_code})")
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise ProviderUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise ResponseMalformed(f"invalid JSON: {exc}") from None
        raise ProviderUnavailable(f"gave up after {len(self.retry_delays) + 1} attempts: {last}")


class LiveChat(_HttpAdapter):
    """OpenAI-style chat-completions endpoint."""

    def __init__(self, endpoint: str, api_key: str, models: Mapping[str, str], **kw) -> None:
        super().__init__(endpoint, api_key, **kw)
        self.models = dict(models)

    def chat(self, request: ChatRequest) -> str:
        self.counter.increment()
        model = self.models.get(request.role) or self.models.get("answer")
        data = self._post({
            "model": model,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": request.prompt}],
        })
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise ResponseMalformed("missing choices[0].message.content") from None


class LiveSearch(_HttpAdapter):
    def __init__(self, endpoint: str, api_key: str, fields: Optional[Mapping[str, str]] = None, **kw):
        super().__init__(endpoint, api_key, **kw)
        self.fields = {"results": "results", "title": "title", "url": "url", "content": "content"}
        self.fields.update(fields or {})

    def search(self, query: str, max_results: int = 3) -> List[SearchResult]:
        if not query or not query.strip():
            raise ValueError("search query must be non-empty")
        if max_results < 1:
            raise ValueError("max_results must be >= 1")
        self.counter.increment()
        data = self._post({"query": query, "max_results": max_results})
        f = self.fields
        try:
            raw = data[f["results"]]
            results = [SearchResult(i, str(r.get(f["title"], "")), str(r.get(f["url"], "")),
                                    str(r.get(f["content"], "")))
                       for i, r in enumerate(raw[:max_results], 1)]
        except (KeyError, TypeError, AttributeError):
            raise ResponseMalformed(f"missing {f['results']!r} list") from None
        return results


class LiveEmbedder(_HttpAdapter):
    """OpenAI-style embeddings endpoint; vectors are re-normalized locally."""

    def __init__(self, endpoint: str, api_key: str, model: str = "all-MiniLM-L6-v2", **kw):
        super().__init__(endpoint, api_key, **kw)
        self.model = model
        self.dimension: Optional[int] = None

    def embed(self, text: str) -> np.ndarray:
        self.counter.increment()
        data = self._post({"model": self.model, "input": text})
        try:
            vec = np.asarray(data["data"][0]["embedding"], dtype=np.float64)
        except (KeyError, IndexError, TypeError, ValueError):
            raise ResponseMalformed("missing data[0].embedding") from None
        self.dimension = vec.shape[0]
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec
