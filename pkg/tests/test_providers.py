import json

import httpx
import numpy as np
import pytest

from mkge import providers as prov
from mkge.providers import (ChatRequest, FixtureSearch, HashingEmbedder, LiveChat, LiveEmbedder,
                            LiveSearch, ProviderUnavailable, ResponseMalformed, ScriptedChat)


def test_live_network_disabled_in_tests():
    assert not prov.live_network_allowed()


def test_tokenize():
    assert prov.tokenize("Monsoon-winds, REVERSE!") == ["monsoon", "winds", "reverse"]
    assert prov.content_tokens("why do the monsoon winds reverse") == ["monsoon", "winds", "reverse"]


def test_chat_request_validation():
    with pytest.raises(ValueError):
        ChatRequest("")
    with pytest.raises(ValueError):
        ChatRequest("hi", temperature=-0.1)


def test_fingerprint_ignores_prompt_wording():
    a = ChatRequest("Prompt v1", template_id="answer", slots={"query": "q"})
    b = ChatRequest("Prompt v2, reworded", template_id="answer", slots={"query": "q"})
    c = ChatRequest("Prompt v1", template_id="answer", slots={"query": "other"})
    assert a.fingerprint() == b.fingerprint() != c.fingerprint()


def test_scripted_chat_is_deterministic():
    req = ChatRequest("p", template_id="judge", slots={"x": 1})
    chat = ScriptedChat({req.fingerprint(): "VERDICT: IMPROVED"})
    assert chat.chat(req) == chat.chat(req) == "VERDICT: IMPROVED"
    assert chat.counter.value == 2


def test_scripted_chat_handler_and_miss():
    chat = ScriptedChat(handlers={"answer": lambda slots: slots["query"].upper()})
    assert chat.chat(ChatRequest("p", template_id="answer", slots={"query": "abc"})) == "ABC"
    with pytest.raises(ResponseMalformed):
        chat.chat(ChatRequest("p", template_id="unknown"))


def test_scripted_chat_from_file(tmp_path):
    req = ChatRequest("p", template_id="t", slots={})
    path = tmp_path / "script.json"
    path.write_text(json.dumps({req.fingerprint(): "hello"}))
    assert ScriptedChat.from_file(path).chat(req) == "hello"


def test_fixture_search_ranks_by_overlap():
    s = FixtureSearch([{"id": "d1", "content": "monsoon winds reverse"},
                       {"id": "d2", "content": "golf course"}])
    res = s.search("monsoon winds")
    assert [r.content for r in res] == ["monsoon winds reverse"]
    assert res[0].rank == 1
    assert s.search("quantum chromodynamics") == []


def test_fixture_search_ties_break_by_id():
    s = FixtureSearch([{"id": "b", "content": "tide pools"}, {"id": "a", "content": "tide charts"}])
    assert [r.content for r in s.search("tide")] == ["tide charts", "tide pools"]


def test_fixture_search_max_results():
    s = FixtureSearch([{"id": f"d{i}", "content": f"river {i}"} for i in range(10)])
    assert len(s.search("river", max_results=3)) == 3
    assert len(s.search("river", max_results=1)) == 1
    with pytest.raises(ValueError):
        s.search("river", max_results=0)
    with pytest.raises(ValueError):
        s.search("  ")


def test_embedding_basics():
    e = HashingEmbedder()
    assert not e.embed("").any()
    assert np.array_equal(e.embed("some text"), e.embed("some text"))
    assert np.linalg.norm(e.embed("a b c d")) == pytest.approx(1.0)


def test_embedding_cosines():
    # buckets at d=256 worked out with blake2b directly: alpha 154, beta 174, gamma 245, delta 230
    assert [prov.token_bucket(t, 256) for t in ("alpha", "beta", "gamma", "delta")] == [154, 174, 245, 230]
    e = HashingEmbedder(256)
    ab = e.embed("alpha beta")
    assert prov.cosine(ab, e.embed("alpha beta")) == pytest.approx(1.0)
    assert prov.cosine(ab, e.embed("gamma delta")) == 0.0


def _mock(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_live_adapter_invalid_key():
    client = _mock(lambda req: httpx.Response(401, json={"error": "bad key"}))
    chat = LiveChat("https://chat.invalid/v1", "wrong", {"answer": "m"}, client=client)
    with pytest.raises(ProviderUnavailable):
        chat.chat(ChatRequest("hello"))


def test_live_retries_then_succeeds():
    calls, naps = [], []

    def handler(req):
        calls.append(json.loads(req.content))
        if len(calls) < 3:
            return httpx.Response(503)
        return httpx.Response(200, json={"results": [
            {"title": "T", "url": "https://x.invalid/1", "content": "C1"},
            {"title": "T2", "url": "https://x.invalid/2", "content": "C2"}]})

    s = LiveSearch("https://search.invalid", "k", client=_mock(handler), sleep=naps.append)
    res = s.search("q", max_results=1)
    assert [r.content for r in res] == ["C1"]
    assert naps == [0.5, 2.0]
    assert calls[0] == {"query": "q", "max_results": 1}


def test_live_gives_up_after_two_retries():
    naps = []
    s = LiveSearch("https://search.invalid", "k", sleep=naps.append,
                   client=_mock(lambda req: httpx.Response(429)))
    with pytest.raises(ProviderUnavailable):
        s.search("q")
    assert naps == [0.5, 2.0]


def test_live_search_custom_fields_and_bearer():
    seen = {}

    def handler(req):
        seen["auth"] = req.headers["authorization"]
        return httpx.Response(200, json={"hits": [{"name": "N", "link": "L", "body": "B"}]})

    s = LiveSearch("https://search.invalid", "secret", client=_mock(handler),
                   fields={"results": "hits", "title": "name", "url": "link", "content": "body"})
    (r,) = s.search("q")
    assert (r.title, r.url, r.content) == ("N", "L", "B")
    assert seen["auth"] == "Bearer secret"


def test_live_embedder_normalizes():
    client = _mock(lambda req: httpx.Response(200, json={"data": [{"embedding": [3.0, 4.0]}]}))
    e = LiveEmbedder("https://embed.invalid", "k", client=client)
    assert e.embed("x").tolist() == [0.6, 0.8]


def test_live_malformed_response():
    client = _mock(lambda req: httpx.Response(200, json={"nothing": True}))
    with pytest.raises(ResponseMalformed):
        LiveChat("https://chat.invalid", "k", {"answer": "m"}, client=client).chat(ChatRequest("x"))


def test_live_without_client_refuses_network():
    chat = LiveChat("https://chat.invalid", "k", {"answer": "m"})
    with pytest.raises(ProviderUnavailable, match="MKGE_OFFLINE_ONLY"):
        chat.chat(ChatRequest("x"))
