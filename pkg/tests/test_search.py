import threading
import time

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiss.errors import FrozenCacheMiss, IoFailure, MalformedCacheFile, SearchUnavailable
from hiss.search import (
    DEFAULT_BANNED_KEYWORDS,
    HttpSearchConfig,
    HttpSearchEngine,
    SearchCache,
    SearchHit,
    cache_to_json,
    export_cache,
    filter_fact_check,
    import_cache,
    is_fact_check_url,
    normalize_query,
    normalize_url,
    retrieve_evidence,
    search,
    select_top_snippet,
)


class StubEngine:
    def __init__(self, hits=None):
        self.hits = hits or [SearchHit("https://a.org/x", "A", "alpha")]
        self.calls = []

    def search(self, query):
        self.calls.append(query)
        return list(self.hits)


def hit(url, snippet="s"):
    return SearchHit(url, "", snippet)


def test_hit_requires_url():
    with pytest.raises(ValueError):
        SearchHit("not a url", "", "")


def test_normalize_query():
    assert normalize_query("  What   IS\tthis? ") == "what is this?"


def test_cached_query_no_network():
    engine = StubEngine()
    cache = SearchCache({"q": [hit("https://b.org")]})
    assert search("Q ", cache, engine) == [hit("https://b.org")]
    assert engine.calls == []


def test_frozen_miss():
    with pytest.raises(FrozenCacheMiss):
        search("unseen", SearchCache(frozen=True), StubEngine())


def test_unfrozen_miss_without_engine():
    with pytest.raises(SearchUnavailable):
        search("unseen", SearchCache(), None)


def test_live_miss_is_stored():
    engine = StubEngine()
    cache = SearchCache()
    first = search("new query", cache, engine)
    second = search("new   QUERY", cache, engine)
    assert first == second and len(engine.calls) == 1


def test_empty_query():
    with pytest.raises(ValueError):
        search("  ", SearchCache(), StubEngine())


def test_concurrent_misses_fetch_once():
    class Slow(StubEngine):
        def search(self, query):
            time.sleep(0.05)
            return super().search(query)

    engine, cache = Slow(), SearchCache()
    threads = [threading.Thread(target=search, args=("same", cache, engine)) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(engine.calls) == 1


@pytest.mark.parametrize("url", [
    "https://www.nytimes.com/spotlight/fact-checks",
    "https://www.politifact.com/factchecks/2016/feb/23/x/",
    "https://example.org/Fact%20Check/item",
    "https://example.org/fact_checking/",
    "https://www.snopes.com/fact-check/x/",
])
def test_fact_check_urls_removed(url):
    assert is_fact_check_url(url)
    assert filter_fact_check([hit(url)]) == []


def test_normalization_oracle():
    url = "https://www.politifact.com/factchecks/2016/"
    # hand-normalized: lowercase, separators removed
    assert normalize_url(url) == "https://www.politifact.com/factchecks/2016/"
    assert "factcheck" in normalize_url(url)
    assert normalize_url("https://x.org/Fact-Check_ing%20A") == "https://x.org/factcheckinga"


def test_plain_url_kept_and_order_preserved():
    hits = [hit("https://www.cbo.gov/topics/defense"), hit("https://x.org/fact-check"), hit("https://usda.gov/a")]
    assert [h.url for h in filter_fact_check(hits)] == ["https://www.cbo.gov/topics/defense", "https://usda.gov/a"]


def test_custom_keywords():
    assert filter_fact_check([hit("https://x.org/rumor")], keywords=["rumor"]) == []


def test_top_snippet_skips_empty():
    ev = select_top_snippet([hit("https://a.org", ""), hit("https://b.org", "Federal spending on USDA")], "q")
    assert ev.text == "Federal spending on USDA" and ev.source_url == "https://b.org" and ev.query == "q"


def test_top_snippet_none():
    assert select_top_snippet([], "q") is None


def test_top_snippet_length_cap():
    ev = select_top_snippet([hit("https://a.org", "x" * 1000)], "q", max_chars=100)
    assert len(ev.text) == 100


def test_spending_snippet(spending_cache):
    import fixture_builder as fb
    ev = retrieve_evidence(fb.SPENDING_Q2, spending_cache)
    assert ev.text.startswith("Federal spending on USDA's food and nutrition assistance programs")
    assert "politifact" not in ev.source_url


def test_cache_round_trip_empty(tmp_path):
    p = export_cache(SearchCache(), tmp_path / "c.json")
    assert import_cache(p) == SearchCache()


def test_cache_round_trip_three_entries(tmp_path):
    c = SearchCache({
        "b": [hit("https://b.org/1", "one"), hit("https://b.org/2", "two")],
        "a": [hit("https://a.org", "")],
        "c": [],
    })
    p = export_cache(c, tmp_path / "c.json")
    again = import_cache(p)
    assert again == c
    assert [h.url for h in again.get("b")] == ["https://b.org/1", "https://b.org/2"]
    assert cache_to_json(again) == p.read_text(encoding="utf-8")


def test_cache_truncated_file(tmp_path):
    p = export_cache(SearchCache({"a": [hit("https://a.org")]}), tmp_path / "c.json")
    p.write_text(p.read_text()[:20])
    with pytest.raises(MalformedCacheFile):
        import_cache(p)


def test_cache_missing_file(tmp_path):
    with pytest.raises(IoFailure):
        import_cache(tmp_path / "absent.json")


def test_cache_unwritable(tmp_path):
    with pytest.raises(IoFailure):
        export_cache(SearchCache(), tmp_path / "no" / "such" / "dir.json")


def test_http_engine_parses_results():
    def handler(request):
        assert request.url.params["q"] == "who?"
        return httpx.Response(200, json={"organic_results": [
            {"link": "https://a.org", "title": "A", "snippet": "alpha"},
            {"title": "no link"},
            {"link": "bad", "snippet": "x"},
        ]})

    engine = HttpSearchEngine(HttpSearchConfig(), api_key="k",
                              client=httpx.Client(transport=httpx.MockTransport(handler)))
    assert engine.search("who?") == [SearchHit("https://a.org", "A", "alpha")]


def test_http_engine_failure():
    engine = HttpSearchEngine(HttpSearchConfig(), api_key="k",
                              client=httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(503))))
    with pytest.raises(SearchUnavailable):
        engine.search("q")


def test_http_engine_needs_key(monkeypatch):
    monkeypatch.delenv("HISS_SEARCH_API_KEY", raising=False)
    with pytest.raises(SearchUnavailable):
        HttpSearchEngine()


segments = st.lists(st.sampled_from(
    ["fact", "Fact", "check", "CHECK", "checks", "ing", "-", "_", "%20", "+", "/", "news", "a", "2020", ".", "x"]),
    min_size=0, max_size=12)


@settings(max_examples=300, deadline=None)
@given(segments)
def test_no_survivor_contains_keyword(parts):
    url = "https://site.org/" + "".join(parts)
    survivors = filter_fact_check([hit(url)])
    for h in survivors:
        squashed = normalize_url(h.url)
        assert not any(normalize_url(k) in squashed for k in DEFAULT_BANNED_KEYWORDS)


@settings(max_examples=100, deadline=None)
@given(st.lists(segments, max_size=6))
def test_filter_idempotent(many):
    hits = [hit("https://s.org/" + "".join(p)) for p in many]
    once = filter_fact_check(hits)
    assert filter_fact_check(once) == once


@given(st.text(max_size=40))
def test_normalize_query_idempotent(q):
    assert normalize_query(normalize_query(q)) == normalize_query(q)
