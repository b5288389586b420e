"""Web-search evidence: query, fact-check filtering, top snippet, frozen cache."""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence
from urllib.parse import urlparse

import httpx

from .errors import FrozenCacheMiss, IoFailure, MalformedCacheFile, SearchUnavailable
from .model import EvidenceSnippet

log = logging.getLogger(__name__)

DEFAULT_BANNED_KEYWORDS = ("fact check", "fact-check", "factcheck", "fact-checking", "factchecking")
MAX_SNIPPET_CHARS = 600
DEFAULT_FETCH_DEPTH = 10

# separators dropped from URLs before keyword matching
_URL_SEPARATORS = ("%20", "-", "_", "+", " ")


@dataclass(frozen=True)
class SearchHit:
    url: str
    title: str
    snippet: str

    def __post_init__(self) -> None:
        parsed = urlparse(self.url)
        if not (parsed.scheme and parsed.netloc):
            raise ValueError(f"not a URL: {self.url!r}")

    def to_dict(self) -> dict[str, str]:
        return {"url": self.url, "title": self.title, "snippet": self.snippet}


def normalize_query(query: str) -> str:
    """Cache key for a query: trimmed, whitespace collapsed, lowercased."""
    return " ".join(query.split()).lower()


def normalize_url(url: str) -> str:
    out = url.lower()
    for sep in _URL_SEPARATORS:
        out = out.replace(sep, "")
    return out


def is_fact_check_url(url: str, keywords: Iterable[str] = DEFAULT_BANNED_KEYWORDS) -> bool:
    lowered = url.lower()
    squashed = normalize_url(url)
    for kw in keywords:
        kw = kw.lower()
        if kw in lowered or normalize_url(kw) in squashed:
            return True
    return False


def filter_fact_check(hits: Sequence[SearchHit],
                      keywords: Iterable[str] = DEFAULT_BANNED_KEYWORDS) -> list[SearchHit]:
    """Drop hits from fact-checking pages, keeping the order of the rest."""
    keywords = tuple(keywords)
    return [h for h in hits if not is_fact_check_url(h.url, keywords)]


def select_top_snippet(hits: Sequence[SearchHit], query: str,
                       max_chars: int = MAX_SNIPPET_CHARS) -> EvidenceSnippet | None:
    """First hit with a non-empty snippet, or None when there is no evidence."""
    for hit in hits:
        text = hit.snippet.strip()
        if text:
            return EvidenceSnippet(text[:max_chars].rstrip(), hit.url, query)
    return None


class SearchEngine(Protocol):
    def search(self, query: str) -> list[SearchHit]: ...


class SearchCache:
    """Normalized-query -> hits map.

    Reads are concurrent; a miss being fetched blocks other lookups of the
    same key so concurrent batch workers never query the engine twice.
    """

    def __init__(self, entries: Mapping[str, Sequence[SearchHit]] | None = None, frozen: bool = False):
        self.entries: dict[str, list[SearchHit]] = {}
        for key, hits in (entries or {}).items():
            self.entries[normalize_query(key)] = list(hits)
        self.frozen = frozen
        self._lock = threading.Lock()
        self._inflight: dict[str, threading.Lock] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, query: str) -> bool:
        return normalize_query(query) in self.entries

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SearchCache):
            return NotImplemented
        # the frozen flag is a runtime mode, not content
        return self.entries == other.entries

    def get(self, query: str) -> list[SearchHit] | None:
        hits = self.entries.get(normalize_query(query))
        return list(hits) if hits is not None else None

    def put(self, query: str, hits: Sequence[SearchHit]) -> None:
        with self._lock:
            self.entries[normalize_query(query)] = list(hits)

    def get_or_fetch(self, query: str, engine: SearchEngine | None) -> list[SearchHit]:
        key = normalize_query(query)
        hits = self.entries.get(key)
        if hits is not None:
            return list(hits)
        if self.frozen:
            raise FrozenCacheMiss(f"query not in frozen cache: {key!r}")
        if engine is None:
            raise SearchUnavailable(f"cache miss for {key!r} and no search engine configured")
        with self._lock:
            key_lock = self._inflight.setdefault(key, threading.Lock())
        with key_lock:
            hits = self.entries.get(key)
            if hits is None:
                hits = list(engine.search(query))
                self.put(key, hits)
        return list(hits)


def search(query: str, cache: SearchCache, engine: SearchEngine | None = None) -> list[SearchHit]:
    """Hits for ``query``; the engine is consulted only on a miss in an unfrozen cache."""
    if not query.strip():
        raise ValueError("query is empty")
    return cache.get_or_fetch(query, engine)


def retrieve_evidence(query: str, cache: SearchCache, engine: SearchEngine | None = None,
                      keywords: Iterable[str] = DEFAULT_BANNED_KEYWORDS,
                      max_chars: int = MAX_SNIPPET_CHARS) -> EvidenceSnippet | None:
    """search -> filter_fact_check -> select_top_snippet."""
    hits = filter_fact_check(search(query, cache, engine), keywords)
    return select_top_snippet(hits, query, max_chars)


# --------------------------------------------------------------------------
# persistence


def cache_to_json(cache: SearchCache) -> str:
    data = {key: [h.to_dict() for h in hits] for key, hits in cache.entries.items()}
    return json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def export_cache(cache: SearchCache, path: str | Path) -> Path:
    path = Path(path)
    try:
        path.write_text(cache_to_json(cache), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write cache {path}: {exc}") from exc
    return path


def _parse_cache(data: Any) -> dict[str, list[SearchHit]]:
    if not isinstance(data, dict):
        raise MalformedCacheFile("cache file must hold a JSON object")
    entries: dict[str, list[SearchHit]] = {}
    for key, hits in data.items():
        if not isinstance(hits, list):
            raise MalformedCacheFile(f"entry {key!r} is not a list")
        parsed = []
        for h in hits:
            try:
                parsed.append(SearchHit(h["url"], h.get("title", ""), h.get("snippet", "")))
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedCacheFile(f"bad hit under {key!r}: {exc}") from exc
        entries[key] = parsed
    return entries


def import_cache(path: str | Path, frozen: bool = False) -> SearchCache:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read cache {path}: {exc}") from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedCacheFile(f"{path}: {exc}") from exc
    return SearchCache(_parse_cache(data), frozen=frozen)


# --------------------------------------------------------------------------
# live engine


@dataclass
class HttpSearchConfig:
    endpoint: str = "https://serpapi.com/search.json"
    api_key_env: str = "HISS_SEARCH_API_KEY"
    api_key_param: str = "api_key"
    query_param: str = "q"
    depth_param: str = "num"
    results_field: str = "organic_results"
    fetch_depth: int = DEFAULT_FETCH_DEPTH
    timeout_s: float = 30.0
    extra_params: dict[str, str] | None = None

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "HttpSearchConfig":
        fields = cls.__dataclass_fields__
        return cls(**{k: v for k, v in data.items() if k in fields})


class HttpSearchEngine:
    """Any JSON search API returning a list of url/title/snippet records."""

    def __init__(self, config: HttpSearchConfig | None = None, *, api_key: str | None = None,
                 client: httpx.Client | None = None):
        self.config = config or HttpSearchConfig()
        self.api_key = api_key if api_key is not None else os.environ.get(self.config.api_key_env)
        if not self.api_key:
            raise SearchUnavailable(f"no search API key: set ${self.config.api_key_env}")
        self._client = client or httpx.Client(timeout=self.config.timeout_s)

    def search(self, query: str) -> list[SearchHit]:
        cfg = self.config
        params = {cfg.query_param: query, cfg.api_key_param: self.api_key,
                  cfg.depth_param: str(cfg.fetch_depth), **(cfg.extra_params or {})}
        try:
            resp = self._client.get(cfg.endpoint, params=params)
            resp.raise_for_status()
            body = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise SearchUnavailable(f"search failed for {query!r}: {exc}") from exc
        return self.parse_results(body)[: cfg.fetch_depth]

    def parse_results(self, body: Mapping[str, Any]) -> list[SearchHit]:
        hits = []
        for rec in body.get(self.config.results_field, []) or []:
            url = rec.get("link") or rec.get("url")
            if not url:
                continue
            try:
                hits.append(SearchHit(url, rec.get("title", ""), rec.get("snippet", "") or ""))
            except ValueError:
                log.debug("skipping malformed search hit %r", rec)
        return hits
