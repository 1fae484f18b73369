"""Search backends and the per-tool registry used at execution time.

Live backends talk to arXiv (no key), GNews (``GNEWS_API_KEY``) and Serper
(``SERPER_API_KEY``, web and news modes). The mock backend is deterministic
and never touches the network.
"""

from __future__ import annotations

import hashlib
import logging
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import httpx

from .errors import AllBackendsFailed, AuthMissing, FetchError, FetchTimeout, HttpError
from .plan import ToolKind

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 10.0
DEFAULT_RETRIES = 1
DEFAULT_PARALLELISM = 4
SNIPPET_LIMIT = 600

ARXIV_URL = "http://export.arxiv.org/api/query"
GNEWS_URL = "https://gnews.io/api/v4/search"
SERPER_URL = "https://google.serper.dev"

_ATOM = {"a": "http://www.w3.org/2005/Atom"}


@dataclass(frozen=True)
class Passage:
    title: str
    snippet: str
    url: str
    source_tool: str
    rank: int

    def to_dict(self) -> dict:
        return {
            "title": self.title,
            "snippet": self.snippet,
            "url": self.url,
            "source_tool": self.source_tool,
            "rank": self.rank,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Passage:
        return cls(d["title"], d["snippet"], d.get("url", ""), d["source_tool"], d["rank"])


@dataclass(frozen=True)
class Hit:
    """Raw backend hit, before ranking and truncation."""

    title: str
    snippet: str
    url: str = ""


class Backend(Protocol):
    name: str

    def search(self, query: str, k: int, timeout: float) -> list[Hit]: ...


class MockBackend:
    """Deterministic offline backend: hit ``i`` depends only on (tool, query, i)."""

    def __init__(self, tool: str, empty: bool = False):
        self.tool = tool
        self.name = f"mock-{tool}"
        self.empty = empty

    def search(self, query: str, k: int, timeout: float) -> list[Hit]:
        if self.empty:
            return []
        hits = []
        for rank in range(1, k + 1):
            digest = hashlib.sha256(f"{self.tool}|{query}|{rank}".encode()).hexdigest()[:16]
            hits.append(
                Hit(
                    title=f"mock:{self.tool}:{query}:{rank}",
                    snippet=f"Mock {self.tool} passage {rank} for '{query}' [{digest}]",
                    url=f"mock://{self.tool}/{digest}",
                )
            )
        return hits


class _HttpBackend:
    name = "http"

    def __init__(self, client: httpx.Client | None = None):
        self.client = client

    def _request(self, method: str, url: str, timeout: float, **kwargs) -> httpx.Response:
        try:
            if self.client is not None:
                resp = self.client.request(method, url, timeout=timeout, **kwargs)
            else:
                with httpx.Client(timeout=timeout) as client:
                    resp = client.request(method, url, **kwargs)
        except httpx.TimeoutException as exc:
            raise FetchTimeout(f"{self.name}: timed out after {timeout:g}s") from exc
        except httpx.HTTPError as exc:
            raise FetchError(f"{self.name}: {type(exc).__name__}") from exc
        if resp.status_code >= 400:
            raise HttpError(resp.status_code, f"{self.name}: HTTP {resp.status_code}")
        return resp


class ArxivBackend(_HttpBackend):
    name = "arxiv"

    def __init__(self, url: str = ARXIV_URL, client: httpx.Client | None = None):
        super().__init__(client)
        self.url = url

    def search(self, query: str, k: int, timeout: float) -> list[Hit]:
        resp = self._request(
            "GET",
            self.url,
            timeout,
            params={"search_query": f"all:{query}", "start": 0, "max_results": k},
        )
        try:
            root = ET.fromstring(resp.text)
        except ET.ParseError as exc:
            raise FetchError("arxiv: malformed Atom response") from exc
        hits = []
        for entry in root.findall("a:entry", _ATOM):
            title = " ".join((entry.findtext("a:title", "", _ATOM)).split())
            summary = " ".join((entry.findtext("a:summary", "", _ATOM)).split())
            url = entry.findtext("a:id", "", _ATOM).strip()
            hits.append(Hit(title, summary, url))
        return hits


class GNewsBackend(_HttpBackend):
    name = "gnews"

    def __init__(self, api_key: str | None = None, url: str = GNEWS_URL,
                 client: httpx.Client | None = None):
        super().__init__(client)
        self.api_key = api_key
        self.url = url

    def search(self, query: str, k: int, timeout: float) -> list[Hit]:
        key = self.api_key or os.environ.get("GNEWS_API_KEY")
        if not key:
            raise AuthMissing("gnews: GNEWS_API_KEY is not set")
        resp = self._request(
            "GET", self.url, timeout, params={"q": query, "max": k, "apikey": key}
        )
        articles = resp.json().get("articles") or []
        return [
            Hit(a.get("title", ""), a.get("description") or a.get("content") or "",
                a.get("url", ""))
            for a in articles
        ]


class SerperBackend(_HttpBackend):
    """Serper Google search; ``mode`` is ``"search"`` (web) or ``"news"``."""

    def __init__(self, mode: str = "search", api_key: str | None = None,
                 url: str = SERPER_URL, client: httpx.Client | None = None):
        super().__init__(client)
        if mode not in ("search", "news"):
            raise ValueError(f"unknown serper mode {mode!r}")
        self.mode = mode
        self.name = f"serper-{mode}"
        self.api_key = api_key
        self.url = url.rstrip("/")

    def search(self, query: str, k: int, timeout: float) -> list[Hit]:
        key = self.api_key or os.environ.get("SERPER_API_KEY")
        if not key:
            raise AuthMissing("serper: SERPER_API_KEY is not set")
        resp = self._request(
            "POST",
            f"{self.url}/{self.mode}",
            timeout,
            json={"q": query, "num": k},
            headers={"X-API-KEY": key, "Content-Type": "application/json"},
        )
        items = resp.json().get("news" if self.mode == "news" else "organic") or []
        return [Hit(i.get("title", ""), i.get("snippet", ""), i.get("link", "")) for i in items]


@dataclass(frozen=True)
class BackendRegistry:
    """Per-tool backend chains; the first entry of each chain is the primary."""

    backends: Mapping[ToolKind, Sequence[Backend]]
    timeout: float = DEFAULT_TIMEOUT
    retries: int = DEFAULT_RETRIES
    parallelism: int = DEFAULT_PARALLELISM
    snippet_limit: int = SNIPPET_LIMIT

    def __post_init__(self):
        for tool in ToolKind:
            if not self.backends.get(tool):
                raise ValueError(f"no backend registered for {tool.value}")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")

    @classmethod
    def mock(cls, **kwargs) -> BackendRegistry:
        return cls({t: (MockBackend(t.value),) for t in ToolKind}, **kwargs)

    @classmethod
    def live(cls, client: httpx.Client | None = None, **kwargs) -> BackendRegistry:
        return cls(
            {
                ToolKind.NEWS: (GNewsBackend(client=client),
                                SerperBackend("news", client=client)),
                ToolKind.ACADEMIC: (ArxivBackend(client=client),),
                ToolKind.WEB: (SerperBackend("search", client=client),),
            },
            **kwargs,
        )


def _call_with_retries(backend: Backend, query: str, k: int,
                       registry: BackendRegistry) -> list[Hit]:
    attempt = 0
    while True:
        try:
            return backend.search(query, k, registry.timeout)
        except AuthMissing:
            raise
        except FetchError:
            if attempt >= registry.retries:
                raise
            attempt += 1
            log.info("retrying %s (attempt %d)", backend.name, attempt + 1)


def fetch(tool: ToolKind, query: str, k: int, registry: BackendRegistry) -> list[Passage]:
    """Top-``k`` passages for ``query`` from the tool's backend chain.

    Later backends in the chain are tried when an earlier one fails or
    returns nothing. An empty list means every backend answered with no hits.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not query.strip():
        raise ValueError("query must be nonempty")

    chain = registry.backends[tool]
    errors: list[FetchError] = []
    for backend in chain:
        try:
            hits = _call_with_retries(backend, query, k, registry)
        except FetchError as exc:
            log.warning("backend %s failed: %s", backend.name, exc)
            errors.append(exc)
            continue
        if hits:
            return [
                Passage(h.title, h.snippet[: registry.snippet_limit], h.url, tool.value, rank)
                for rank, h in enumerate(hits[:k], start=1)
            ]
    if len(errors) == len(chain):
        if len(errors) == 1:
            raise errors[0]
        raise AllBackendsFailed("; ".join(str(e) for e in errors))
    return []
