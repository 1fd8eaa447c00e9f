"""Client for the crash-report case API with a synchronized read-through cache.

Online, documents come from an HTTP GET of the form
``{base}/GetCaseDetails?stateCase=N&caseYear=Y&state=S&format=xml``.
Offline, documents come from a fixture directory of files named
``<state>_<stateCase>_<caseYear>.xml``; a missing fixture is a CacheMiss.
Fetched documents are cached in memory and, when a cache directory is
configured, on disk under the same file naming, so repeated batch runs do
not re-hit the service.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Callable

from .errors import CacheMiss, NetworkError, NotFound
from .reports import CaseKey, RawCaseDocument

DEFAULT_API_BASE = "https://crashviewer.nhtsa.dot.gov/crashviewer/CrashAPI/crashes"

Transport = Callable[[str], str]


def build_case_url(base: str, key: CaseKey) -> str:
    return (
        f"{base.rstrip('/')}/GetCaseDetails"
        f"?stateCase={key.state_case}&caseYear={key.case_year}&state={key.state}&format=xml"
    )


def _requests_transport(url: str) -> str:
    import requests

    try:
        resp = requests.get(url, timeout=60)
    except requests.RequestException as exc:
        raise NetworkError(str(exc)) from exc
    if resp.status_code == 404:
        raise NotFound(url)
    if resp.status_code != 200:
        raise NetworkError(f"HTTP {resp.status_code} for {url}")
    if not resp.text.strip():
        raise NotFound(url)
    return resp.text


class CrashApiClient:
    """Fetch case documents; safe for concurrent per-case workers."""

    def __init__(
        self,
        base_url: str = DEFAULT_API_BASE,
        cache_dir: Path | None = None,
        offline: bool = False,
        fixtures_dir: Path | None = None,
        transport: Transport | None = None,
    ):
        self.base_url = base_url
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.offline = offline
        self.fixtures_dir = Path(fixtures_dir) if fixtures_dir else None
        self._transport = transport or _requests_transport
        self._memory: dict[CaseKey, str] = {}
        self._lock = threading.Lock()

    def _cache_path(self, key: CaseKey) -> Path | None:
        return self.cache_dir / f"{key.slug}.xml" if self.cache_dir else None

    def _fixture_path(self, key: CaseKey) -> Path | None:
        return self.fixtures_dir / f"{key.slug}.xml" if self.fixtures_dir else None

    def fetch_case(self, key: CaseKey) -> RawCaseDocument:
        """Return the verbatim document for ``key``, caching it."""
        with self._lock:
            cached = self._memory.get(key)
        if cached is not None:
            return RawCaseDocument(key, cached)

        body = self._load_uncached(key)
        with self._lock:
            self._memory.setdefault(key, body)
        return RawCaseDocument(key, body)

    def _load_uncached(self, key: CaseKey) -> str:
        cache_path = self._cache_path(key)
        if cache_path is not None and cache_path.is_file():
            return cache_path.read_text(encoding="utf-8")

        if self.offline:
            fixture = self._fixture_path(key)
            if fixture is not None and fixture.is_file():
                return fixture.read_text(encoding="utf-8")
            raise CacheMiss(f"no fixture or cached document for case {key.slug}")

        body = self._transport(build_case_url(self.base_url, key))
        if cache_path is not None:
            cache_path.parent.mkdir(parents=True, exist_ok=True)
            cache_path.write_text(body, encoding="utf-8")
        return body
