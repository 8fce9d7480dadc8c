"""Ranked evidence snippets per claim.

Two interchangeable clients: a live web-search client (API key from the
environment, retries with exponential backoff, response cache) and a
fixture store reading pre-captured results from disk so experiments are
offline and reproducible. Snippets, not full pages, are the evidence
unit; at most ten per claim, fewer when the search surfaced fewer.
"""

from __future__ import annotations

import hashlib
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import urlsplit

log = logging.getLogger(__name__)


class EvidenceError(Exception):
    """Invalid snippet data or corrupted fixture."""


class RetryableSearchError(EvidenceError):
    """Live search failed after all retries; safe to try again later."""


@dataclass(frozen=True)
class EvidenceSnippet:
    claim_id: str
    rank: int
    title: str
    snippet_text: str
    url: str
    last_update: str | None = None


@dataclass(frozen=True)
class EvidenceSet:
    claim_id: str
    snippets: tuple[EvidenceSnippet, ...]

    MAX_SNIPPETS = 10

    def __post_init__(self):
        if len(self.snippets) > self.MAX_SNIPPETS:
            raise EvidenceError(
                f"{self.claim_id}: {len(self.snippets)} snippets exceeds {self.MAX_SNIPPETS}"
            )
        ranks = [s.rank for s in self.snippets]
        if any(r < 1 for r in ranks) or sorted(set(ranks)) != ranks:
            raise EvidenceError(f"{self.claim_id}: ranks must be unique and ascending, got {ranks}")
        for s in self.snippets:
            if s.claim_id != self.claim_id:
                raise EvidenceError(f"snippet claim_id {s.claim_id!r} != set {self.claim_id!r}")

    @property
    def available_count(self) -> int:
        return len(self.snippets)


def fetch_snippets(record, client) -> EvidenceSet:
    """Up to ten ranked snippets for one claim, via the given client.

    The claim text goes to the client verbatim and unquoted. Zero
    results is a valid outcome (empty set).
    """
    if not record.claim_text:
        raise EvidenceError(f"{record.claim_id}: empty claim_text")
    return client.search(record.claim_id, record.claim_text)


# ---------------------------------------------------------------------------
# on-disk fixtures: one file per claim under <root>/snippets/<claim_id>

_ESCAPES = {"t": "\t", "n": "\n", "r": "\r", "\\": "\\"}


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n").replace("\r", "\\r")


def _unescape(text: str) -> str:
    out: list[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            out.append(_ESCAPES.get(text[i + 1], "\\" + text[i + 1]))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


class FixtureStore:
    """Directory of captured evidence, read-concurrent, single-writer."""

    def __init__(self, root):
        self.root = Path(root)
        self.snippet_dir = self.root / "snippets"

    def path_for(self, claim_id: str) -> Path:
        return self.snippet_dir / claim_id

    def has(self, claim_id: str) -> bool:
        return self.path_for(claim_id).exists()

    def claim_ids(self) -> list[str]:
        if not self.snippet_dir.exists():
            return []
        return sorted(p.name for p in self.snippet_dir.iterdir() if p.is_file())

    def store(self, evidence: EvidenceSet) -> None:
        self.snippet_dir.mkdir(parents=True, exist_ok=True)
        lines = []
        for s in evidence.snippets:
            cells = [str(s.rank), s.title, s.snippet_text, s.url, s.last_update or ""]
            lines.append("\t".join(_escape(c) for c in cells))
        body = "".join(line + "\n" for line in lines)
        digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
        self.path_for(evidence.claim_id).write_text(
            f"#sha256={digest}\n{body}", encoding="utf-8"
        )

    def load(self, claim_id: str) -> EvidenceSet:
        path = self.path_for(claim_id)
        if not path.exists():
            raise FileNotFoundError(f"no fixture for claim {claim_id!r} under {self.snippet_dir}")
        raw = path.read_text(encoding="utf-8")
        lines = raw.splitlines()
        if lines and lines[0].startswith("#sha256="):
            expected = lines[0][len("#sha256=") :]
            body = raw.split("\n", 1)[1] if "\n" in raw else ""
            actual = hashlib.sha256(body.encode("utf-8")).hexdigest()
            if actual != expected:
                raise EvidenceError(f"{path}: checksum mismatch (fixture corrupted)")
            lines = lines[1:]
        snippets = []
        for lineno, line in enumerate(lines, 1):
            if not line:
                continue
            cells = line.split("\t")
            if len(cells) != 5:
                raise EvidenceError(f"{path}:{lineno}: expected 5 fields, got {len(cells)}")
            rank, title, snippet, url, stamp = (_unescape(c) for c in cells)
            snippets.append(
                EvidenceSnippet(
                    claim_id=claim_id,
                    rank=int(rank),
                    title=title,
                    snippet_text=snippet,
                    url=url,
                    last_update=stamp or None,
                )
            )
        return EvidenceSet(claim_id, tuple(snippets))


def store_fixture(evidence: EvidenceSet, root) -> None:
    FixtureStore(root).store(evidence)


def load_fixture(root, claim_id: str) -> EvidenceSet:
    return FixtureStore(root).load(claim_id)


class FixtureClient:
    """Search client backed entirely by a FixtureStore (offline runs)."""

    def __init__(self, store: FixtureStore):
        self.store = store

    def search(self, claim_id: str, claim_text: str) -> EvidenceSet:
        if not self.store.has(claim_id):
            log.warning("no stored evidence for claim %r; returning empty set", claim_id)
            return EvidenceSet(claim_id, ())
        return self.store.load(claim_id)


class LiveSearchClient:
    """Web-search API client with retries, backoff, and a response cache.

    The API key comes from an environment variable; the endpoint is a
    constructor argument. Expects JSON results under "items" with
    "title", "snippet", "link", and optional "lastUpdate" keys.
    """

    def __init__(
        self,
        endpoint: str,
        api_key_var: str = "SEARCH_API_KEY",
        max_results: int = EvidenceSet.MAX_SNIPPETS,
        retries: int = 3,
        backoff: float = 1.0,
        session=None,
        sleep=time.sleep,
    ):
        self.endpoint = endpoint
        self.api_key = os.environ.get(api_key_var)
        if not self.api_key:
            raise EvidenceError(f"environment variable {api_key_var} not set")
        self.max_results = max_results
        self.retries = retries
        self.backoff = backoff
        if session is None:
            import requests

            session = requests.Session()
        self.session = session
        self.sleep = sleep
        self._cache: dict[str, EvidenceSet] = {}

    def search(self, claim_id: str, claim_text: str) -> EvidenceSet:
        if claim_id in self._cache:
            return self._cache[claim_id]
        params = {"q": claim_text, "key": self.api_key, "num": self.max_results}
        last_error = None
        for attempt in range(self.retries):
            try:
                resp = self.session.get(self.endpoint, params=params, timeout=30)
                resp.raise_for_status()
                items = resp.json().get("items", [])
                break
            except Exception as exc:
                last_error = exc
                if attempt + 1 < self.retries:
                    self.sleep(self.backoff * (2**attempt))
        else:
            raise RetryableSearchError(
                f"search failed for claim {claim_id!r} after {self.retries} attempts: {last_error}"
            )
        snippets = tuple(
            EvidenceSnippet(
                claim_id=claim_id,
                rank=i + 1,
                title=item.get("title", ""),
                snippet_text=item.get("snippet", ""),
                url=item.get("link", ""),
                last_update=item.get("lastUpdate"),
            )
            for i, item in enumerate(items[: self.max_results])
        )
        result = EvidenceSet(claim_id, snippets)
        self._cache[claim_id] = result
        return result


# ---------------------------------------------------------------------------
# reporting


def url_domain(url: str) -> str:
    """Scheme plus host, e.g. "https://en.wikipedia.org/"."""
    parts = urlsplit(url.strip())
    return f"{parts.scheme.lower()}://{parts.netloc.lower()}/"


def domain_frequency_report(evidence_sets) -> list[tuple[str, float]]:
    """(url domain, percentage of all snippets), descending by share."""
    counts: dict[str, int] = {}
    total = 0
    for ev in evidence_sets:
        for s in ev.snippets:
            counts[url_domain(s.url)] = counts.get(url_domain(s.url), 0) + 1
            total += 1
    if total == 0:
        return []
    report = [(dom, 100.0 * c / total) for dom, c in counts.items()]
    report.sort(key=lambda item: (-item[1], item[0]))
    return report
