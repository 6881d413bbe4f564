"""Page retrieval and selector-driven (question, specialization) extraction.

Selector grammar (a small CSS subset)::

    selector := compound (" "+ compound)*      descendant combination
    compound := tag? ("." class | "#" id)*     at least one part

Matching returns the first node in document order.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from html.parser import HTMLParser
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .dataset import Dataset, QARecord, dedupe, make_record

log = logging.getLogger(__name__)

LOCAL_FIXTURE = "local-fixture"
VOID_TAGS = frozenset(
    "area base br col embed hr img input link meta param source track wbr".split()
)


class IngestError(Exception):
    pass


class ConfigurationError(IngestError):
    pass


class SelectorSyntaxError(IngestError):
    pass


class MissingFieldError(IngestError):
    def __init__(self, selectors: Sequence[str]):
        self.selectors = tuple(selectors)
        super().__init__(f"no node matches selector(s): {', '.join(self.selectors)}")


# --- selectors --------------------------------------------------------------

_COMPOUND = re.compile(r"([A-Za-z][A-Za-z0-9-]*)?((?:[.#][A-Za-z_-][A-Za-z0-9_-]*)*)")
_PART = re.compile(r"([.#])([A-Za-z_-][A-Za-z0-9_-]*)")


@dataclass(frozen=True)
class Compound:
    tag: str | None
    classes: frozenset[str]
    ids: frozenset[str]

    def matches(self, node: Node) -> bool:
        if self.tag is not None and node.tag != self.tag:
            return False
        if self.ids and node.attrs.get("id") not in self.ids:
            return False
        return self.classes <= node.classes


def parse_selector(selector: str) -> tuple[Compound, ...]:
    parts = selector.split()
    if not parts:
        raise SelectorSyntaxError("empty selector")
    out = []
    for p in parts:
        m = _COMPOUND.fullmatch(p)
        if not m or not (m.group(1) or m.group(2)):
            raise SelectorSyntaxError(f"invalid selector component {p!r} in {selector!r}")
        tag = m.group(1).lower() if m.group(1) else None
        classes = frozenset(n for kind, n in _PART.findall(m.group(2)) if kind == ".")
        ids = frozenset(n for kind, n in _PART.findall(m.group(2)) if kind == "#")
        if len(ids) > 1:
            raise SelectorSyntaxError(f"more than one #id in {p!r}")
        out.append(Compound(tag, classes, ids))
    return tuple(out)


# --- tolerant DOM -----------------------------------------------------------


@dataclass(eq=False)
class Node:
    tag: str
    attrs: dict[str, str]
    parent: Node | None = field(default=None, repr=False)
    children: list = field(default_factory=list, repr=False)  # Node | str

    @property
    def classes(self) -> frozenset[str]:
        return frozenset(self.attrs.get("class", "").split())

    def text(self) -> str:
        parts: list[str] = []
        stack: list = [self]
        while stack:
            item = stack.pop()
            if isinstance(item, str):
                parts.append(item)
            else:
                stack.extend(reversed(item.children))
        return "".join(parts)

    def iter(self) -> Iterator[Node]:
        """Pre-order (document order) over element nodes, excluding self."""
        stack = [c for c in reversed(self.children) if isinstance(c, Node)]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(c for c in reversed(node.children) if isinstance(c, Node))


class _TreeBuilder(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.root = Node("#document", {})
        self.cur = self.root

    def handle_starttag(self, tag, attrs):
        node = Node(tag, {k: (v or "") for k, v in attrs}, parent=self.cur)
        self.cur.children.append(node)
        if tag not in VOID_TAGS:
            self.cur = node

    def handle_startendtag(self, tag, attrs):
        self.cur.children.append(Node(tag, {k: (v or "") for k, v in attrs}, parent=self.cur))

    def handle_endtag(self, tag):
        # close up to the nearest open element of this tag; stray end tags are ignored
        node = self.cur
        while node is not self.root and node.tag != tag:
            node = node.parent
        if node is not self.root:
            self.cur = node.parent

    def handle_data(self, data):
        self.cur.children.append(data)


def parse_html(html: str) -> Node:
    builder = _TreeBuilder()
    builder.feed(html)
    builder.close()
    return builder.root


def select_first(root: Node, selector: str | Sequence[Compound]) -> Node | None:
    chain = parse_selector(selector) if isinstance(selector, str) else tuple(selector)
    last, ancestors = chain[-1], chain[:-1]
    for node in root.iter():
        if last.matches(node) and _ancestors_match(node, ancestors):
            return node
    return None


def _ancestors_match(node: Node, chain: Sequence[Compound]) -> bool:
    i = len(chain) - 1
    cur = node.parent
    while i >= 0 and cur is not None:
        if cur.tag != "#document" and chain[i].matches(cur):
            i -= 1
        cur = cur.parent
    return i < 0


# --- source description -----------------------------------------------------


@dataclass(frozen=True)
class ExtractionRules:
    question_selector: str
    specialization_selector: str

    def __post_init__(self):
        for name in ("question_selector", "specialization_selector"):
            value = getattr(self, name)
            if not value or not value.strip():
                raise SelectorSyntaxError(f"{name} is empty")
            parse_selector(value)


@dataclass(frozen=True)
class SourceSpec:
    source_id: str
    base_url: str
    extraction_rules: ExtractionRules
    rate_limit: Fraction = Fraction(1)  # requests per second, per host
    max_in_flight: int = 4

    def __post_init__(self):
        if not self.source_id:
            raise ConfigurationError("source_id must be non-empty")
        if self.rate_limit <= 0:
            raise ConfigurationError("rate_limit must be positive")
        if self.max_in_flight < 1:
            raise ConfigurationError("max_in_flight must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> SourceSpec:
        rules = d["extraction_rules"]
        return cls(
            source_id=d["source_id"],
            base_url=d.get("base_url", ""),
            extraction_rules=ExtractionRules(rules["question_selector"], rules["specialization_selector"]),
            rate_limit=Fraction(str(d.get("rate_limit", 1))),
            max_in_flight=int(d.get("max_in_flight", 4)),
        )

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "base_url": self.base_url,
            "extraction_rules": asdict(self.extraction_rules),
            "rate_limit": float(self.rate_limit),
            "max_in_flight": self.max_in_flight,
        }


def load_sources(path: str | Path) -> list[SourceSpec]:
    """One SourceSpec object, or a list of them, from a UTF-8 JSON file."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    specs = [SourceSpec.from_dict(d) for d in (doc if isinstance(doc, list) else [doc])]
    ids = [s.source_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("duplicate source_id in source file")
    return specs


# --- fetching ---------------------------------------------------------------


@dataclass(frozen=True)
class RawPage:
    url: str
    html: str
    fetched_at: datetime
    http_status: int | str  # HTTP code, LOCAL_FIXTURE, or "error:<reason>"
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.http_status == LOCAL_FIXTURE or (isinstance(self.http_status, int) and 200 <= self.http_status < 300)


class HostRateLimiter:
    """Spaces request starts to each host by at least ``1 / rate`` seconds."""

    def __init__(self, rate: Fraction | float):
        self.interval = 1.0 / float(rate)
        self._next: dict[str, float] = {}
        self._lock = threading.Lock()

    def wait(self, host: str) -> None:
        with self._lock:
            now = time.monotonic()
            slot = max(now, self._next.get(host, now))
            self._next[host] = slot + self.interval
        delay = slot - time.monotonic()
        if delay > 0:
            time.sleep(delay)


def _read_local(url: str) -> RawPage:
    path = urllib.request.url2pathname(urllib.parse.urlparse(url).path)
    now = datetime.now(timezone.utc)
    try:
        html = Path(path).read_bytes().decode("utf-8")
    except OSError as exc:
        return RawPage(url, "", now, f"error:{type(exc).__name__}", str(exc))
    return RawPage(url, html, now, LOCAL_FIXTURE)


def _fetch_remote(url: str, limiter: HostRateLimiter, retries: int, timeout: float, backoff: float) -> RawPage:
    host = urllib.parse.urlparse(url).netloc
    last_status: int | str = "error:unknown"
    last_error = None
    for attempt in range(retries + 1):
        if attempt:
            time.sleep(backoff * 2 ** (attempt - 1))
        limiter.wait(host)
        try:
            req = urllib.request.Request(url, headers={"User-Agent": "medroute-ingest/0.1"})
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                body = resp.read()
                charset = resp.headers.get_content_charset() or "utf-8"
                return RawPage(url, body.decode(charset, errors="replace"), datetime.now(timezone.utc), resp.status)
        except urllib.error.HTTPError as exc:
            last_status, last_error = exc.code, f"HTTP {exc.code}"
            if 400 <= exc.code < 500 and exc.code != 429:
                break
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            last_status, last_error = "error:network", str(exc)
    return RawPage(url, "", datetime.now(timezone.utc), last_status, last_error)


def fetch_pages(source: SourceSpec, urls: Sequence[str], *, allow_network: bool = False,
                retries: int = 2, timeout: float = 10.0, backoff: float = 0.5) -> Iterator[RawPage]:
    """Yield one RawPage per URL, in completion order.

    ``file://`` URLs are read from disk. Anything else requires
    ``allow_network``; remote requests are rate limited per host and at
    most ``source.max_in_flight`` are outstanding. Failures come back as
    pages with an error status after ``retries`` retries.
    """
    urls = list(urls)
    if not urls:
        raise ValueError("urls must be non-empty")
    remote = [u for u in urls if urllib.parse.urlparse(u).scheme != "file"]
    if remote and not allow_network:
        raise ConfigurationError(f"network access disabled; refusing non-file URL {remote[0]!r}")
    limiter = HostRateLimiter(source.rate_limit)

    def fetch(url: str) -> RawPage:
        if urllib.parse.urlparse(url).scheme == "file":
            return _read_local(url)
        return _fetch_remote(url, limiter, retries, timeout, backoff)

    with ThreadPoolExecutor(max_workers=source.max_in_flight) as pool:
        futures = {pool.submit(fetch, u): u for u in urls}
        for fut in as_completed(futures):
            try:
                yield fut.result()
            except Exception as exc:  # noqa: BLE001 - recorded, never dropped
                yield RawPage(futures[fut], "", datetime.now(timezone.utc), "error:internal", repr(exc))


# --- extraction -------------------------------------------------------------


def extract_record(page: RawPage, rules: ExtractionRules) -> QARecord:
    root = parse_html(page.html)
    q = select_first(root, rules.question_selector)
    s = select_first(root, rules.specialization_selector)
    missing = [sel for sel, node in ((rules.question_selector, q), (rules.specialization_selector, s)) if node is None]
    if missing:
        raise MissingFieldError(missing)
    return QARecord(page.url, q.text().strip(), s.text().strip())


@dataclass(frozen=True)
class Skip:
    url: str
    reason: str


def extract_records(pages: Iterable[RawPage], rules: ExtractionRules) -> tuple[list[QARecord], list[Skip]]:
    """Extract every page; failures become ``Skip`` entries, never silent drops."""
    records, skips = [], []
    for page in pages:
        if not page.ok:
            skips.append(Skip(page.url, f"fetch failed: {page.http_status} {page.error or ''}".strip()))
            continue
        try:
            rec = extract_record(page, rules)
            records.append(make_record(rec.source_url, rec.question_text, rec.specialization))
        except MissingFieldError as exc:
            both = len(exc.selectors) == 2
            skips.append(Skip(page.url, ("both fields missing: " if both else "missing field: ") + ", ".join(exc.selectors)))
        except ValueError as exc:
            skips.append(Skip(page.url, str(exc)))
    return records, skips


# --- page store (ingest CLI output / dataset build input) -------------------

MANIFEST = "pages.json"


def save_pages(pages: Iterable[RawPage], out_dir: str | Path) -> Path:
    """Write each page as ``NNNNN.html`` plus a ``pages.json`` manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, page in enumerate(sorted(pages, key=lambda p: p.url)):
        name = f"{i:05d}.html"
        (out / name).write_text(page.html, encoding="utf-8")
        entries.append({"url": page.url, "file": name, "http_status": page.http_status,
                        "fetched_at": page.fetched_at.isoformat(), "error": page.error})
    manifest = out / MANIFEST
    manifest.write_text(json.dumps(entries, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")
    return manifest


def load_pages(pages_dir: str | Path) -> list[RawPage]:
    base = Path(pages_dir)
    entries = json.loads((base / MANIFEST).read_text(encoding="utf-8"))
    return [RawPage(e["url"], (base / e["file"]).read_text(encoding="utf-8"),
                    datetime.fromisoformat(e["fetched_at"]), e["http_status"], e.get("error"))
            for e in entries]


def build_dataset(pages: Iterable[RawPage], rules: ExtractionRules) -> tuple[Dataset, list[Skip]]:
    """Extract, normalize and dedupe into a Dataset (records in URL order)."""
    records, skips = extract_records(sorted(pages, key=lambda p: p.url), rules)
    return dedupe(Dataset(records, provenance="extracted pages")), skips
