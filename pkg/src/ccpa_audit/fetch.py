"""Budgeted HTTP(S) retrieval.

``fetch_page`` either returns a :class:`PageSnapshot` (text and links not yet
filled) or raises :class:`FetchError`. Redirects are followed by hand so the
cap and the same-site rule can be enforced.
"""

from __future__ import annotations

import enum
import logging
import socket
import threading
import time
from typing import Optional
from urllib.parse import urljoin, urlsplit
from urllib.robotparser import RobotFileParser

import httpx

from . import __version__
from .model import CrawlConfig, PageSnapshot, snapshot_id_for, utc_now
from .urls import InvalidURL, normalize_url, same_site

__all__ = [
    "FetchError",
    "FetchErrorKind",
    "HostRateLimiter",
    "MAX_REDIRECTS",
    "RobotsCache",
    "USER_AGENT",
    "default_rate_limiter",
    "fetch_page",
    "make_client",
]

logger = logging.getLogger(__name__)

USER_AGENT = f"ccpa-audit-engine/{__version__} (+https://pypi.org/project/artifact/)"
MAX_REDIRECTS = 5
ACCEPTED_MEDIA_TYPES = frozenset({"text/html", "application/xhtml+xml", "text/plain"})
_REDIRECT_CODES = frozenset({301, 302, 303, 307, 308})
_CHUNK = 64 * 1024


class FetchErrorKind(str, enum.Enum):
    INVALID_URL = "INVALID_URL"
    DNS_FAILURE = "DNS_FAILURE"
    CONNECT_FAILURE = "CONNECT_FAILURE"
    TIMEOUT = "TIMEOUT"
    HTTP_STATUS = "HTTP_STATUS"
    TOO_LARGE = "TOO_LARGE"
    NON_HTML = "NON_HTML"


class FetchError(Exception):
    def __init__(self, kind: FetchErrorKind, detail: str, url: str = "", status_code: Optional[int] = None):
        self.kind = kind
        self.detail = detail
        self.url = url
        self.status_code = status_code
        super().__init__(f"{kind.value}: {detail} ({url})")


class HostRateLimiter:
    """Per-host minimum spacing between request starts, shared across threads and checks."""

    def __init__(self):
        self._lock = threading.Lock()
        self._next_slot: dict[str, float] = {}

    def acquire(self, host: str, delay_s: float, deadline: Optional[float] = None) -> bool:
        """Block until ``host`` may be hit again. False when the slot lies past ``deadline``."""
        with self._lock:
            now = time.monotonic()
            slot = max(now, self._next_slot.get(host, 0.0))
            if deadline is not None and slot > deadline:
                return False
            self._next_slot[host] = slot + delay_s
        wait = slot - time.monotonic()
        if wait > 0:
            time.sleep(wait)
        return True


default_rate_limiter = HostRateLimiter()


def make_client() -> httpx.Client:
    return httpx.Client(
        follow_redirects=False,
        headers={"User-Agent": USER_AGENT, "Accept": "text/html,application/xhtml+xml,text/plain;q=0.9"},
        trust_env=True,
    )


def _is_dns_failure(exc: BaseException) -> bool:
    seen = set()
    while exc is not None and id(exc) not in seen:
        seen.add(id(exc))
        if isinstance(exc, socket.gaierror):
            return True
        text = str(exc).lower()
        if "name or service not known" in text or "name resolution" in text or "nodename nor servname" in text:
            return True
        exc = exc.__cause__ or exc.__context__
    return False


def _media_type(content_type: str) -> str:
    return content_type.split(";")[0].strip().lower()


def fetch_page(
    url: str,
    cfg: CrawlConfig,
    *,
    client: Optional[httpx.Client] = None,
    timeout_ms: Optional[float] = None,
    depth: int = 0,
    accept_any_type: bool = False,
    site_root: Optional[str] = None,
) -> PageSnapshot:
    """Fetch ``url`` within ``min(cfg.per_fetch_timeout, timeout_ms)`` of wall time.

    With ``cfg.same_site_only``, redirects must stay on the registrable domain
    of ``site_root`` (default: ``url``). Politeness spacing is the caller's
    job. Raises :class:`FetchError`.
    """
    try:
        url = normalize_url(url)
    except InvalidURL as exc:
        raise FetchError(FetchErrorKind.INVALID_URL, str(exc), url) from exc

    budget_ms = cfg.per_fetch_timeout if timeout_ms is None else min(cfg.per_fetch_timeout, timeout_ms)
    if budget_ms <= 0:
        raise FetchError(FetchErrorKind.TIMEOUT, "no time left in budget", url)
    deadline = time.monotonic() + budget_ms / 1000.0

    owns_client = client is None
    client = client or make_client()
    try:
        return _fetch(url, cfg, client, deadline, depth, accept_any_type, site_root or url)
    finally:
        if owns_client:
            client.close()


def _fetch(url, cfg, client, deadline, depth, accept_any_type, site_root) -> PageSnapshot:
    current = url
    for hop in range(MAX_REDIRECTS + 1):
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise FetchError(FetchErrorKind.TIMEOUT, "per-fetch timeout elapsed", current)
        try:
            with client.stream("GET", current, timeout=httpx.Timeout(remaining)) as resp:
                status = resp.status_code
                if status in _REDIRECT_CODES and "location" in resp.headers:
                    if hop == MAX_REDIRECTS:
                        raise FetchError(
                            FetchErrorKind.HTTP_STATUS, f"more than {MAX_REDIRECTS} redirects", url, status
                        )
                    try:
                        target = normalize_url(urljoin(current, resp.headers["location"]))
                    except (InvalidURL, ValueError) as exc:
                        raise FetchError(FetchErrorKind.INVALID_URL, f"bad redirect target: {exc}", current) from exc
                    if cfg.same_site_only and not same_site(site_root, target):
                        raise FetchError(
                            FetchErrorKind.HTTP_STATUS, f"redirect leaves site: {target}", current, status
                        )
                    current = target
                    continue
                if status >= 400:
                    raise FetchError(FetchErrorKind.HTTP_STATUS, f"HTTP {status}", current, status)
                content_type = resp.headers.get("content-type", "text/html")
                if not accept_any_type and _media_type(content_type) not in ACCEPTED_MEDIA_TYPES:
                    raise FetchError(FetchErrorKind.NON_HTML, f"content-type {content_type}", current)
                declared = resp.headers.get("content-length", "")
                if declared.isdigit() and int(declared) > cfg.max_body_bytes:
                    raise FetchError(FetchErrorKind.TOO_LARGE, f"content-length {declared}", current)
                buf = bytearray()
                for chunk in resp.iter_bytes(_CHUNK):
                    buf.extend(chunk)
                    if len(buf) > cfg.max_body_bytes:
                        raise FetchError(
                            FetchErrorKind.TOO_LARGE, f"body exceeds {cfg.max_body_bytes} bytes", current
                        )
                    if time.monotonic() > deadline:
                        raise FetchError(FetchErrorKind.TIMEOUT, "body read exceeded timeout", current)
                body = bytes(buf)
                return PageSnapshot(
                    snapshot_id=snapshot_id_for(body),
                    requested_url=url,
                    final_url=current,
                    http_status=status,
                    fetched_at=utc_now(),
                    content_type=content_type,
                    body=body,
                    depth=depth,
                )
        except FetchError:
            raise
        except httpx.TimeoutException as exc:
            raise FetchError(FetchErrorKind.TIMEOUT, str(exc) or type(exc).__name__, current) from exc
        except (httpx.InvalidURL, httpx.UnsupportedProtocol) as exc:
            raise FetchError(FetchErrorKind.INVALID_URL, str(exc), current) from exc
        except httpx.ConnectError as exc:
            kind = FetchErrorKind.DNS_FAILURE if _is_dns_failure(exc) else FetchErrorKind.CONNECT_FAILURE
            raise FetchError(kind, str(exc) or type(exc).__name__, current) from exc
        except (httpx.TransportError, httpx.DecodingError) as exc:
            raise FetchError(FetchErrorKind.CONNECT_FAILURE, str(exc) or type(exc).__name__, current) from exc
    raise AssertionError("unreachable")


class RobotsCache:
    """robots.txt rules fetched at most once per origin."""

    def __init__(self, cfg: CrawlConfig, client: httpx.Client, user_agent: str = USER_AGENT):
        self._cfg = cfg
        self._client = client
        self._agent = user_agent.split("/")[0]
        self._lock = threading.Lock()
        self._parsers: dict[str, Optional[RobotFileParser]] = {}

    def _origin(self, url: str) -> str:
        parts = urlsplit(url)
        return f"{parts.scheme}://{parts.netloc}"

    def _load(self, origin: str, timeout_ms: float) -> Optional[RobotFileParser]:
        parser = RobotFileParser()
        try:
            snap = fetch_page(
                origin + "/robots.txt", self._cfg, client=self._client, timeout_ms=timeout_ms, accept_any_type=True
            )
        except FetchError as exc:
            if exc.kind is FetchErrorKind.HTTP_STATUS and exc.status_code in (401, 403):
                parser.disallow_all = True
                return parser
            return None
        parser.parse(snap.body.decode("utf-8", errors="replace").splitlines())
        return parser

    def allowed(self, url: str, timeout_ms: float = 2000) -> bool:
        origin = self._origin(url)
        with self._lock:
            if origin not in self._parsers:
                self._parsers[origin] = self._load(origin, timeout_ms)
            parser = self._parsers[origin]
        if parser is None:
            return True
        return parser.can_fetch(self._agent, url)
