"""Bounded breadth-first crawl with privacy-page discovery."""

from __future__ import annotations

import heapq
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional
from urllib.parse import urlsplit

import httpx

from .extract import extract_page
from .fetch import FetchError, FetchErrorKind, HostRateLimiter, RobotsCache, default_rate_limiter, fetch_page, make_client
from .model import CrawlConfig, PageSnapshot, SiteProfile
from .urls import same_site, url_host

__all__ = ["CrawlResult", "DeadlineExceeded", "crawl_site", "score_privacy_anchor"]

logger = logging.getLogger(__name__)


class DeadlineExceeded(FetchError):
    """The total crawl deadline ran out before the homepage was processed."""

    def __init__(self, detail: str, url: str = ""):
        super().__init__(FetchErrorKind.TIMEOUT, detail, url)


def score_privacy_anchor(anchor_text: str, url: str) -> int:
    """How strongly a link looks like it leads to privacy / CCPA material."""
    anchor = anchor_text.lower()
    path = urlsplit(url).path.lower()
    score = 0
    if "privacy" in anchor:
        score += 8
    if "privacy" in path:
        score += 6
    if "ccpa" in anchor or "california" in anchor:
        score += 10
    if "do not sell" in anchor:
        score += 10
    if "legal" in path or "policies" in path:
        score += 2
    return score


@dataclass(frozen=True)
class CrawlResult:
    snapshots: tuple[PageSnapshot, ...]
    homepage: PageSnapshot
    privacy_candidates: tuple[tuple[PageSnapshot, int], ...] = ()
    hinted: frozenset[str] = frozenset()  # snapshot ids reached through a SiteProfile
    budget_exhausted: bool = False
    errors: tuple[FetchError, ...] = field(default=())

    def privacy_pages(self) -> list[PageSnapshot]:
        """Candidates with a positive score, plus profile-hinted pages, in rank order."""
        pages = [snap for snap, score in self.privacy_candidates if score > 0 or snap.snapshot_id in self.hinted]
        return pages


@dataclass(order=True)
class _Item:
    depth: int
    neg_score: int
    url: str


def _fill(snapshot: PageSnapshot) -> PageSnapshot:
    page = extract_page(snapshot.body, snapshot.content_type, snapshot.final_url)
    return replace(snapshot, text=page.text, links=page.links, phones=page.phones)


def crawl_site(
    seed: str,
    cfg: CrawlConfig,
    profile: Optional[SiteProfile] = None,
    *,
    client: Optional[httpx.Client] = None,
    rate_limiter: HostRateLimiter = default_rate_limiter,
    deadline: Optional[float] = None,
) -> CrawlResult:
    """Crawl from ``seed`` (already normalized) within ``cfg``'s budgets.

    ``deadline`` is an absolute ``time.monotonic()`` value; it defaults to
    ``cfg.total_deadline`` from now. A homepage failure raises
    :class:`FetchError`; later failures are collected in ``errors``.
    """
    if deadline is None:
        deadline = time.monotonic() + cfg.total_deadline / 1000.0
    owns_client = client is None
    client = client or make_client()
    try:
        return _Crawler(seed, cfg, profile, client, rate_limiter, deadline).run()
    finally:
        if owns_client:
            client.close()


class _Crawler:
    def __init__(self, seed, cfg, profile, client, rate_limiter, deadline):
        self.seed = seed
        self.cfg = cfg
        self.profile = profile
        self.client = client
        self.limiter = rate_limiter
        self.deadline = deadline
        self.delay_s = cfg.politeness_delay / 1000.0
        self.robots = RobotsCache(cfg, client)
        self.seen: set[str] = set()
        self.snapshots: list[PageSnapshot] = []
        self.errors: list[FetchError] = []
        self.incoming: dict[str, int] = {}
        self.frontier: list[_Item] = []
        self.hinted_urls: set[str] = set()
        self.exhausted = False

    def _remaining_ms(self) -> float:
        return (self.deadline - time.monotonic()) * 1000.0

    def _fetch(self, url: str, depth: int, site_root: str) -> PageSnapshot:
        if not self.limiter.acquire(url_host(url), self.delay_s, self.deadline):
            raise DeadlineExceeded("deadline reached while waiting for politeness slot", url)
        remaining = self._remaining_ms()
        if remaining <= 0:
            raise DeadlineExceeded("total deadline elapsed", url)
        try:
            return fetch_page(url, self.cfg, client=self.client, timeout_ms=remaining, depth=depth, site_root=site_root)
        except FetchError as exc:
            # A timeout clamped by the overall deadline is a deadline overrun.
            if exc.kind is FetchErrorKind.TIMEOUT and remaining < self.cfg.per_fetch_timeout and self._remaining_ms() <= 50:
                raise DeadlineExceeded(f"total deadline elapsed: {exc.detail}", url) from exc
            raise

    def _accept(self, snap: PageSnapshot) -> Optional[PageSnapshot]:
        if snap.final_url in self.seen and snap.final_url != snap.requested_url:
            return None
        self.seen.update((snap.requested_url, snap.final_url))
        snap = _fill(snap)
        self.snapshots.append(snap)
        return snap

    def _enqueue_links(self, snap: PageSnapshot) -> None:
        child_depth = snap.depth + 1
        links = [(u, a) for u, a in snap.links if not self.cfg.same_site_only or same_site(self.root, u)]
        if child_depth > self.cfg.max_depth:
            if any(url not in self.seen for url, _ in links):
                self.exhausted = True
            return
        for url, anchor in links:
            score = score_privacy_anchor(anchor, url)
            if score > self.incoming.get(url, -1):
                self.incoming[url] = score
                if url not in self.seen:
                    heapq.heappush(self.frontier, _Item(child_depth, -score, url))

    def _next_wave(self) -> list[_Item]:
        room = min(self.cfg.parallelism, self.cfg.max_pages - len(self.snapshots))
        wave: list[_Item] = []
        queued: set[str] = set()
        while self.frontier and len(wave) < room:
            item = heapq.heappop(self.frontier)
            if item.url in self.seen or item.url in queued:
                continue
            if not self.robots.allowed(item.url, timeout_ms=min(2000.0, max(self._remaining_ms(), 1.0))):
                logger.info("robots.txt disallows %s", item.url)
                self.seen.add(item.url)
                continue
            queued.add(item.url)
            wave.append(item)
        return wave

    def _pending(self) -> bool:
        return any(item.url not in self.seen for item in self.frontier)

    def run(self) -> CrawlResult:
        homepage = self._fetch(self.seed, 0, self.seed)
        homepage = self._accept(homepage)
        self.root = homepage.final_url

        # Profile hints jump the queue.
        if self.profile is not None:
            hinted = [u for u in (self.profile.privacy_page_url, *self.profile.extra_seeds) if u]
            if self.profile.privacy_page_url:
                self.hinted_urls.add(self.profile.privacy_page_url)
            for url in hinted:
                if url in self.seen or len(self.snapshots) >= self.cfg.max_pages:
                    continue
                try:
                    snap = self._fetch(url, 1, self.root)
                except FetchError as exc:
                    self.errors.append(exc)
                    continue
                accepted = self._accept(snap)
                if accepted is not None and url == self.profile.privacy_page_url:
                    self.hinted_urls.add(accepted.final_url)
        for snap in list(self.snapshots):
            self._enqueue_links(snap)

        with ThreadPoolExecutor(max_workers=self.cfg.parallelism) as pool:
            while len(self.snapshots) < self.cfg.max_pages:
                if self._remaining_ms() <= 0:
                    self.exhausted = self.exhausted or self._pending()
                    break
                wave = self._next_wave()
                if not wave:
                    break
                outcomes = list(pool.map(self._fetch_item, wave))
                for item, outcome in zip(wave, outcomes):
                    if isinstance(outcome, FetchError):
                        self.seen.add(item.url)
                        self.errors.append(outcome)
                        if isinstance(outcome, DeadlineExceeded):
                            self.exhausted = True
                        continue
                    accepted = self._accept(outcome)
                    if accepted is not None:
                        self._enqueue_links(accepted)
            if len(self.snapshots) >= self.cfg.max_pages and self._pending():
                self.exhausted = True

        return CrawlResult(
            snapshots=tuple(self.snapshots),
            homepage=homepage,
            privacy_candidates=self._rank_candidates(),
            hinted=frozenset(s.snapshot_id for s in self.snapshots if self._is_hinted(s)),
            budget_exhausted=self.exhausted,
            errors=tuple(self.errors),
        )

    def _is_hinted(self, snap: PageSnapshot) -> bool:
        return snap.requested_url in self.hinted_urls or snap.final_url in self.hinted_urls

    def _fetch_item(self, item: _Item):
        try:
            return self._fetch(item.url, item.depth, self.root)
        except FetchError as exc:
            return exc

    def _rank_candidates(self) -> tuple[tuple[PageSnapshot, int], ...]:
        ranked = []
        for snap in self.snapshots:
            score = max(self.incoming.get(snap.requested_url, 0), self.incoming.get(snap.final_url, 0))
            if score > 0 or self._is_hinted(snap):
                ranked.append((snap, score))
        ranked.sort(key=lambda pair: (-pair[1], pair[0].final_url))
        return tuple(ranked)
