from __future__ import annotations

import itertools
from datetime import datetime, timedelta, timezone


def fixed_clock():
    """A clock that ticks one second per call from a fixed instant."""
    base = datetime(2024, 1, 1, tzinfo=timezone.utc)
    counter = itertools.count()
    return lambda: base + timedelta(seconds=next(counter))


def page(body: str, title: str = "t", links: list[tuple[str, str]] = ()) -> str:
    anchors = "".join(f'<a href="{h}">{t}</a> ' for h, t in links)
    return f"<!DOCTYPE html><html><head><title>{title}</title></head><body>{body}<footer>{anchors}</footer></body></html>"


def snap(url: str, text: str, depth: int = 0, links: tuple[tuple[str, str], ...] = ()):
    """A fetched page with pre-extracted text, for engine tests that skip the network."""
    from ccpa_audit.model import PageSnapshot, snapshot_id_for, utc_now

    body = f"{url}\n{text}".encode()
    return PageSnapshot(
        snapshot_id=snapshot_id_for(body),
        requested_url=url,
        final_url=url,
        http_status=200,
        fetched_at=utc_now(),
        content_type="text/html",
        body=body,
        text=text,
        links=links,
        depth=depth,
    )


def crawl_of(home, *privacy, others=()):
    """CrawlResult with ``privacy`` pages ranked as candidates in the given order."""
    from ccpa_audit.crawl import CrawlResult

    ranked = tuple((p, 100 - i) for i, p in enumerate(privacy))
    return CrawlResult(snapshots=(home, *privacy, *others), homepage=home, privacy_candidates=ranked)
