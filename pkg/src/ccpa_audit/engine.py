"""Criteria evaluation over a crawl, with dependency gating, and report assembly."""

from __future__ import annotations

import re
import time
import uuid
from functools import lru_cache
from typing import Callable, Iterable, Optional, Sequence

import httpx

from .crawl import CrawlResult, DeadlineExceeded, crawl_site
from .fetch import FetchError, FetchErrorKind, HostRateLimiter, default_rate_limiter
from .model import (
    CheckError,
    ComplianceReport,
    CrawlConfig,
    CriterionId,
    CriterionResult,
    CriterionSpec,
    EvidenceSpan,
    KeywordBucket,
    PageSnapshot,
    Recommendation,
    Scope,
    Severity,
    SiteProfile,
    Status,
    Verdict,
    default_config,
    topological_order,
    utc_now,
)
from .urls import InvalidURL, normalize_url, registrable_domain, url_host

__all__ = [
    "COMPLAINT_TEMPLATE_VERSION",
    "complaint_instructions",
    "evaluate_crawl",
    "execute_check",
    "match_criterion",
    "recommend",
    "run_check",
    "select_profile",
]

EXCERPT_CHARS = 200
COMPLAINT_TEMPLATE_VERSION = "1"
_HAS_SCHEME_RE = re.compile(r"^\s*[A-Za-z][A-Za-z0-9+.\-]*://")

_COMPLAINT_TEMPLATE = """\
Filing a CCPA complaint (instructions v{version})

No CCPA notice was detected on the website checked in report {{check_id}}.
California consumers can report a business they believe is not honoring the
California Consumer Privacy Act to the Office of the Attorney General.

1. Download this report and its archived page snapshots; keep them as evidence.
2. Open the consumer complaint form of the California Office of the Attorney
   General: https://oag.ca.gov/contact/consumer-complaint-against-business-or-company
3. Name the business and its website, and describe the rights you could not
   exercise (right to know, right to delete, right to opt out of sale).
4. Attach or quote the downloaded report and submit the form.
""".format(version=COMPLAINT_TEMPLATE_VERSION)

_PENALTY_NOTE = (
    "Each CCPA violation can carry a civil penalty of $2,500, or $7,500 for each intentional violation."
)

_REMEDIES = {
    CriterionId.PRIVACY_NOTICE: "Publish a privacy policy and link it from every page footer.",
    CriterionId.CCPA_NOTICE: (
        "Add a section to the privacy policy addressed to California residents that describes "
        "their rights under the California Consumer Privacy Act."
    ),
    CriterionId.NOTICE_OF_COLLECTION: (
        "Show a notice at collection on the homepage or privacy policy listing the categories "
        "of personal information collected and why."
    ),
    CriterionId.RIGHT_TO_KNOW: (
        "Explain how consumers can request access to the personal information collected about them."
    ),
    CriterionId.RIGHT_TO_DELETE: (
        "Explain how consumers can request deletion of their personal information without creating an account."
    ),
    CriterionId.RIGHT_TO_OPT_OUT: "Describe how consumers can opt out of the sale of their personal information.",
    CriterionId.DO_NOT_SELL_LINK: 'Place a working "Do Not Sell My Personal Information" link on the homepage.',
    CriterionId.CONTACT_METHODS: (
        "Offer at least two ways to submit requests, one of them a toll-free telephone number."
    ),
}


@lru_cache(maxsize=1024)
def _phrase_regex(phrase: str) -> re.Pattern[str]:
    body = re.escape(phrase)
    if phrase[:1].isalnum():
        body = r"(?<!\w)" + body
    if phrase[-1:].isalnum():
        body = body + r"(?!\w)"
    return re.compile(body)


@lru_cache(maxsize=256)
def _pattern_regex(pattern: str) -> re.Pattern[str]:
    return re.compile(pattern)


def _find_bucket(bucket: KeywordBucket, text: str) -> Optional[tuple[str, int]]:
    """Earliest match of any phrase/pattern in ``bucket``: ``(matched_text, offset)``."""
    best: Optional[tuple[str, int]] = None
    regexes = [_phrase_regex(p) for p in bucket.phrases] + [_pattern_regex(p) for p in bucket.patterns]
    for rx in regexes:
        m = rx.search(text)
        if m and m.group() and (best is None or m.start() < best[1]):
            best = (m.group(), m.start())
    return best


def _excerpt(text: str, offset: int, length: int) -> str:
    if length >= EXCERPT_CHARS:
        return text[offset : offset + EXCERPT_CHARS]
    start = max(0, offset - (EXCERPT_CHARS - length) // 2)
    end = min(len(text), start + EXCERPT_CHARS)
    start = max(0, end - EXCERPT_CHARS)
    return text[start:end]


def _span(snap: PageSnapshot, phrase: str, offset: int) -> EvidenceSpan:
    return EvidenceSpan(
        snapshot_id=snap.snapshot_id,
        page_url=snap.final_url,
        matched_phrase=phrase,
        excerpt=_excerpt(snap.text, offset, len(phrase)),
        offset=offset,
    )


def _match_page(spec: CriterionSpec, snap: PageSnapshot) -> list[EvidenceSpan]:
    spans = []
    for bucket in spec.buckets:
        hit = _find_bucket(bucket, snap.text)
        if hit:
            spans.append(_span(snap, *hit))
    return spans


def _match_anchors(spec: CriterionSpec, snap: PageSnapshot) -> list[EvidenceSpan]:
    spans = []
    for bucket in spec.buckets:
        for _url, anchor in snap.links:
            hit = _find_bucket(bucket, anchor)
            if not hit:
                continue
            anchor_at = snap.text.find(anchor)
            if anchor_at < 0:
                continue
            spans.append(_span(snap, hit[0], anchor_at + hit[1]))
            break
    return spans


def _eligible_pages(spec: CriterionSpec, crawl: CrawlResult) -> list[PageSnapshot]:
    pages: list[PageSnapshot] = []
    if Scope.HOMEPAGE in spec.scope:
        pages.append(crawl.homepage)
    if Scope.PRIVACY_PAGES in spec.scope:
        pages.extend(crawl.privacy_pages())
    if Scope.ANY_PAGE in spec.scope:
        pages.extend(crawl.snapshots)
    seen: set[int] = set()
    unique = []
    for page in pages:
        if id(page) not in seen:
            seen.add(id(page))
            unique.append(page)
    return unique


def match_criterion(spec: CriterionSpec, crawl: CrawlResult) -> CriterionResult:
    """FOUND iff one eligible page matches at least ``spec.threshold`` distinct buckets."""
    best = 0
    candidates: list[tuple[PageSnapshot, Callable]] = [(p, _match_page) for p in _eligible_pages(spec, crawl)]
    if Scope.HOMEPAGE_ANCHORS in spec.scope:
        candidates.append((crawl.homepage, _match_anchors))
    for page, matcher in candidates:
        spans = matcher(spec, page)
        if len(spans) >= spec.threshold:
            return CriterionResult(spec.id, Status.FOUND, tuple(spans), len(spans))
        best = max(best, len(spans))
    return CriterionResult(spec.id, Status.NOT_FOUND, (), best)


def evaluate_crawl(registry: Sequence[CriterionSpec], crawl: CrawlResult) -> dict[CriterionId, CriterionResult]:
    """Evaluate every criterion dependencies-first; unmet dependencies yield SKIPPED."""
    results: dict[CriterionId, CriterionResult] = {}
    for spec in topological_order(registry):
        dep = spec.depends_on
        if dep is not None and results[dep].status is not Status.FOUND:
            results[spec.id] = CriterionResult(spec.id, Status.SKIPPED)
        else:
            results[spec.id] = match_criterion(spec, crawl)
    # Report in registry order, not evaluation order.
    return {spec.id: results[spec.id] for spec in registry}


def recommend(results: dict[CriterionId, CriterionResult], registry: Iterable[CriterionSpec] = ()) -> list[Recommendation]:
    deps = {spec.id: spec.depends_on for spec in registry}
    recs = []
    for cid, result in results.items():
        if result.status is Status.FOUND:
            continue
        if result.status is Status.SKIPPED and deps.get(cid):
            reason = f"Not checked because {deps[cid].value} was not found."
        elif result.status is Status.SKIPPED:
            reason = "Not checked."
        else:
            reason = "Not detected on the crawled pages."
        if cid.is_core:
            message = f"{cid.value}: {reason} {_REMEDIES[cid]} {_PENALTY_NOTE}"
            recs.append(Recommendation(cid, Severity.REQUIRED, message))
        else:
            recs.append(Recommendation(cid, Severity.ADVISORY, f"{cid.value}: {reason} {_REMEDIES[cid]}"))
    return recs


def complaint_instructions(check_id: Optional[str] = None) -> str:
    """The complaint template; ``{check_id}`` is filled when ``check_id`` is given."""
    if check_id is None:
        return _COMPLAINT_TEMPLATE
    return _COMPLAINT_TEMPLATE.replace("{check_id}", check_id)


def select_profile(
    profiles: Sequence[SiteProfile], seed_url: str, profile_hint: Optional[str] = None
) -> Optional[SiteProfile]:
    host = profile_hint or url_host(seed_url)
    domain = registrable_domain(host.strip().lower())
    for profile in profiles:
        if profile.host_pattern == domain:
            return profile
    return None


def _new_check_id() -> str:
    return uuid.uuid4().hex


def execute_check(
    seed: str,
    cfg: Optional[CrawlConfig] = None,
    registry: Optional[Sequence[CriterionSpec]] = None,
    profiles: Sequence[SiteProfile] = (),
    *,
    profile: Optional[SiteProfile] = None,
    profile_hint: Optional[str] = None,
    client: Optional[httpx.Client] = None,
    rate_limiter: HostRateLimiter = default_rate_limiter,
    clock: Callable[[], object] = utc_now,
    id_factory: Callable[[], str] = _new_check_id,
) -> tuple[ComplianceReport, tuple[PageSnapshot, ...]]:
    """Run a full check and also return the snapshots it was computed from.

    ``profile`` overrides profile lookup in ``profiles``.
    """
    if cfg is None or registry is None:
        default_registry, _, default_cfg = default_config()
        cfg = cfg or default_cfg
        registry = registry if registry is not None else default_registry
    check_id = id_factory()
    started_at = clock()
    deadline = time.monotonic() + cfg.total_deadline / 1000.0

    def failed(seed_url: str, error: CheckError) -> tuple[ComplianceReport, tuple]:
        report = ComplianceReport(
            check_id=check_id,
            seed_url=seed_url,
            started_at=started_at,
            finished_at=clock(),
            pages_fetched=0,
            results={},
            verdict=Verdict.ERROR,
            error=error,
        )
        return report, ()

    try:
        seed_url = normalize_url(seed)
    except InvalidURL as exc:
        return failed(seed.strip() if isinstance(seed, str) else repr(seed), CheckError("INVALID_URL", str(exc), str(seed)))

    if profile is None:
        profile = select_profile(profiles, seed_url, profile_hint)

    try:
        try:
            crawl = crawl_site(seed_url, cfg, profile, client=client, rate_limiter=rate_limiter, deadline=deadline)
        except FetchError as exc:
            defaulted = not _HAS_SCHEME_RE.match(seed)
            if not (defaulted and exc.kind is FetchErrorKind.CONNECT_FAILURE and seed_url.startswith("https://")):
                raise
            seed_url = "http://" + seed_url[len("https://") :]
            crawl = crawl_site(seed_url, cfg, profile, client=client, rate_limiter=rate_limiter, deadline=deadline)
    except DeadlineExceeded as exc:
        return failed(seed_url, CheckError("DEADLINE_EXCEEDED", exc.detail, exc.url))
    except FetchError as exc:
        return failed(seed_url, CheckError(exc.kind.value, exc.detail, exc.url, exc.status_code))

    results = evaluate_crawl(registry, crawl)
    ccpa = results.get(CriterionId.CCPA_NOTICE)
    found = ccpa is not None and ccpa.status is Status.FOUND
    verdict = Verdict.COMPLIANT_SIGNALS_FOUND if found else Verdict.CCPA_NOT_FOUND
    report = ComplianceReport(
        check_id=check_id,
        seed_url=seed_url,
        started_at=started_at,
        finished_at=clock(),
        pages_fetched=len(crawl.snapshots),
        results=results,
        verdict=verdict,
        ccpa_page_url=ccpa.evidence[0].page_url if found else None,
        recommendations=tuple(recommend(results, registry)),
        complaint_instructions=None if found else complaint_instructions(check_id),
        snapshot_ids=tuple(dict.fromkeys(s.snapshot_id for s in crawl.snapshots)),
        budget_exhausted=crawl.budget_exhausted,
        fetch_errors=tuple(CheckError(e.kind.value, e.detail, e.url, e.status_code) for e in crawl.errors),
    )
    return report, crawl.snapshots


def run_check(
    seed: str,
    cfg: Optional[CrawlConfig] = None,
    registry: Optional[Sequence[CriterionSpec]] = None,
    profiles: Sequence[SiteProfile] = (),
    **kwargs,
) -> ComplianceReport:
    """Normalize, crawl, evaluate, and assemble a :class:`ComplianceReport`."""
    return execute_check(seed, cfg, registry, profiles, **kwargs)[0]
