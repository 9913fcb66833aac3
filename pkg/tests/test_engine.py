from __future__ import annotations

import re
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccpa_audit.engine import (
    COMPLAINT_TEMPLATE_VERSION,
    complaint_instructions,
    evaluate_crawl,
    execute_check,
    match_criterion,
    recommend,
    run_check,
    select_profile,
)
from ccpa_audit.fetch import HostRateLimiter
from ccpa_audit.model import (
    CORE_CRITERIA,
    CrawlConfig,
    CriterionId,
    CriterionSpec,
    KeywordBucket,
    Scope,
    Severity,
    SiteProfile,
    Status,
    Verdict,
    default_config,
)
from helpers import crawl_of, fixed_clock, snap

HOME = "http://e.test/"
PRIV = "http://e.test/privacy"


def spec(*buckets, threshold=1, scope=(Scope.PRIVACY_PAGES,), cid=CriterionId.RIGHT_TO_KNOW, dep=None):
    return CriterionSpec(cid, "", tuple(KeywordBucket(tuple(b)) for b in buckets), threshold, frozenset(scope), dep)


def test_threshold_counts_distinct_buckets_on_one_page():
    s = spec(["right to know"], ["request access"], ["access your data"], threshold=2)
    one = crawl_of(snap(HOME, ""), snap(PRIV, "you have the right to know. the right to know is yours."))
    r = match_criterion(s, one)
    assert (r.status, r.matched_bucket_count) == (Status.NOT_FOUND, 1)
    two = crawl_of(snap(HOME, ""), snap(PRIV, "the right to know and to request access"))
    r = match_criterion(s, two)
    assert r.status is Status.FOUND and r.matched_bucket_count == 2
    assert [e.matched_phrase for e in r.evidence] == ["right to know", "request access"]


def test_buckets_not_pooled_across_pages():
    s = spec(["right to know"], ["request access"], threshold=2)
    crawl = crawl_of(snap(HOME, ""), snap(PRIV, "right to know"), snap(PRIV + "2", "request access"))
    assert match_criterion(s, crawl).status is Status.NOT_FOUND


def test_alternative_phrases_in_bucket_count_once():
    s = spec(["right to know", "request access"], ["erase"], threshold=2)
    crawl = crawl_of(snap(HOME, ""), snap(PRIV, "right to know and request access"))
    assert match_criterion(s, crawl).status is Status.NOT_FOUND


@pytest.mark.parametrize(
    "text, found",
    [("our ccpa notice", True), ("ccpas", False), ("xccpa", False), ("(ccpa)", True), ("ccpa.", True), ("c c p a", False)],
)
def test_phrase_word_boundaries(text, found):
    crawl = crawl_of(snap(HOME, ""), snap(PRIV, text))
    assert match_criterion(spec(["ccpa"]), crawl).found is found


def test_regex_bucket():
    s = CriterionSpec(CriterionId.CONTACT_METHODS, "", (KeywordBucket(patterns=(r"1-800-\d{3}-\d{4}",)),))
    crawl = crawl_of(snap(HOME, ""), snap(PRIV, "call 1-800-555-0100 today"))
    r = match_criterion(s, crawl)
    assert r.found and r.evidence[0].matched_phrase == "1-800-555-0100" and r.evidence[0].offset == 5


def test_scope_homepage_only():
    s = spec(["notice at collection"], scope=(Scope.HOMEPAGE,))
    assert not match_criterion(s, crawl_of(snap(HOME, ""), snap(PRIV, "notice at collection"))).found
    assert match_criterion(s, crawl_of(snap(HOME, "a notice at collection"))).found


def test_scope_any_page_includes_non_candidates():
    s = spec(["toll-free"], scope=(Scope.ANY_PAGE,))
    crawl = crawl_of(snap(HOME, ""), others=(snap("http://e.test/contact", "toll-free line", depth=1),))
    assert match_criterion(s, crawl).found


def test_anchor_scope_ignores_body_text():
    s = spec(["do not sell my personal information"], scope=(Scope.HOMEPAGE_ANCHORS,))
    text_only = snap(HOME, "we do not sell my personal information claims")
    assert not match_criterion(s, crawl_of(text_only)).found
    linked = snap(HOME, "home do not sell my personal information", links=(("http://e.test/dns", "do not sell my personal information"),))
    r = match_criterion(s, crawl_of(linked))
    assert r.found
    ev = r.evidence[0]
    assert linked.text[ev.offset : ev.offset + len(ev.matched_phrase)] == ev.matched_phrase


def test_evidence_spans_are_sound():
    text = "x " * 300 + "right to know" + " y" * 300
    r = match_criterion(spec(["right to know"]), crawl_of(snap(HOME, ""), snap(PRIV, text)))
    ev = r.evidence[0]
    assert text[ev.offset : ev.offset + len(ev.matched_phrase)] == ev.matched_phrase
    assert len(ev.excerpt) <= 200 and ev.matched_phrase in ev.excerpt
    assert ev.page_url == PRIV


def test_gating_skips_dependents(registry):
    result = evaluate_crawl(registry, crawl_of(snap(HOME, "right to know ccpa")))
    assert result[CriterionId.PRIVACY_NOTICE].status is Status.NOT_FOUND
    for cid in CORE_CRITERIA[1:]:
        assert result[cid].status is Status.SKIPPED
        assert result[cid].evidence == ()
    assert list(result) == [s.id for s in registry]


def test_recommendations_only_for_missing_core(registry):
    crawl = crawl_of(snap(HOME, ""), snap(PRIV, "privacy policy under the ccpa: right to know"))
    results = evaluate_crawl(registry, crawl)
    recs = recommend(results, registry)
    core = {r.criterion for r in recs if r.severity is Severity.REQUIRED}
    assert core == {CriterionId.NOTICE_OF_COLLECTION, CriterionId.RIGHT_TO_DELETE, CriterionId.RIGHT_TO_OPT_OUT}
    assert all(r.criterion.is_core for r in recs if r.severity is Severity.REQUIRED)
    assert all(not r.criterion.is_core for r in recs if r.severity is Severity.ADVISORY)
    assert all("$2,500" in r.message and "$7,500" in r.message for r in recs if r.severity is Severity.REQUIRED)


def test_complaint_template():
    text = complaint_instructions()
    assert text.count("{check_id}") == 1
    assert "Office of the Attorney General" in text
    assert "https://oag.ca.gov/" in text
    assert f"v{COMPLAINT_TEMPLATE_VERSION}" in text
    filled = complaint_instructions("abc123")
    assert "abc123" in filled and "{check_id}" not in filled


def test_select_profile():
    profiles = (SiteProfile("example.com", privacy_page_url="https://example.com/p"),)
    assert select_profile(profiles, "https://www.example.com/") is profiles[0]
    assert select_profile(profiles, "https://other.org/") is None
    assert select_profile(profiles, "https://other.org/", profile_hint="shop.example.com") is profiles[0]


# --- corpus-backed checks ---------------------------------------------------------


def check(server, site, cfg, **kw):
    return run_check(server.url(f"{site}/"), cfg, rate_limiter=HostRateLimiter(), **kw)


def test_full_compliance(corpus_server, fast_cfg, registry):
    report = check(corpus_server, "full-compliance", fast_cfg, registry=registry)
    assert report.verdict is Verdict.COMPLIANT_SIGNALS_FOUND
    assert all(report.booleans().values())
    assert report.ccpa_page_url == corpus_server.url("full-compliance/privacy.html")
    assert report.complaint_instructions is None
    assert report.status_of(CriterionId.DO_NOT_SELL_LINK) is Status.FOUND
    assert report.status_of(CriterionId.CONTACT_METHODS) is Status.FOUND
    assert not [r for r in report.recommendations if r.severity is Severity.REQUIRED]


def test_no_privacy_page(corpus_server, fast_cfg, registry):
    report = check(corpus_server, "no-privacy-page", fast_cfg, registry=registry)
    assert report.verdict is Verdict.CCPA_NOT_FOUND
    assert report.status_of(CriterionId.PRIVACY_NOTICE) is Status.NOT_FOUND
    for cid in CORE_CRITERIA[1:]:
        assert report.status_of(cid) is Status.SKIPPED
    assert report.check_id in report.complaint_instructions
    assert {r.criterion for r in report.recommendations if r.severity is Severity.REQUIRED} == set(CORE_CRITERIA)


def test_rights_without_optout(corpus_server, fast_cfg, registry):
    report = check(corpus_server, "rights-without-optout", fast_cfg, registry=registry)
    flags = report.booleans()
    assert flags.pop("right_to_opt_out") is False
    assert all(flags.values())


def test_http_fallback_for_schemeless_seed(corpus_server, fast_cfg, registry):
    report = run_check(f"{corpus_server.address}/full-compliance/", fast_cfg, registry, rate_limiter=HostRateLimiter())
    assert report.seed_url.startswith("http://")
    assert report.verdict is Verdict.COMPLIANT_SIGNALS_FOUND


def test_invalid_url_is_error(fast_cfg, registry):
    report = run_check("http://exa mple.com/", fast_cfg, registry)
    assert report.verdict is Verdict.ERROR
    assert report.error.kind == "INVALID_URL"
    assert report.results == {}


def test_deadline_on_slow_homepage(site, registry):
    site.write("index.html", "<p>slow</p>")
    site.server.delays["/"] = 5000
    cfg = CrawlConfig(total_deadline=800, per_fetch_timeout=800, politeness_delay=1)
    started = time.monotonic()
    report = run_check(site.url(""), cfg, registry, rate_limiter=HostRateLimiter())
    elapsed = time.monotonic() - started
    assert report.verdict is Verdict.ERROR
    assert report.error.kind == "DEADLINE_EXCEEDED"
    assert elapsed < 0.8 + 1.0
    assert (report.finished_at - report.started_at).total_seconds() <= 0.8 + 0.05


def test_slow_subpage_gives_partial_report(site, registry):
    site.write("index.html", '<a href="privacy.html">Privacy Policy</a> privacy policy')
    site.write("privacy.html", "ccpa")
    site.server.delays["/privacy.html"] = 5000
    cfg = CrawlConfig(total_deadline=700, per_fetch_timeout=700, politeness_delay=1)
    report = run_check(site.url(""), cfg, registry, rate_limiter=HostRateLimiter())
    assert report.verdict is Verdict.CCPA_NOT_FOUND
    assert report.budget_exhausted
    assert report.pages_fetched == 1


def test_injected_clock_and_id(corpus_server, fast_cfg, registry):
    report, snaps = execute_check(
        corpus_server.url("know-only/"), fast_cfg, registry, rate_limiter=HostRateLimiter(), clock=fixed_clock(), id_factory=lambda: "fixed"
    )
    assert report.check_id == "fixed"
    assert report.started_at.year == 2024
    assert set(report.snapshot_ids) == {s.snapshot_id for s in snaps}


# --- properties -------------------------------------------------------------------

_PHRASES = ["privacy policy", "ccpa", "notice at collection", "right to know", "right to delete", "do not sell", "toll-free"]


@st.composite
def synthetic_crawls(draw):
    def text():
        return " filler ".join(draw(st.lists(st.sampled_from(_PHRASES), max_size=4)))

    home = snap(HOME, text())
    privacy = [snap(f"{PRIV}{i}", text(), depth=1) for i in range(draw(st.integers(0, 3)))]
    return home, privacy


@settings(max_examples=100, deadline=None)
@given(synthetic_crawls(), st.sampled_from(["", *_PHRASES]))
def test_adding_a_page_never_loses_a_finding(crawl_parts, extra_phrase):
    registry = default_config()[0]
    home, privacy = crawl_parts
    before = evaluate_crawl(registry, crawl_of(home, *privacy))
    extra = snap("http://e.test/extra", f"more {extra_phrase}", depth=1)
    for position in range(len(privacy) + 1):
        after = evaluate_crawl(registry, crawl_of(home, *privacy[:position], extra, *privacy[position:]))
        for cid, result in before.items():
            if result.found:
                assert after[cid].found, cid
        assert list(after) == list(before)
        for result in after.values():
            if result.found:
                for ev in result.evidence:
                    page = next(p for p in (home, extra, *privacy) if p.snapshot_id == ev.snapshot_id)
                    assert page.text[ev.offset :].startswith(ev.matched_phrase)
                    assert re.sub(r"\s", "", ev.matched_phrase) in re.sub(r"\s", "", ev.excerpt)
