from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccpa_audit.urls import InvalidURL, normalize_url, registrable_domain, same_site, url_host
from rfc3986_oracle import oracle_normalize, random_url, remove_dot_segments


@pytest.mark.parametrize(
    "raw, expected",
    [
        ("example.com", "https://example.com/"),
        ("www.example.com/privacy", "https://www.example.com/privacy"),
        (" HTTP://A.COM:80/b/../c#frag ", "http://a.com/c"),
        ("https://Example.COM:443", "https://example.com/"),
        ("http://example.com:8080/x", "http://example.com:8080/x"),
        ("example.com:8080/x", "https://example.com:8080/x"),
        ("//example.com/a", "https://example.com/a"),
        ("http://user:pw@example.com/", "http://example.com/"),
        ("http://example.com./", "http://example.com/"),
        ("http://example.com/a%7eb%2fc", "http://example.com/a~b%2Fc"),
        ("http://example.com/a b", "http://example.com/a%20b"),
        ("http://example.com/?", "http://example.com/"),
        ("http://example.com/p?q=1#x", "http://example.com/p?q=1"),
        ("http://bücher.de/", "http://xn--bcher-kva.de/"),
        ("http://[::1]:8080/", "http://[::1]:8080/"),
        ("http://127.0.0.1:80/", "http://127.0.0.1/"),
        ("http://example.com/a/./b/../../c/", "http://example.com/c/"),
        ("http://example.com/a//.", "http://example.com/a//"),
    ],
)
def test_normalize_examples(raw, expected):
    assert normalize_url(raw) == expected


@pytest.mark.parametrize(
    "raw",
    ["", "   ", "ftp://example.com/", "mailto:a@b.c", "javascript:alert(1)", "http://", "http://exa mple.com/",
     "http://example.com:99999/", "http://example.com:8x/", "http://[::1/", "not a url::"],
)
def test_normalize_rejects(raw):
    with pytest.raises(InvalidURL):
        normalize_url(raw)


def test_rejects_non_string():
    with pytest.raises(InvalidURL):
        normalize_url(None)  # type: ignore[arg-type]


@pytest.mark.parametrize(
    "path, expected",
    # Worked examples from RFC 3986 section 5.4.
    [("/a/b/c/./../../g", "/a/g"), ("mid/content=5/../6", "mid/6"), ("/./g", "/g"), ("/../..", "/")],
)
def test_oracle_dot_segments_match_rfc_examples(path, expected):
    assert remove_dot_segments(path) == expected


def test_matches_oracle_on_seeded_sample():
    rng = random.Random(7)
    for _ in range(2000):
        url = random_url(rng)
        assert normalize_url(url) == oracle_normalize(url), url


@settings(max_examples=300, deadline=None)
@given(st.randoms(use_true_random=False))
def test_idempotent_and_oracle_equal(rng):
    url = random_url(rng)
    once = normalize_url(url)
    assert normalize_url(once) == once
    assert once == oracle_normalize(url)


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=40))
def test_arbitrary_text_normalizes_or_rejects(text):
    try:
        once = normalize_url(text)
    except InvalidURL:
        return
    assert normalize_url(once) == once
    assert once.startswith(("http://", "https://"))


@pytest.mark.parametrize(
    "host, domain",
    [
        ("www.example.com", "example.com"),
        ("a.b.example.co.uk", "example.co.uk"),
        ("example.com", "example.com"),
        ("127.0.0.1", "127.0.0.1"),
        ("localhost", "localhost"),
        ("[::1]", "[::1]"),
    ],
)
def test_registrable_domain(host, domain):
    assert registrable_domain(host) == domain


def test_same_site_and_host():
    assert same_site("https://www.example.com/", "http://shop.example.com/x")
    assert not same_site("https://example.com/", "https://example.org/")
    assert url_host("http://example.com:8080/x") == "example.com"
