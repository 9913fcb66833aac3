from __future__ import annotations

import json

import pytest
from fastapi.testclient import TestClient

from ccpa_audit.archive import Archive
from ccpa_audit.fetch import HostRateLimiter
from ccpa_audit.model import CrawlConfig, default_config
from ccpa_audit.service import ServiceSettings, cors_filter, create_app
from helpers import page
from service_helpers import assert_error_body, closed_port

ORIGIN = "https://app.example.com"


@pytest.fixture
def client(tmp_path, fast_cfg):
    registry, profiles, _ = default_config()
    settings = ServiceSettings(
        registry=registry,
        profiles=profiles,
        crawl=fast_cfg,
        archive=Archive(tmp_path / "archive"),
        allowed_origins=frozenset({ORIGIN}),
        check_kwargs={"rate_limiter": HostRateLimiter()},
    )
    with TestClient(create_app(settings)) as c:
        c.settings = settings
        yield c


def test_healthz(client):
    resp = client.get("/healthz")
    assert resp.status_code == 200 and resp.json() == {"status": "ok"}


def test_check_full_compliance(client, corpus_server):
    resp = client.post("/api/v1/check", json={"url": f"{corpus_server.address}/full-compliance/"})
    assert resp.status_code == 200
    assert resp.headers["cache-control"] == "no-store"
    body = resp.json()
    assert body["ccpa_result"] == {
        "privacy_notice": True,
        "ccpa_notice": True,
        "notice_of_collection": True,
        "right_to_know": True,
        "right_to_delete": True,
        "right_to_opt_out": True,
    }
    assert body["verdict"] == "COMPLIANT_SIGNALS_FOUND"
    assert body["started_at"].endswith("Z")
    assert client.settings.archive.load(body["check_id"]).check_id == body["check_id"]


def test_snapshot_retrieval(client, corpus_server):
    body = client.post("/api/v1/check", json={"url": corpus_server.url("know-only/")}).json()
    evidence = body["results"]["CCPA_NOTICE"]["evidence"][0]
    resp = client.get(f"/api/v1/checks/{body['check_id']}/snapshots/{evidence['snapshot_id']}")
    assert resp.status_code == 200
    assert resp.headers["content-type"].startswith("text/html")
    assert resp.headers["x-fetched-at"].endswith("Z")
    on_disk = (corpus_server._httpd.root / "know-only" / "privacy.html").read_bytes()
    assert resp.content == on_disk


@pytest.mark.parametrize(
    "payload",
    [{"url": "http://exa mple.com/"}, {"url": "ftp://example.com/"}, {"url": ""}, {"url": 5}, {}, [], "nope"],
)
def test_bad_input(client, payload):
    resp = client.post("/api/v1/check", content=json.dumps(payload))
    assert resp.status_code == 400
    assert_error_body(resp.content, "bad_input")


def test_non_json_body(client):
    resp = client.post("/api/v1/check", content=b"\xff not json")
    assert resp.status_code == 400
    assert_error_body(resp.content, "bad_input")


def test_unreachable_host(client):
    resp = client.post("/api/v1/check", json={"url": f"http://127.0.0.1:{closed_port()}/"})
    assert resp.status_code == 502
    body = assert_error_body(resp.content, "fetch_failed")
    assert body["kind"] == "CONNECT_FAILURE"


def test_unknown_snapshot(client):
    resp = client.get("/api/v1/checks/abc/snapshots/" + "0" * 64)
    assert resp.status_code == 404
    assert_error_body(resp.content, "not_found")


def test_unknown_route_and_method(client):
    resp = client.get("/nope")
    assert resp.status_code == 404
    assert_error_body(resp.content, "not_found")
    resp = client.get("/api/v1/check")
    assert resp.status_code == 405
    assert_error_body(resp.content, "method_not_allowed")


def test_deadline_maps_to_504(client, site):
    site.write("index.html", "<p>slow</p>")
    site.server.delays["/"] = 5000
    client.settings.crawl = CrawlConfig(total_deadline=500, per_fetch_timeout=500, politeness_delay=1)
    resp = client.post("/api/v1/check", json={"url": site.url("")})
    assert resp.status_code == 504
    assert_error_body(resp.content, "deadline_exceeded")


def test_fresh_result_after_mutation(client, site):
    site.write("index.html", page("home", links=[("privacy.html", "Privacy Policy")]))
    site.write("privacy.html", page("privacy policy"))
    first = client.post("/api/v1/check", json={"url": site.url("")}).json()
    site.write("privacy.html", page("privacy policy for the ccpa"))
    second = client.post("/api/v1/check", json={"url": site.url("")}).json()
    assert first["ccpa_result"]["ccpa_notice"] is False
    assert second["ccpa_result"]["ccpa_notice"] is True
    assert first["check_id"] != second["check_id"]


def test_cors_preflight_allowed(client):
    resp = client.options(
        "/api/v1/check",
        headers={"Origin": ORIGIN, "Access-Control-Request-Method": "POST", "Access-Control-Request-Headers": "content-type"},
    )
    assert resp.status_code == 204
    assert resp.headers["access-control-allow-origin"] == ORIGIN
    assert resp.headers["access-control-allow-methods"] == "GET, POST"


def test_cors_disallowed_origin(client):
    resp = client.options(
        "/api/v1/check", headers={"Origin": "https://evil.example", "Access-Control-Request-Method": "POST"}
    )
    assert resp.status_code == 403
    assert_error_body(resp.content, "cors_denied")


def test_cors_headers_on_simple_request(client):
    assert client.get("/healthz", headers={"Origin": ORIGIN}).headers["access-control-allow-origin"] == ORIGIN
    assert "access-control-allow-origin" not in client.get("/healthz").headers
    assert "access-control-allow-origin" not in client.get("/healthz", headers={"Origin": "https://x.test"}).headers


def test_cors_filter():
    assert cors_filter(None, frozenset()) is None
    assert cors_filter("https://a", frozenset({"https://a"})) is True
    assert cors_filter("https://b", frozenset({"https://a"})) is False
    assert cors_filter("https://b", frozenset({"*"})) is True
