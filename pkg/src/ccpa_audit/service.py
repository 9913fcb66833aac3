"""HTTP API: run a check, fetch archived snapshots, health probe.

Every check request crawls afresh; nothing is served from a cache. Non-200
responses carry ``{"error": ..., "detail": ...}``.
"""

from __future__ import annotations

import json
import logging
import tempfile
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

from fastapi import FastAPI, Request
from fastapi.responses import Response
from starlette.concurrency import run_in_threadpool
from starlette.exceptions import HTTPException as StarletteHTTPException

from .archive import Archive, ArchiveIOError, ArchiveNotFound
from .engine import execute_check
from .model import (
    ComplianceReport,
    CrawlConfig,
    CriterionSpec,
    SiteProfile,
    Verdict,
    default_config,
    format_timestamp,
    render_json,
    report_payload,
)

__all__ = ["ServiceSettings", "cors_filter", "create_app", "error_response", "response_for_report"]

logger = logging.getLogger(__name__)

CORS_METHODS = ("GET", "POST")
CHECK_PATH = "/api/v1/check"
SNAPSHOT_PATH = "/api/v1/checks/{check_id}/snapshots/{snapshot_id}"


@dataclass
class ServiceSettings:
    registry: Sequence[CriterionSpec]
    profiles: Sequence[SiteProfile]
    crawl: CrawlConfig
    archive: Archive
    allowed_origins: frozenset[str] = frozenset()
    check_kwargs: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_defaults(cls, archive_dir: Optional[str] = None, **overrides) -> ServiceSettings:
        registry, profiles, crawl = default_config()
        archive = Archive(archive_dir or tempfile.mkdtemp(prefix="ccpa-archive-"))
        values = dict(registry=registry, profiles=profiles, crawl=crawl, archive=archive)
        values.update(overrides)
        return cls(**values)


def cors_filter(origin: Optional[str], allowed: frozenset[str]) -> Optional[bool]:
    """None when there is no Origin (non-browser caller), else whether it is allowlisted."""
    if origin is None:
        return None
    return origin in allowed or "*" in allowed


def error_response(status: int, error: str, detail: Optional[str] = None, **extra: Any) -> Response:
    body: dict[str, Any] = {"error": error}
    if detail is not None:
        body["detail"] = detail
    body.update(extra)
    return Response(render_json(body), status_code=status, media_type="application/json")


def response_for_report(report: ComplianceReport) -> Response:
    """Map a finished check onto an HTTP response."""
    if report.verdict is Verdict.ERROR:
        err = report.error
        if err.kind == "INVALID_URL":
            return error_response(400, "bad_input", err.detail)
        if err.kind == "DEADLINE_EXCEEDED":
            return error_response(504, "deadline_exceeded", err.detail)
        return error_response(502, "fetch_failed", err.detail, kind=err.kind)
    return Response(
        render_json(report_payload(report)),
        status_code=200,
        media_type="application/json",
        headers={"Cache-Control": "no-store"},
    )


def _parse_check_body(raw: bytes) -> tuple[str, Optional[str]]:
    try:
        body = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"request body is not JSON: {exc}") from None
    if not isinstance(body, dict):
        raise ValueError("request body must be a JSON object")
    url = body.get("url")
    if not isinstance(url, str):
        raise ValueError('field "url" must be a string')
    hint = body.get("profile_hint")
    if hint is not None and not isinstance(hint, str):
        raise ValueError('field "profile_hint" must be a string')
    return url, hint


def create_app(settings: ServiceSettings) -> FastAPI:
    app = FastAPI(title="ccpa-audit", docs_url=None, redoc_url=None, openapi_url=None)
    app.state.settings = settings

    @app.middleware("http")
    async def cors(request: Request, call_next: Callable):
        origin = request.headers.get("origin")
        allowed = cors_filter(origin, settings.allowed_origins)
        preflight = request.method == "OPTIONS" and "access-control-request-method" in request.headers
        if preflight and allowed is not None:
            if not allowed:
                return error_response(403, "cors_denied", f"origin {origin} is not allowed")
            requested = request.headers.get("access-control-request-headers", "content-type")
            return Response(
                status_code=204,
                headers={
                    "Access-Control-Allow-Origin": origin,
                    "Access-Control-Allow-Methods": ", ".join(CORS_METHODS),
                    "Access-Control-Allow-Headers": requested,
                    "Access-Control-Max-Age": "600",
                    "Vary": "Origin",
                },
            )
        response = await call_next(request)
        if allowed:
            response.headers["Access-Control-Allow-Origin"] = origin
            response.headers["Vary"] = "Origin"
        return response

    @app.exception_handler(StarletteHTTPException)
    async def http_error(request: Request, exc: StarletteHTTPException):
        name = {404: "not_found", 405: "method_not_allowed"}.get(exc.status_code, "http_error")
        return error_response(exc.status_code, name, str(exc.detail))

    @app.exception_handler(Exception)
    async def internal_error(request: Request, exc: Exception):
        logger.exception("unhandled error")
        return error_response(500, "internal_error", type(exc).__name__)

    @app.get("/healthz")
    def healthz():
        return Response(render_json({"status": "ok"}), media_type="application/json")

    @app.post(CHECK_PATH)
    async def handle_check(request: Request):
        try:
            url, hint = _parse_check_body(await request.body())
        except ValueError as exc:
            return error_response(400, "bad_input", str(exc))
        logger.info("check requested for %s", url)
        report, snapshots = await run_in_threadpool(
            execute_check,
            url,
            settings.crawl,
            settings.registry,
            settings.profiles,
            profile_hint=hint,
            **settings.check_kwargs,
        )
        if report.verdict is not Verdict.ERROR:
            try:
                await run_in_threadpool(settings.archive.store, report, snapshots)
            except ArchiveIOError as exc:
                logger.error("archive write failed: %s", exc)
                return error_response(500, "io_error", str(exc))
        return response_for_report(report)

    @app.get(SNAPSHOT_PATH)
    def handle_snapshot(check_id: str, snapshot_id: str):
        try:
            snap = settings.archive.load_check_snapshot(check_id, snapshot_id)
        except ArchiveNotFound:
            return error_response(404, "not_found", f"no snapshot {snapshot_id} in check {check_id}")
        return Response(
            snap.body,
            status_code=200,
            headers={"Content-Type": snap.content_type, "X-Fetched-At": format_timestamp(snap.fetched_at)},
        )

    return app


def serve(app: FastAPI, sock, graceful_timeout: float = 5.0) -> None:
    """Run ``app`` on an already-bound socket until SIGINT/SIGTERM."""
    import uvicorn

    config = uvicorn.Config(app, log_level="info", timeout_graceful_shutdown=graceful_timeout)
    server = uvicorn.Server(config)
    server.run(sockets=[sock])

