"""Command line entry points: ``check``, ``serve``, ``fixtures`` and ``eval``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import signal
import socket
import sys
import tempfile
import threading
from typing import Optional, Sequence

from . import __version__
from .archive import Archive, ArchiveIOError
from .engine import execute_check
from .model import (
    CORE_CRITERIA,
    ComplianceReport,
    CrawlConfig,
    SchemaError,
    Status,
    Verdict,
    load_config,
    render_json,
    report_payload,
)

EXIT_OK, EXIT_NOT_FOUND, EXIT_ERROR = 0, 1, 2
DEFAULT_BIND = "127.0.0.1:8080"
_MARKS = {Status.FOUND: "✓", Status.NOT_FOUND: "✗", Status.SKIPPED: "–"}


def parse_bind(text: str) -> tuple[str, int]:
    """``"host:port"``, ``"[v6]:port"`` or ``":port"`` (all interfaces)."""
    host, sep, port = text.strip().rpartition(":")
    if not sep or not port.isdigit() or int(port) > 65535:
        raise ValueError(f"expected HOST:PORT, got {text!r}")
    host = host.strip("[]") or "0.0.0.0"
    return host, int(port)


def bind_socket(text: str) -> socket.socket:
    host, port = parse_bind(text)
    family = socket.AF_INET6 if ":" in host else socket.AF_INET
    sock = socket.socket(family, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
    except OSError:
        sock.close()
        raise
    sock.listen(128)
    return sock


def _crawl_overrides(cfg: CrawlConfig, args: argparse.Namespace) -> CrawlConfig:
    changes = {}
    if args.max_pages is not None:
        changes["max_pages"] = args.max_pages
    if args.max_depth is not None:
        changes["max_depth"] = args.max_depth
    if args.deadline_ms is not None:
        changes["total_deadline"] = args.deadline_ms
        changes["per_fetch_timeout"] = min(cfg.per_fetch_timeout, args.deadline_ms)
    return dataclasses.replace(cfg, **changes) if changes else cfg


def render_report_text(report: ComplianceReport) -> str:
    lines = [
        f"check {report.check_id}",
        f"site: {report.seed_url}",
        f"verdict: {report.verdict.value}",
        f"pages fetched: {report.pages_fetched}",
        "",
    ]
    width = max(len(c.result_key) for c in CORE_CRITERIA)
    for cid in CORE_CRITERIA:
        status = report.status_of(cid)
        lines.append(f"  {_MARKS.get(status, '?')}  {cid.result_key}")
    for cid, result in report.results.items():
        if not cid.is_core:
            lines.append(f"  {_MARKS[result.status]}  {cid.result_key:<{width}}  (advisory)")
    if report.ccpa_page_url:
        lines += ["", f"CCPA section: {report.ccpa_page_url}"]
    if report.recommendations:
        lines += ["", "Recommendations:"]
        lines += [f"  [{r.severity.value}] {r.message}" for r in report.recommendations]
    if report.complaint_instructions:
        lines += ["", report.complaint_instructions.rstrip()]
    return "\n".join(lines) + "\n"


def cmd_check(args: argparse.Namespace) -> int:
    try:
        registry, profiles, cfg = load_config(args.config)
    except (OSError, SchemaError) as exc:
        print(f"error: cannot load config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        cfg = _crawl_overrides(cfg, args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    report, snapshots = execute_check(args.url, cfg, registry, profiles, profile_hint=args.profile)
    if report.verdict is Verdict.ERROR:
        err = report.error
        print(f"error: {err.kind}: {err.detail}", file=sys.stderr)
        if args.format == "json":
            sys.stdout.buffer.write(render_json({"error": err.kind, "detail": err.detail, "url": err.url}))
        return EXIT_ERROR

    if args.archive:
        try:
            Archive(args.archive).store(report, snapshots)
        except ArchiveIOError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_ERROR

    if args.format == "json":
        sys.stdout.buffer.write(render_json(report_payload(report)))
    else:
        sys.stdout.write(render_report_text(report))
    sys.stdout.flush()
    return EXIT_OK if report.verdict is Verdict.COMPLIANT_SIGNALS_FOUND else EXIT_NOT_FOUND


def cmd_serve(args: argparse.Namespace) -> int:
    from .service import ServiceSettings, create_app, serve

    bind = args.bind or os.environ.get("CCPA_BIND") or DEFAULT_BIND
    origins_raw = args.allowed_origins if args.allowed_origins is not None else os.environ.get("CCPA_ALLOWED_ORIGINS", "")
    origins = frozenset(o.strip() for o in origins_raw.split(",") if o.strip())
    archive_dir = args.archive or os.environ.get("CCPA_ARCHIVE")
    try:
        registry, profiles, cfg = load_config(args.config)
    except (OSError, SchemaError) as exc:
        print(f"error: cannot load config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        sock = bind_socket(bind)
    except (OSError, ValueError) as exc:
        print(f"error: cannot bind {bind}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    settings = ServiceSettings(
        registry=registry,
        profiles=profiles,
        crawl=cfg,
        archive=Archive(archive_dir or tempfile.mkdtemp(prefix="ccpa-archive-")),
        allowed_origins=origins,
    )
    print(f"serving on http://{bind} (archive {settings.archive.root})", file=sys.stderr, flush=True)
    # uvicorn drains in-flight requests, then re-raises the stop signal against
    # these handlers; make that a normal exit instead of death by signal.
    for signum in (signal.SIGINT, signal.SIGTERM):
        signal.signal(signum, lambda *_: None)
    serve(create_app(settings), sock, graceful_timeout=5.0)
    return EXIT_OK


def cmd_fixtures_serve(args: argparse.Namespace) -> int:
    from .corpus.server import FixtureServer, parse_delay

    try:
        delays = dict(parse_delay(d) for d in args.delay_ms or ())
        host, port = parse_bind(args.bind)
        server = FixtureServer(args.dir, host, port, delays)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"serving {args.dir} on http://{server.address}/", file=sys.stderr, flush=True)
    stop = threading.Event()

    def shutdown(signum, frame):
        stop.set()

    signal.signal(signal.SIGTERM, shutdown)
    signal.signal(signal.SIGINT, shutdown)
    server.start()
    stop.wait()
    server.stop()
    return EXIT_OK


def cmd_fixtures_generate(args: argparse.Namespace) -> int:
    from .corpus import bundled_spec, generate_fixtures

    try:
        sites = generate_fixtures(args.spec or bundled_spec(), args.out)
    except (OSError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"wrote {len(sites)} sites to {args.out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    from .corpus import (
        MissingSiteError,
        bundled_spec,
        bundled_truth,
        evaluate,
        generate_fixtures,
        render_metrics_text,
    )
    from .corpus.server import FixtureServer

    try:
        registry, _, cfg = load_config(args.config)
    except (OSError, SchemaError) as exc:
        print(f"error: cannot load config: {exc}", file=sys.stderr)
        return EXIT_ERROR

    with tempfile.TemporaryDirectory(prefix="ccpa-corpus-") as scratch:
        corpus = args.corpus
        if corpus is None:
            corpus = scratch
            generate_fixtures(bundled_spec(), corpus)
        server = None
        addr = args.fixture_addr
        if addr is None:
            server = FixtureServer(corpus).start()
            addr = server.address
        try:
            metrics = evaluate(
                corpus,
                args.truth or bundled_truth(),
                addr,
                cfg,
                registry,
                parallel=args.parallel,
                include_probes=args.include_probes,
            )
        except (MissingSiteError, SchemaError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_ERROR
        finally:
            if server is not None:
                server.stop()

    if args.format == "json":
        sys.stdout.buffer.write(render_json(metrics.to_dict()))
    else:
        sys.stdout.write(render_metrics_text(metrics))
    sys.stdout.flush()
    return EXIT_OK if not metrics.mismatches else EXIT_NOT_FOUND


def _positive(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccpa-audit", description="Check websites for CCPA privacy-notice signals.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log crawl progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    check = sub.add_parser("check", help="check one website")
    check.add_argument("url")
    check.add_argument("--config", help="criteria/crawl config JSON (default: bundled)")
    check.add_argument("--max-pages", type=_positive)
    check.add_argument("--max-depth", type=_positive)
    check.add_argument("--deadline-ms", type=_positive)
    check.add_argument("--format", choices=("json", "text"), default="text")
    check.add_argument("--archive", help="store the report and page snapshots in this directory")
    check.add_argument("--profile", help="use the site profile for this host")
    check.set_defaults(func=cmd_check)

    srv = sub.add_parser("serve", help="run the HTTP API")
    srv.add_argument("--bind", help=f"HOST:PORT (env CCPA_BIND, default {DEFAULT_BIND})")
    srv.add_argument("--allowed-origins", help="comma-separated CORS origins (env CCPA_ALLOWED_ORIGINS)")
    srv.add_argument("--archive", help="snapshot archive directory (env CCPA_ARCHIVE)")
    srv.add_argument("--config")
    srv.set_defaults(func=cmd_serve)

    fx = sub.add_parser("fixtures", help="fixture corpus tools")
    fx_sub = fx.add_subparsers(dest="fixtures_command", required=True)
    fx_serve = fx_sub.add_parser("serve", help="serve a directory as static HTML")
    fx_serve.add_argument("--dir", required=True)
    fx_serve.add_argument("--bind", default="127.0.0.1:8000")
    fx_serve.add_argument("--delay-ms", action="append", metavar="PATH=MS", help="delay responses for PATH")
    fx_serve.set_defaults(func=cmd_fixtures_serve)
    fx_gen = fx_sub.add_parser("generate", help="write fixture sites from a spec")
    fx_gen.add_argument("--spec", help="fixture spec JSON (default: bundled)")
    fx_gen.add_argument("--out", required=True)
    fx_gen.set_defaults(func=cmd_fixtures_generate)

    ev = sub.add_parser("eval", help="score the checker against a ground-truth corpus")
    ev.add_argument("--corpus", help="generated fixture directory (default: bundled corpus in a temp dir)")
    ev.add_argument("--truth", help="ground-truth JSON (default: bundled)")
    ev.add_argument("--fixture-addr", help="HOST:PORT serving --corpus (default: start one in-process)")
    ev.add_argument("--format", choices=("json", "text"), default="text")
    ev.add_argument("--parallel", type=_positive, default=1)
    ev.add_argument("--config")
    ev.add_argument("--include-probes", action="store_true", help="also score the false-positive/negative probe sites")
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
