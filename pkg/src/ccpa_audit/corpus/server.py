"""Static fixture web server with per-path delays and declarative redirects.

Files are read on every request, so editing a fixture between two checks
is visible to the second one. ``<dir>/<site>/_redirects.json`` maps request
paths (relative to the site) to redirect targets.
"""

from __future__ import annotations

import json
import mimetypes
import posixpath
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Mapping, Optional
from urllib.parse import unquote, urlsplit

__all__ = ["FixtureServer", "parse_delay"]

# HTML goes out without a charset so pages can declare their own in <meta>.
_TYPES = {".html": "text/html", ".htm": "text/html", ".txt": "text/plain; charset=utf-8"}


def parse_delay(spec: str) -> tuple[str, int]:
    """``"/slow/index.html=1500"`` -> ``("/slow/index.html", 1500)``."""
    path, sep, ms = spec.rpartition("=")
    if not sep or not path or not ms.strip().isdigit():
        raise ValueError(f"expected PATH=MILLISECONDS, got {spec!r}")
    return path if path.startswith("/") else "/" + path, int(ms)


class _Handler(BaseHTTPRequestHandler):
    server: _Server
    server_version = "ccpa-fixtures/1"

    def log_message(self, format, *args):  # noqa: A002
        pass

    def _send(self, status: int, body: bytes, content_type: str, extra: Optional[Mapping[str, str]] = None):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        for key, value in (extra or {}).items():
            self.send_header(key, value)
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(body)

    def _sleep(self, path: str) -> bool:
        delay = self.server.delays.get(path, 0) / 1000.0
        end = time.monotonic() + delay
        while time.monotonic() < end:
            if self.server.stopping.is_set():
                return False
            time.sleep(min(0.02, max(end - time.monotonic(), 0)))
        return True

    def _redirect_for(self, path: str) -> Optional[str]:
        parts = path.strip("/").split("/", 1)
        if not parts[0]:
            return None
        table = self.server.root / parts[0] / "_redirects.json"
        if not table.is_file():
            return None
        rules = json.loads(table.read_text("utf-8"))
        rel = "/" + (parts[1] if len(parts) > 1 else "")
        return rules.get(rel)

    def do_GET(self):
        path = urlsplit(self.path).path
        if not self._sleep(path):
            return
        target = self._redirect_for(path)
        if target is not None:
            self._send(301, b"", "text/html", {"Location": target})
            return
        rel = posixpath.normpath(unquote(path)).lstrip("/")
        file = (self.server.root / rel).resolve() if rel not in ("", ".") else self.server.root
        if self.server.root not in (file, *file.parents):
            self._send(404, b"<h1>not found</h1>", "text/html")
            return
        if file.is_dir():
            file = file / "index.html"
        if not file.is_file() or file.name.startswith("_"):
            self._send(404, b"<h1>not found</h1>", "text/html")
            return
        ctype = _TYPES.get(file.suffix.lower()) or mimetypes.guess_type(file.name)[0] or "application/octet-stream"
        self._send(200, file.read_bytes(), ctype)

    do_HEAD = do_GET


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, addr, root: Path, delays: Mapping[str, int]):
        super().__init__(addr, _Handler)
        self.root = root
        self.delays = dict(delays)
        self.stopping = threading.Event()


class FixtureServer:
    """Serve ``root`` over HTTP from a background thread.

    >>> with FixtureServer("corpus") as srv:  # doctest: +SKIP
    ...     srv.url("full-compliance/")
    """

    def __init__(self, root, host: str = "127.0.0.1", port: int = 0, delays: Mapping[str, int] | None = None):
        self._httpd = _Server((host, port), Path(root).resolve(), delays or {})
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"{host}:{port}"

    @property
    def delays(self) -> dict[str, int]:
        return self._httpd.delays

    def url(self, path: str = "") -> str:
        return f"http://{self.address}/{path.lstrip('/')}"

    def start(self) -> FixtureServer:
        self._thread = threading.Thread(
            target=self._httpd.serve_forever, kwargs={"poll_interval": 0.05}, name="fixture-server", daemon=True
        )
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.stopping.set()
        self._httpd.shutdown()
        self._httpd.server_close()

    def serve_forever(self) -> None:
        try:
            self._httpd.serve_forever()
        finally:
            self._httpd.server_close()

    def __enter__(self) -> FixtureServer:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
