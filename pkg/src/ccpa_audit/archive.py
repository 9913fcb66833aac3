"""On-disk store for reports and the raw HTML snapshots they cite.

Layout::

    <root>/reports/<check_id>.json            serialized ComplianceReport
    <root>/reports/<check_id>.snapshots.json  per-check snapshot metadata
    <root>/blobs/<sha[:2]>/<sha>              raw body, content addressed
    <root>/blobs/<sha[:2]>/<sha>.json         metadata of the first stored copy
"""

from __future__ import annotations

import json
import os
import re
import tempfile
from pathlib import Path
from typing import Any, Iterable

from .extract import extract_page
from .model import ComplianceReport, PageSnapshot, parse_timestamp, render_json

__all__ = ["Archive", "ArchiveIOError", "ArchiveNotFound"]

_ID_RE = re.compile(r"^[A-Za-z0-9_\-]{1,128}$")
_SHA_RE = re.compile(r"^[0-9a-f]{64}$")


class ArchiveIOError(OSError):
    """Writing to the archive failed; ``path`` names the offending file."""

    def __init__(self, path: Path, detail: str):
        self.path = path
        super().__init__(f"IO_ERROR at {path}: {detail}")


class ArchiveNotFound(KeyError):
    pass


def _atomic_write(path: Path, data: bytes, *, keep_existing: bool = False) -> None:
    if keep_existing and path.exists():
        return
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise ArchiveIOError(path, exc.strerror or str(exc)) from exc


class Archive:
    def __init__(self, root: str | os.PathLike[str]):
        self.root = Path(root)

    def _report_path(self, check_id: str) -> Path:
        if not _ID_RE.match(check_id):
            raise ArchiveNotFound(check_id)
        return self.root / "reports" / f"{check_id}.json"

    def _blob_path(self, snapshot_id: str) -> Path:
        if not _SHA_RE.match(snapshot_id):
            raise ArchiveNotFound(snapshot_id)
        return self.root / "blobs" / snapshot_id[:2] / snapshot_id

    def store(self, report: ComplianceReport, snapshots: Iterable[PageSnapshot]) -> str:
        """Persist ``report`` and the bodies of ``snapshots``; returns the check id."""
        snapshots = list(snapshots)
        per_check = {}
        for snap in snapshots:
            blob = self._blob_path(snap.snapshot_id)
            _atomic_write(blob, snap.body, keep_existing=True)
            _atomic_write(blob.with_name(blob.name + ".json"), render_json(snap.meta()), keep_existing=True)
            per_check.setdefault(snap.snapshot_id, snap.meta())
        report_path = self._report_path(report.check_id)
        _atomic_write(report_path.with_name(f"{report.check_id}.snapshots.json"), render_json(per_check))
        _atomic_write(report_path, render_json(report.to_dict()))
        return report.check_id

    def load(self, check_id: str) -> ComplianceReport:
        path = self._report_path(check_id)
        if not path.is_file():
            raise ArchiveNotFound(check_id)
        return ComplianceReport.from_dict(json.loads(path.read_text("utf-8")))

    def _build(self, meta: dict[str, Any], body: bytes) -> PageSnapshot:
        page = extract_page(body, meta["content_type"], meta["final_url"])
        return PageSnapshot(
            snapshot_id=meta["snapshot_id"],
            requested_url=meta["requested_url"],
            final_url=meta["final_url"],
            http_status=meta["http_status"],
            fetched_at=parse_timestamp(meta["fetched_at"]),
            content_type=meta["content_type"],
            body=body,
            text=page.text,
            links=page.links,
            phones=page.phones,
            depth=meta.get("depth", 0),
        )

    def load_snapshot(self, snapshot_id: str) -> PageSnapshot:
        blob = self._blob_path(snapshot_id)
        meta_path = blob.with_name(blob.name + ".json")
        if not blob.is_file() or not meta_path.is_file():
            raise ArchiveNotFound(snapshot_id)
        return self._build(json.loads(meta_path.read_text("utf-8")), blob.read_bytes())

    def load_check_snapshot(self, check_id: str, snapshot_id: str) -> PageSnapshot:
        """A snapshot as captured by one particular check (its own URL and timestamp)."""
        index_path = self._report_path(check_id).with_name(f"{check_id}.snapshots.json")
        if not index_path.is_file():
            raise ArchiveNotFound(check_id)
        meta = json.loads(index_path.read_text("utf-8")).get(snapshot_id)
        if meta is None:
            raise ArchiveNotFound(snapshot_id)
        blob = self._blob_path(snapshot_id)
        if not blob.is_file():
            raise ArchiveNotFound(snapshot_id)
        return self._build(meta, blob.read_bytes())
