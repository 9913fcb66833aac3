from __future__ import annotations

import os

import pytest

from ccpa_audit.archive import Archive, ArchiveIOError, ArchiveNotFound
from ccpa_audit.engine import execute_check
from ccpa_audit.fetch import HostRateLimiter


@pytest.fixture(scope="module")
def stored(corpus_server, fast_cfg, registry, tmp_path_factory):
    archive = Archive(tmp_path_factory.mktemp("archive"))
    report, snaps = execute_check(corpus_server.url("full-compliance/"), fast_cfg, registry, rate_limiter=HostRateLimiter())
    archive.store(report, snaps)
    return archive, report, snaps


def test_report_round_trip(stored):
    archive, report, _ = stored
    assert archive.load(report.check_id) == report


def test_snapshot_round_trip(stored):
    archive, report, snaps = stored
    # "/" and "/index.html" serve the same bytes; the first capture is kept.
    first = {}
    for snap in snaps:
        first.setdefault(snap.snapshot_id, snap)
    assert len(first) < len(snaps)
    for snap in snaps:
        loaded = archive.load_check_snapshot(report.check_id, snap.snapshot_id)
        assert loaded == first[snap.snapshot_id]
        assert archive.load_snapshot(snap.snapshot_id).body == snap.body


def test_unknown_ids(stored):
    archive, report, snaps = stored
    with pytest.raises(ArchiveNotFound):
        archive.load("nope")
    with pytest.raises(ArchiveNotFound):
        archive.load("../../etc/passwd")
    with pytest.raises(ArchiveNotFound):
        archive.load_check_snapshot(report.check_id, "0" * 64)
    with pytest.raises(ArchiveNotFound):
        archive.load_check_snapshot("missing", snaps[0].snapshot_id)
    with pytest.raises(ArchiveNotFound):
        archive.load_snapshot("not-a-hash")


def test_blobs_are_shared(stored, corpus_server, fast_cfg, registry):
    archive, first, _ = stored
    report, snaps = execute_check(corpus_server.url("full-compliance/"), fast_cfg, registry, rate_limiter=HostRateLimiter())
    archive.store(report, snaps)
    assert report.check_id != first.check_id
    blobs = [p for p in (archive.root / "blobs").rglob("*") if p.is_file() and p.suffix != ".json"]
    assert len(blobs) == len(set(first.snapshot_ids) | set(report.snapshot_ids))


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_io_error_names_path(tmp_path, stored):
    _, report, snaps = stored
    locked = tmp_path / "locked"
    locked.mkdir()
    locked.chmod(0o500)
    try:
        with pytest.raises(ArchiveIOError) as info:
            Archive(locked).store(report, snaps)
        assert str(locked) in str(info.value)
    finally:
        locked.chmod(0o700)


def test_io_error_when_root_is_a_file(tmp_path, stored):
    _, report, snaps = stored
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ArchiveIOError) as info:
        Archive(blocker).store(report, snaps)
    assert "IO_ERROR" in str(info.value)
