from __future__ import annotations

import dataclasses
from pathlib import Path

import pytest

from ccpa_audit.corpus import bundled_spec, generate_fixtures
from ccpa_audit.corpus.server import FixtureServer
from ccpa_audit.fetch import HostRateLimiter
from ccpa_audit.model import default_config


@pytest.fixture(scope="session")
def defaults():
    return default_config()


@pytest.fixture(scope="session")
def registry(defaults):
    return defaults[0]


@pytest.fixture(scope="session")
def fast_cfg(defaults):
    """Default budgets with a 1 ms politeness delay so local tests stay quick."""
    return dataclasses.replace(defaults[2], politeness_delay=1)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("corpus")
    generate_fixtures(bundled_spec(), out)
    return out


@pytest.fixture(scope="session")
def corpus_server(corpus_dir):
    with FixtureServer(corpus_dir) as srv:
        yield srv


@pytest.fixture
def site(tmp_path):
    """A scratch site: write files with ``site.write(path, html)``, fetch via ``site.url(path)``."""

    class Site:
        root = tmp_path

        def write(self, rel: str, content: str | bytes) -> None:
            target = tmp_path / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            if isinstance(content, str):
                content = content.encode("utf-8")
            target.write_bytes(content)

    s = Site()
    with FixtureServer(tmp_path) as srv:
        s.server = srv
        s.url = srv.url
        s.address = srv.address
        yield s


@pytest.fixture
def limiter():
    return HostRateLimiter()


# --- acceptance summary -------------------------------------------------------------

_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")
    config.stash[_ACCEPTANCE] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    number, title = marker.args
    results = item.config.stash[_ACCEPTANCE]
    ok = rep.passed and results.get(number, (title, True))[1]
    results[number] = (title, ok)


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, ok = results[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}")
