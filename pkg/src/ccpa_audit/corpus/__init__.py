"""Fixture-site corpus: generation from a declarative spec, and evaluation against ground truth.

A fixture spec is a JSON object with a ``blocks`` library (name -> HTML
fragment) and a ``sites`` list. Each site lists its pages; a page names the
blocks it contains and the links in its footer. The generated tree is::

    <out>/<site_id>/<page files>
    <out>/<site_id>/_site.json        probe flag, optional profile hint, notes
    <out>/<site_id>/_redirects.json   only when the site declares redirects

Files starting with ``_`` are never served by :mod:`ccpa_audit.corpus.server`.
"""

from __future__ import annotations

import html
import json
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from ..engine import execute_check
from ..fetch import HostRateLimiter
from ..model import (
    CORE_CRITERIA,
    ComplianceReport,
    CrawlConfig,
    CriterionId,
    CriterionSpec,
    PageSnapshot,
    SchemaError,
    SiteProfile,
    Verdict,
    default_config,
)
from ..urls import registrable_domain

__all__ = [
    "Counts",
    "EvalMetrics",
    "GroundTruthEntry",
    "MissingSiteError",
    "SiteOutcome",
    "bundled_spec",
    "bundled_truth",
    "evaluate",
    "generate_fixtures",
    "load_truth",
    "render_metrics_text",
]

SITE_META = "_site.json"
REDIRECTS = "_redirects.json"


def bundled_spec() -> Path:
    return Path(str(resources.files(__package__).joinpath("data", "fixture_spec.json")))


def bundled_truth() -> Path:
    return Path(str(resources.files(__package__).joinpath("data", "truth.json")))


# --- generation -------------------------------------------------------------


def _check(cond: bool, key: str, detail: str) -> None:
    if not cond:
        raise SchemaError(key, detail)


def _safe_rel(path: str, key: str) -> str:
    parts = path.split("/")
    _check(bool(path) and not path.startswith("/") and all(p not in ("", ".", "..") for p in parts), key, f"bad page path {path!r}")
    _check(not any(p.startswith("_") for p in parts), key, f"page path {path!r} may not start with '_'")
    return path


def _render_page(page: Mapping[str, Any], blocks: Mapping[str, str], key: str) -> bytes:
    _check(isinstance(page, dict), key, "page must be an object")
    charset = page.get("charset", "utf-8")
    _check(isinstance(charset, str), f"{key}.charset", "must be a string")
    names = page.get("blocks", [])
    _check(isinstance(names, list), f"{key}.blocks", "must be a list")
    for name in names:
        _check(name in blocks, f"{key}.blocks", f"unknown block {name!r}")
    links = page.get("links", [])
    _check(isinstance(links, list), f"{key}.links", "must be a list")
    items = []
    for link in links:
        _check(
            isinstance(link, list) and len(link) == 2 and all(isinstance(x, str) for x in link),
            f"{key}.links",
            "each link is [href, text]",
        )
        href, text = link
        items.append(f'<li><a href="{html.escape(href)}">{html.escape(text)}</a></li>')
    title = html.escape(str(page.get("title", "")))
    doc = "\n".join(
        [
            "<!DOCTYPE html>",
            '<html lang="en">',
            "<head>",
            f'<meta charset="{html.escape(charset)}">',
            f"<title>{title}</title>",
            "</head>",
            "<body>",
            "<main>",
            *(blocks[name] for name in names),
            "</main>",
            "<footer><ul>",
            *items,
            "</ul></footer>",
            "</body>",
            "</html>",
            "",
        ]
    )
    try:
        return doc.encode(charset)
    except (LookupError, UnicodeEncodeError) as exc:
        raise SchemaError(f"{key}.charset", str(exc)) from None


def generate_fixtures(spec_file: str | Path, out_dir: str | Path) -> list[str]:
    """Materialize every site of ``spec_file`` under ``out_dir``; returns the site ids.

    Site directories are replaced wholesale so the output depends only on the spec.
    """
    try:
        spec = json.loads(Path(spec_file).read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError("fixture_spec", f"not valid JSON: {exc}") from None
    _check(isinstance(spec, dict), "fixture_spec", "top level must be an object")
    blocks = spec.get("blocks", {})
    _check(isinstance(blocks, dict) and all(isinstance(v, str) for v in blocks.values()), "blocks", "must map names to HTML strings")
    sites = spec.get("sites")
    _check(isinstance(sites, list) and bool(sites), "sites", "must be a non-empty list")

    rendered: dict[str, tuple[dict[str, bytes], dict[str, Any], Optional[dict[str, str]]]] = {}
    for i, site in enumerate(sites):
        _check(isinstance(site, dict), f"sites[{i}]", "must be an object")
        site_id = site.get("id")
        _check(isinstance(site_id, str) and bool(site_id), f"sites[{i}].id", "must be a non-empty string")
        _safe_rel(site_id, f"sites[{i}].id")
        _check("/" not in site_id, f"sites[{i}].id", "must be a single path segment")
        _check(site_id not in rendered, f"sites[{i}].id", f"duplicate site {site_id!r}")
        pages = site.get("pages")
        _check(isinstance(pages, dict) and "index.html" in pages, f"{site_id}.pages", "must include index.html")
        files = {_safe_rel(rel, f"{site_id}.pages"): _render_page(page, blocks, f"{site_id}.pages.{rel}") for rel, page in pages.items()}

        profile = site.get("profile")
        hint = None
        if profile is not None:
            _check(isinstance(profile, dict), f"{site_id}.profile", "must be an object")
            hint = profile.get("privacy_page")
            _check(isinstance(hint, str) and hint in files, f"{site_id}.profile.privacy_page", "must name one of the site's pages")
        redirects = site.get("redirects")
        if redirects is not None:
            _check(
                isinstance(redirects, dict) and all(isinstance(k, str) and isinstance(v, str) for k, v in redirects.items()),
                f"{site_id}.redirects",
                "must map paths to targets",
            )
        meta = {
            "site_id": site_id,
            "probe": bool(site.get("probe", False)),
            "privacy_page": hint,
            "notes": str(site.get("notes", "")),
        }
        rendered[site_id] = (files, meta, redirects)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for site_id, (files, meta, redirects) in rendered.items():
        root = out / site_id
        if root.exists():
            shutil.rmtree(root)
        for rel, body in sorted(files.items()):
            target = root / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(body)
        (root / SITE_META).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", "utf-8")
        if redirects:
            (root / REDIRECTS).write_text(json.dumps(redirects, indent=2, sort_keys=True) + "\n", "utf-8")
    return list(rendered)


# --- ground truth -----------------------------------------------------------


@dataclass(frozen=True)
class GroundTruthEntry:
    site_id: str
    expected: Mapping[CriterionId, bool]
    notes: str = ""

    @classmethod
    def from_dict(cls, raw: Any) -> GroundTruthEntry:
        _check(isinstance(raw, dict), "truth", "each entry must be an object")
        site_id = raw.get("site_id")
        _check(isinstance(site_id, str) and bool(site_id), "site_id", "must be a non-empty string")
        exp = raw.get("expected")
        _check(isinstance(exp, dict), f"{site_id}.expected", "must be an object")
        by_key = {}
        for key, value in exp.items():
            try:
                cid = CriterionId(str(key).upper())
            except ValueError:
                raise SchemaError(f"{site_id}.expected", f"unknown criterion {key!r}") from None
            _check(cid.is_core, f"{site_id}.expected", f"{key!r} is not a core criterion")
            _check(isinstance(value, bool), f"{site_id}.expected.{key}", "must be a boolean")
            by_key[cid] = value
        missing = [c.result_key for c in CORE_CRITERIA if c not in by_key]
        _check(not missing, f"{site_id}.expected", f"missing {', '.join(missing)}")
        return cls(site_id, {c: by_key[c] for c in CORE_CRITERIA}, str(raw.get("notes", "")))

    def to_dict(self) -> dict[str, Any]:
        return {
            "site_id": self.site_id,
            "expected": {c.result_key: v for c, v in self.expected.items()},
            "notes": self.notes,
        }


def load_truth(path: str | Path) -> list[GroundTruthEntry]:
    try:
        doc = json.loads(Path(path).read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError("truth", f"not valid JSON: {exc}") from None
    _check(isinstance(doc, list), "truth", "must be a JSON array")
    entries = [GroundTruthEntry.from_dict(raw) for raw in doc]
    ids = [e.site_id for e in entries]
    _check(len(ids) == len(set(ids)), "truth", "duplicate site_id")
    return entries


# --- evaluation -------------------------------------------------------------


class MissingSiteError(LookupError):
    """A truth entry names a site with no fixture directory."""

    def __init__(self, site_id: str, corpus_dir: Path):
        self.site_id = site_id
        super().__init__(f"MISSING_SITE: no fixture for {site_id!r} under {corpus_dir}")


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def add(self, expected: bool, actual: bool) -> None:
        if expected and actual:
            self.tp += 1
        elif actual:
            self.fp += 1
        elif expected:
            self.fn += 1
        else:
            self.tn += 1

    def to_dict(self) -> dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


@dataclass(frozen=True)
class SiteOutcome:
    site_id: str
    verdict: Verdict
    expected: Mapping[CriterionId, bool]
    actual: Mapping[CriterionId, bool]
    error: Optional[str] = None

    @property
    def mismatches(self) -> list[CriterionId]:
        # An errored check disagrees with the truth on every criterion.
        if self.verdict is Verdict.ERROR:
            return list(CORE_CRITERIA)
        return [c for c in CORE_CRITERIA if self.expected[c] != self.actual[c]]

    def to_dict(self) -> dict[str, Any]:
        return {
            "site_id": self.site_id,
            "verdict": self.verdict.value,
            "error": self.error,
            "expected": {c.result_key: v for c, v in self.expected.items()},
            "actual": {c.result_key: v for c, v in self.actual.items()},
            "mismatches": [c.result_key for c in self.mismatches],
        }


@dataclass
class EvalMetrics:
    counts: dict[CriterionId, Counts]
    sites: list[SiteOutcome]
    # The raw reports carry timestamps and ids, so they stay out of equality.
    runs: list[ComplianceReport] = field(default_factory=list, compare=False, repr=False)
    # Every fetched page keyed by (snapshot_id, final_url); equal bodies can sit at several URLs.
    pages: dict[tuple[str, str], PageSnapshot] = field(default_factory=dict, compare=False, repr=False)

    @property
    def accuracy(self) -> float:
        total = sum(c.total for c in self.counts.values())
        if total == 0:
            return 0.0
        right = sum(c.tp + c.tn for c in self.counts.values())
        return right / total

    def criterion_accuracy(self, cid: CriterionId) -> float:
        c = self.counts[cid]
        return (c.tp + c.tn) / c.total if c.total else 0.0

    @property
    def mismatches(self) -> list[tuple[str, CriterionId]]:
        return [(s.site_id, c) for s in self.sites for c in s.mismatches]

    def to_dict(self) -> dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "criteria": {c.result_key: self.counts[c].to_dict() for c in CORE_CRITERIA},
            "sites": [s.to_dict() for s in self.sites],
            "mismatches": [{"site_id": s, "criterion": c.result_key} for s, c in self.mismatches],
        }


def _read_site_meta(site_dir: Path) -> dict[str, Any]:
    path = site_dir / SITE_META
    if not path.is_file():
        return {}
    return json.loads(path.read_text("utf-8"))


def evaluate(
    corpus_dir: str | Path,
    truth_file: str | Path,
    fixture_addr: str,
    cfg: Optional[CrawlConfig] = None,
    registry: Optional[Sequence[CriterionSpec]] = None,
    *,
    parallel: int = 1,
    include_probes: bool = False,
    sites: Optional[Sequence[str]] = None,
) -> EvalMetrics:
    """Check every truth-listed site on the fixture server at ``fixture_addr`` and score it.

    Probe sites (``"probe": true`` in their ``_site.json``) are skipped unless
    ``include_probes``; ``sites`` restricts the run to the named ids.
    """
    corpus = Path(corpus_dir)
    if cfg is None or registry is None:
        default_registry, _, default_cfg = default_config()
        cfg = cfg or default_cfg
        registry = registry if registry is not None else default_registry

    plan: list[tuple[GroundTruthEntry, str, Optional[SiteProfile]]] = []
    for entry in load_truth(truth_file):
        if sites is not None and entry.site_id not in sites:
            continue
        site_dir = corpus / entry.site_id
        if not site_dir.is_dir():
            raise MissingSiteError(entry.site_id, corpus)
        meta = _read_site_meta(site_dir)
        if meta.get("probe") and not include_probes:
            continue
        seed = f"http://{fixture_addr}/{entry.site_id}/"
        profile = None
        if meta.get("privacy_page"):
            host = fixture_addr.rsplit(":", 1)[0].strip("[]")
            profile = SiteProfile(
                host_pattern=registrable_domain(host),
                privacy_page_url=f"http://{fixture_addr}/{entry.site_id}/{meta['privacy_page']}",
                notes=f"fixture profile for {entry.site_id}",
            )
        plan.append((entry, seed, profile))

    limiter = HostRateLimiter()

    def check(item: tuple[GroundTruthEntry, str, Optional[SiteProfile]]):
        _, seed, profile = item
        return execute_check(seed, cfg, registry, profile=profile, rate_limiter=limiter)

    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(check, plan))
    else:
        results = [check(item) for item in plan]
    reports = [report for report, _ in results]
    pages = {(snap.snapshot_id, snap.final_url): snap for _, snaps in results for snap in snaps}

    counts = {c: Counts() for c in CORE_CRITERIA}
    outcomes = []
    for (entry, _, _), report in zip(plan, reports):
        flags = report.booleans()
        actual = {c: flags[c.result_key] for c in CORE_CRITERIA}
        outcome = SiteOutcome(
            site_id=entry.site_id,
            verdict=report.verdict,
            expected=entry.expected,
            actual=actual,
            error=f"{report.error.kind}: {report.error.detail}" if report.error else None,
        )
        for c in CORE_CRITERIA:
            if report.verdict is Verdict.ERROR:
                # Count as the wrong answer whatever the truth was.
                counts[c].add(entry.expected[c], not entry.expected[c])
            else:
                counts[c].add(entry.expected[c], actual[c])
        outcomes.append(outcome)
    return EvalMetrics(counts=counts, sites=outcomes, runs=reports, pages=pages)


def render_metrics_text(metrics: EvalMetrics) -> str:
    lines = [f"{'criterion':<22} {'tp':>4} {'fp':>4} {'fn':>4} {'tn':>4} {'acc':>7}"]
    for c in CORE_CRITERIA:
        n = metrics.counts[c]
        lines.append(f"{c.result_key:<22} {n.tp:>4} {n.fp:>4} {n.fn:>4} {n.tn:>4} {metrics.criterion_accuracy(c):>7.4f}")
    lines.append(f"sites: {len(metrics.sites)}  overall accuracy: {metrics.accuracy:.4f}")
    for site_id, c in metrics.mismatches:
        lines.append(f"mismatch: {site_id} {c.result_key}")
    return "\n".join(lines) + "\n"
