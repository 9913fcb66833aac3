"""Domain types, the criteria registry, and config loading.

Everything here is immutable once built so a loaded registry can be shared
between concurrent checks.
"""

from __future__ import annotations

import enum
import hashlib
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from .urls import InvalidURL, normalize_url, registrable_domain, url_host

__all__ = [
    "CORE_CRITERIA",
    "CheckError",
    "ComplianceReport",
    "CrawlConfig",
    "CriterionId",
    "CriterionResult",
    "CriterionSpec",
    "CycleError",
    "EvidenceSpan",
    "KeywordBucket",
    "PageSnapshot",
    "Recommendation",
    "Scope",
    "SchemaError",
    "Severity",
    "SiteProfile",
    "Status",
    "Verdict",
    "default_config",
    "dump_config",
    "format_timestamp",
    "load_config",
    "normalize_phrase",
    "parse_config",
    "parse_timestamp",
    "render_json",
    "report_payload",
    "snapshot_id_for",
    "topological_order",
    "utc_now",
]


class SchemaError(ValueError):
    """Config document is missing a field or has an ill-typed one."""

    def __init__(self, key: str, detail: str = ""):
        self.key = key
        super().__init__(f"{key}: {detail}" if detail else key)


class CycleError(ValueError):
    """``depends_on`` edges do not form a DAG."""


class CriterionId(str, enum.Enum):
    PRIVACY_NOTICE = "PRIVACY_NOTICE"
    CCPA_NOTICE = "CCPA_NOTICE"
    NOTICE_OF_COLLECTION = "NOTICE_OF_COLLECTION"
    RIGHT_TO_KNOW = "RIGHT_TO_KNOW"
    RIGHT_TO_DELETE = "RIGHT_TO_DELETE"
    RIGHT_TO_OPT_OUT = "RIGHT_TO_OPT_OUT"
    DO_NOT_SELL_LINK = "DO_NOT_SELL_LINK"
    CONTACT_METHODS = "CONTACT_METHODS"

    @property
    def is_core(self) -> bool:
        return self in CORE_CRITERIA

    @property
    def result_key(self) -> str:
        return self.value.lower()


# Order matches the boolean block of the public result payload.
CORE_CRITERIA: tuple[CriterionId, ...] = (
    CriterionId.PRIVACY_NOTICE,
    CriterionId.CCPA_NOTICE,
    CriterionId.NOTICE_OF_COLLECTION,
    CriterionId.RIGHT_TO_KNOW,
    CriterionId.RIGHT_TO_DELETE,
    CriterionId.RIGHT_TO_OPT_OUT,
)


class Scope(str, enum.Enum):
    HOMEPAGE = "HOMEPAGE"
    PRIVACY_PAGES = "PRIVACY_PAGES"
    ANY_PAGE = "ANY_PAGE"
    HOMEPAGE_ANCHORS = "HOMEPAGE_ANCHORS"


class Status(str, enum.Enum):
    FOUND = "FOUND"
    NOT_FOUND = "NOT_FOUND"
    SKIPPED = "SKIPPED"


class Verdict(str, enum.Enum):
    COMPLIANT_SIGNALS_FOUND = "COMPLIANT_SIGNALS_FOUND"
    CCPA_NOT_FOUND = "CCPA_NOT_FOUND"
    ERROR = "ERROR"


class Severity(str, enum.Enum):
    REQUIRED = "REQUIRED"
    ADVISORY = "ADVISORY"


def utc_now() -> datetime:
    """Current UTC time truncated to milliseconds (the serialized precision)."""
    now = datetime.now(timezone.utc)
    return now.replace(microsecond=now.microsecond // 1000 * 1000)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat(timespec="milliseconds").replace("+00:00", "Z")


def parse_timestamp(text: str) -> datetime:
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    return datetime.fromisoformat(text).astimezone(timezone.utc)


def normalize_phrase(phrase: str) -> str:
    return " ".join(phrase.lower().split())


def snapshot_id_for(body: bytes) -> str:
    return hashlib.sha256(body).hexdigest()


@dataclass(frozen=True)
class KeywordBucket:
    """Interchangeable phrases (and optional regexes) counting once toward a threshold."""

    phrases: tuple[str, ...] = ()
    patterns: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "phrases", tuple(normalize_phrase(p) for p in self.phrases))
        if not self.phrases and not self.patterns:
            raise SchemaError("buckets", "bucket must contain at least one phrase or pattern")
        if any(not p for p in self.phrases):
            raise SchemaError("buckets", "empty phrase")
        for pat in self.patterns:
            try:
                re.compile(pat)
            except re.error as exc:
                raise SchemaError("patterns", f"bad regex {pat!r}: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"phrases": list(self.phrases)}
        if self.patterns:
            out["patterns"] = list(self.patterns)
        return out


@dataclass(frozen=True)
class CriterionSpec:
    id: CriterionId
    description: str
    buckets: tuple[KeywordBucket, ...]
    threshold: int = 1
    scope: frozenset[Scope] = frozenset({Scope.PRIVACY_PAGES})
    depends_on: Optional[CriterionId] = None

    def __post_init__(self):
        if not self.buckets:
            raise SchemaError("buckets", "at least one bucket required")
        if not isinstance(self.threshold, int) or isinstance(self.threshold, bool):
            raise SchemaError("threshold", "must be an integer")
        if not 1 <= self.threshold <= len(self.buckets):
            raise SchemaError("threshold", f"must be in [1, {len(self.buckets)}], got {self.threshold}")
        if not self.scope:
            raise SchemaError("scope", "at least one scope required")
        if self.depends_on == self.id:
            raise CycleError(f"{self.id.value} depends on itself")

    def to_dict(self) -> dict[str, Any]:
        scopes = sorted(s.value for s in self.scope)
        return {
            "id": self.id.value,
            "description": self.description,
            "buckets": [b.to_dict() for b in self.buckets],
            "threshold": self.threshold,
            "scope": scopes[0] if len(scopes) == 1 else scopes,
            "depends_on": self.depends_on.value if self.depends_on else None,
        }


@dataclass(frozen=True)
class SiteProfile:
    """Per-site crawl hints: a direct privacy-page URL and extra seeds."""

    host_pattern: str
    privacy_page_url: Optional[str] = None
    extra_seeds: tuple[str, ...] = ()
    notes: str = ""

    def __post_init__(self):
        pattern = self.host_pattern.strip().lower()
        if not pattern:
            raise SchemaError("host_pattern", "must be non-empty")
        object.__setattr__(self, "host_pattern", registrable_domain(pattern))
        try:
            if self.privacy_page_url is not None:
                object.__setattr__(self, "privacy_page_url", normalize_url(self.privacy_page_url))
            object.__setattr__(self, "extra_seeds", tuple(normalize_url(u) for u in self.extra_seeds))
        except InvalidURL as exc:
            raise SchemaError("privacy_page_url", str(exc)) from exc
        for url in filter(None, (self.privacy_page_url, *self.extra_seeds)):
            if not self.matches_host(url_host(url)):
                raise SchemaError(
                    "privacy_page_url", f"{url} is outside registrable domain {self.host_pattern}"
                )

    def matches_host(self, host: str) -> bool:
        return registrable_domain(host) == self.host_pattern

    def to_dict(self) -> dict[str, Any]:
        return {
            "host_pattern": self.host_pattern,
            "privacy_page_url": self.privacy_page_url,
            "extra_seeds": list(self.extra_seeds),
            "notes": self.notes,
        }


@dataclass(frozen=True)
class CrawlConfig:
    """Crawl budget. Durations are milliseconds."""

    max_pages: int = 25
    max_depth: int = 2
    per_fetch_timeout: int = 10_000
    total_deadline: int = 60_000
    max_body_bytes: int = 2_000_000
    politeness_delay: int = 250
    parallelism: int = 4
    same_site_only: bool = True

    def __post_init__(self):
        for name in (
            "max_pages",
            "max_depth",
            "per_fetch_timeout",
            "total_deadline",
            "max_body_bytes",
            "politeness_delay",
            "parallelism",
        ):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                raise SchemaError(name, f"must be a positive integer, got {value!r}")
        if not isinstance(self.same_site_only, bool):
            raise SchemaError("same_site_only", "must be a boolean")
        if self.total_deadline < self.per_fetch_timeout:
            raise SchemaError("total_deadline", "must be >= per_fetch_timeout")

    def to_dict(self) -> dict[str, Any]:
        return {
            "max_pages": self.max_pages,
            "max_depth": self.max_depth,
            "per_fetch_timeout": self.per_fetch_timeout,
            "total_deadline": self.total_deadline,
            "max_body_bytes": self.max_body_bytes,
            "politeness_delay": self.politeness_delay,
            "parallelism": self.parallelism,
            "same_site_only": self.same_site_only,
        }


@dataclass(frozen=True)
class PageSnapshot:
    snapshot_id: str
    requested_url: str
    final_url: str
    http_status: int
    fetched_at: datetime
    content_type: str
    body: bytes
    text: str = ""
    links: tuple[tuple[str, str], ...] = ()
    phones: tuple[str, ...] = ()
    depth: int = 0

    def meta(self) -> dict[str, Any]:
        """JSON-safe metadata (everything except body and derived text/links)."""
        return {
            "snapshot_id": self.snapshot_id,
            "requested_url": self.requested_url,
            "final_url": self.final_url,
            "http_status": self.http_status,
            "fetched_at": format_timestamp(self.fetched_at),
            "content_type": self.content_type,
            "depth": self.depth,
        }


@dataclass(frozen=True)
class EvidenceSpan:
    snapshot_id: str
    page_url: str
    matched_phrase: str
    excerpt: str
    offset: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "snapshot_id": self.snapshot_id,
            "page_url": self.page_url,
            "matched_phrase": self.matched_phrase,
            "excerpt": self.excerpt,
            "offset": self.offset,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> EvidenceSpan:
        return cls(d["snapshot_id"], d["page_url"], d["matched_phrase"], d["excerpt"], d["offset"])


@dataclass(frozen=True)
class CriterionResult:
    id: CriterionId
    status: Status
    evidence: tuple[EvidenceSpan, ...] = ()
    matched_bucket_count: int = 0

    @property
    def found(self) -> bool:
        return self.status is Status.FOUND

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id.value,
            "status": self.status.value,
            "evidence": [e.to_dict() for e in self.evidence],
            "matched_bucket_count": self.matched_bucket_count,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> CriterionResult:
        return cls(
            CriterionId(d["id"]),
            Status(d["status"]),
            tuple(EvidenceSpan.from_dict(e) for e in d["evidence"]),
            d["matched_bucket_count"],
        )


@dataclass(frozen=True)
class Recommendation:
    criterion: CriterionId
    severity: Severity
    message: str

    def to_dict(self) -> dict[str, Any]:
        return {"criterion": self.criterion.value, "severity": self.severity.value, "message": self.message}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Recommendation:
        return cls(CriterionId(d["criterion"]), Severity(d["severity"]), d["message"])


@dataclass(frozen=True)
class CheckError:
    """Why a check produced verdict ERROR.

    ``kind`` is a fetch error kind (``CONNECT_FAILURE``, ``HTTP_STATUS`` ...)
    or ``DEADLINE_EXCEEDED``.
    """

    kind: str
    detail: str
    url: str = ""
    status_code: Optional[int] = None

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "detail": self.detail, "url": self.url, "status_code": self.status_code}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> CheckError:
        return cls(d["kind"], d["detail"], d.get("url", ""), d.get("status_code"))


@dataclass(frozen=True)
class ComplianceReport:
    check_id: str
    seed_url: str
    started_at: datetime
    finished_at: datetime
    pages_fetched: int
    results: Mapping[CriterionId, CriterionResult]
    verdict: Verdict
    ccpa_page_url: Optional[str] = None
    recommendations: tuple[Recommendation, ...] = ()
    complaint_instructions: Optional[str] = None
    snapshot_ids: tuple[str, ...] = ()
    budget_exhausted: bool = False
    error: Optional[CheckError] = None
    fetch_errors: tuple[CheckError, ...] = field(default=())

    def status_of(self, cid: CriterionId) -> Optional[Status]:
        result = self.results.get(cid)
        return result.status if result else None

    def booleans(self) -> dict[str, bool]:
        """Six core flags with SKIPPED and NOT_FOUND both projected to False."""
        return {cid.result_key: self.status_of(cid) is Status.FOUND for cid in CORE_CRITERIA}

    def to_dict(self) -> dict[str, Any]:
        return {
            "check_id": self.check_id,
            "seed_url": self.seed_url,
            "started_at": format_timestamp(self.started_at),
            "finished_at": format_timestamp(self.finished_at),
            "pages_fetched": self.pages_fetched,
            "budget_exhausted": self.budget_exhausted,
            "results": {cid.value: r.to_dict() for cid, r in self.results.items()},
            "ccpa_page_url": self.ccpa_page_url,
            "verdict": self.verdict.value,
            "recommendations": [r.to_dict() for r in self.recommendations],
            "complaint_instructions": self.complaint_instructions,
            "snapshot_ids": list(self.snapshot_ids),
            "error": self.error.to_dict() if self.error else None,
            "fetch_errors": [e.to_dict() for e in self.fetch_errors],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ComplianceReport:
        return cls(
            check_id=d["check_id"],
            seed_url=d["seed_url"],
            started_at=parse_timestamp(d["started_at"]),
            finished_at=parse_timestamp(d["finished_at"]),
            pages_fetched=d["pages_fetched"],
            budget_exhausted=d.get("budget_exhausted", False),
            results={CriterionId(k): CriterionResult.from_dict(v) for k, v in d["results"].items()},
            ccpa_page_url=d.get("ccpa_page_url"),
            verdict=Verdict(d["verdict"]),
            recommendations=tuple(Recommendation.from_dict(r) for r in d.get("recommendations", ())),
            complaint_instructions=d.get("complaint_instructions"),
            snapshot_ids=tuple(d.get("snapshot_ids", ())),
            error=CheckError.from_dict(d["error"]) if d.get("error") else None,
            fetch_errors=tuple(CheckError.from_dict(e) for e in d.get("fetch_errors", ())),
        )


# --- config loading -------------------------------------------------------


def _require(obj: Mapping[str, Any], key: str, kind: type | tuple[type, ...]) -> Any:
    if key not in obj:
        raise SchemaError(key, "missing")
    value = obj[key]
    if not isinstance(value, kind) or (isinstance(value, bool) and kind is int):
        raise SchemaError(key, f"expected {kind}, got {type(value).__name__}")
    return value


def _parse_bucket(raw: Any) -> KeywordBucket:
    if isinstance(raw, str):
        return KeywordBucket(phrases=(raw,))
    if isinstance(raw, list):
        if not all(isinstance(p, str) for p in raw):
            raise SchemaError("buckets", "phrases must be strings")
        return KeywordBucket(phrases=tuple(raw))
    if isinstance(raw, dict):
        phrases = raw.get("phrases", [])
        patterns = raw.get("patterns", [])
        if not isinstance(phrases, list) or not all(isinstance(p, str) for p in phrases):
            raise SchemaError("phrases", "must be a list of strings")
        if not isinstance(patterns, list) or not all(isinstance(p, str) for p in patterns):
            raise SchemaError("patterns", "must be a list of strings")
        return KeywordBucket(phrases=tuple(phrases), patterns=tuple(patterns))
    raise SchemaError("buckets", f"bad bucket {raw!r}")


def _enum_value(enum_cls: type[enum.Enum], key: str, raw: Any) -> Any:
    try:
        return enum_cls(raw)
    except ValueError:
        raise SchemaError(key, f"unknown value {raw!r}") from None


def _parse_criterion(raw: Any) -> CriterionSpec:
    if not isinstance(raw, dict):
        raise SchemaError("criteria", "each criterion must be an object")
    cid = _enum_value(CriterionId, "id", _require(raw, "id", str))
    buckets = _require(raw, "buckets", list)
    threshold = _require(raw, "threshold", int)
    scope_raw = _require(raw, "scope", (str, list))
    scope_items = [scope_raw] if isinstance(scope_raw, str) else scope_raw
    scope = frozenset(_enum_value(Scope, "scope", s) for s in scope_items)
    dep = raw.get("depends_on")
    if dep is not None and not isinstance(dep, str):
        raise SchemaError("depends_on", "must be a criterion id or null")
    return CriterionSpec(
        id=cid,
        description=raw.get("description", ""),
        buckets=tuple(_parse_bucket(b) for b in buckets),
        threshold=threshold,
        scope=scope,
        depends_on=_enum_value(CriterionId, "depends_on", dep) if dep else None,
    )


def topological_order(registry: Sequence[CriterionSpec]) -> list[CriterionSpec]:
    """Dependencies first; ties keep registry order. Raises CycleError."""
    by_id = {spec.id: spec for spec in registry}
    for spec in registry:
        if spec.depends_on is not None and spec.depends_on not in by_id:
            raise SchemaError("depends_on", f"{spec.id.value} depends on unknown {spec.depends_on.value}")
    ordered: list[CriterionSpec] = []
    state: dict[CriterionId, int] = {}  # 1 = visiting, 2 = done

    def visit(spec: CriterionSpec, path: tuple[CriterionId, ...]) -> None:
        mark = state.get(spec.id)
        if mark == 2:
            return
        if mark == 1:
            chain = " -> ".join(c.value for c in (*path, spec.id))
            raise CycleError(f"depends_on cycle: {chain}")
        state[spec.id] = 1
        if spec.depends_on is not None:
            visit(by_id[spec.depends_on], (*path, spec.id))
        state[spec.id] = 2
        ordered.append(spec)

    for spec in registry:
        visit(spec, ())
    return ordered


def _validate_registry(criteria: Iterable[CriterionSpec]) -> tuple[CriterionSpec, ...]:
    criteria = tuple(criteria)
    seen: set[CriterionId] = set()
    for spec in criteria:
        if spec.id in seen:
            raise SchemaError("id", f"duplicate criterion {spec.id.value}")
        seen.add(spec.id)
    topological_order(criteria)
    return criteria


def parse_config(
    doc: Mapping[str, Any],
) -> tuple[tuple[CriterionSpec, ...], tuple[SiteProfile, ...], CrawlConfig]:
    if not isinstance(doc, dict):
        raise SchemaError("config", "top level must be an object")
    criteria = _validate_registry(_parse_criterion(c) for c in _require(doc, "criteria", list))

    profiles = []
    for raw in doc.get("site_profiles", []):
        if not isinstance(raw, dict):
            raise SchemaError("site_profiles", "each profile must be an object")
        seeds = raw.get("extra_seeds", [])
        if not isinstance(seeds, list):
            raise SchemaError("extra_seeds", "must be a list")
        privacy = raw.get("privacy_page_url")
        if privacy is not None and not isinstance(privacy, str):
            raise SchemaError("privacy_page_url", "must be a string or null")
        profiles.append(
            SiteProfile(
                host_pattern=_require(raw, "host_pattern", str),
                privacy_page_url=privacy,
                extra_seeds=tuple(seeds),
                notes=raw.get("notes", ""),
            )
        )

    crawl_raw = doc.get("crawl", {})
    if not isinstance(crawl_raw, dict):
        raise SchemaError("crawl", "must be an object")
    known = set(CrawlConfig.__dataclass_fields__)
    for key in crawl_raw:
        if key not in known:
            raise SchemaError(key, "unknown crawl setting")
    return criteria, tuple(profiles), CrawlConfig(**crawl_raw)


def dump_config(
    criteria: Sequence[CriterionSpec], profiles: Sequence[SiteProfile], crawl: CrawlConfig
) -> dict[str, Any]:
    return {
        "criteria": [c.to_dict() for c in criteria],
        "site_profiles": [p.to_dict() for p in profiles],
        "crawl": crawl.to_dict(),
    }


def default_config():
    text = resources.files(__package__).joinpath("default_config.json").read_text("utf-8")
    return parse_config(json.loads(text))


def load_config(path: Optional[str | Path] = None):
    """Load ``(criteria, site_profiles, crawl_config)``; the bundled default when ``path`` is None."""
    if path is None:
        return default_config()
    try:
        doc = json.loads(Path(path).read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError("config", f"not valid JSON: {exc}") from exc
    return parse_config(doc)


def report_payload(report: ComplianceReport) -> dict[str, Any]:
    """Report document plus the six-flag ``ccpa_result`` block served to clients."""
    payload = report.to_dict()
    payload["ccpa_result"] = report.booleans()
    return payload


def render_json(obj: Any) -> bytes:
    """Canonical JSON bytes: sorted keys, 2-space indent, trailing newline."""
    return (json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")
