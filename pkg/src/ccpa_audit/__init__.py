"""Crawl a website and check its privacy pages for CCPA disclosures."""

__version__ = "0.1.0"

from .engine import complaint_instructions, execute_check, match_criterion, recommend, run_check  # noqa: E402
from .model import (  # noqa: E402
    ComplianceReport,
    CrawlConfig,
    CriterionId,
    CriterionSpec,
    SiteProfile,
    Status,
    Verdict,
    load_config,
)
from .urls import InvalidURL, normalize_url  # noqa: E402

__all__ = [
    "ComplianceReport",
    "CrawlConfig",
    "CriterionId",
    "CriterionSpec",
    "InvalidURL",
    "SiteProfile",
    "Status",
    "Verdict",
    "complaint_instructions",
    "execute_check",
    "load_config",
    "match_criterion",
    "normalize_url",
    "recommend",
    "run_check",
]
