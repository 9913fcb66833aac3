"""HTML to normalized text and absolute link lists.

Normalized text is lowercased, whitespace-collapsed, and free of markup.
Script, style, template, comments, and hidden elements (``hidden``
attribute or inline ``display:none``) contribute nothing.
"""

from __future__ import annotations

import codecs
import re
from dataclasses import dataclass
from html.parser import HTMLParser
from urllib.parse import unquote, urljoin

from .urls import InvalidURL, normalize_url

__all__ = [
    "ExtractedPage",
    "decode_body",
    "extract_links",
    "extract_page",
    "extract_text",
    "normalize_text",
]

_SKIP_TAGS = frozenset({"script", "style", "template"})
_VOID_TAGS = frozenset(
    {"area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param", "source", "track", "wbr"}
)
# Element boundaries that separate words. Links are included so adjacent
# footer links do not fuse into one token.
_BLOCK_TAGS = frozenset(
    {
        "a", "address", "article", "aside", "blockquote", "body", "br", "button", "caption", "dd", "details",
        "dialog", "div", "dl", "dt", "fieldset", "figcaption", "figure", "footer", "form", "h1", "h2",
        "h3", "h4", "h5", "h6", "head", "header", "hr", "html", "img", "input", "label", "legend", "li",
        "main", "nav", "noscript", "ol", "option", "p", "pre", "section", "select", "summary", "table",
        "tbody", "td", "textarea", "tfoot", "th", "thead", "title", "tr", "ul",
    }
)
_DISPLAY_NONE_RE = re.compile(r"display\s*:\s*none", re.IGNORECASE)
_META_CHARSET_RE = re.compile(rb"""<meta[^>]+?charset\s*=\s*["']?\s*([A-Za-z0-9_\-:.]+)""", re.IGNORECASE)
_HEADER_CHARSET_RE = re.compile(r"""charset\s*=\s*["']?([A-Za-z0-9_\-:.]+)""", re.IGNORECASE)
_TAG_LIKE_RE = re.compile(r"<(?=[a-zA-Z/!?])")
_DROP_SCHEMES = ("mailto:", "tel:", "javascript:", "data:", "about:", "ftp:", "file:")


def normalize_text(raw: str) -> str:
    """Lowercase and collapse whitespace; never leaves ``<`` directly before a letter, ``/``, ``!`` or ``?``."""
    text = " ".join(raw.lower().split())
    return _TAG_LIKE_RE.sub("< ", text)


def _usable_codec(name: str | None) -> str | None:
    if not name:
        return None
    try:
        return codecs.lookup(name).name
    except LookupError:
        return None


def decode_body(body: bytes, content_type: str = "") -> str:
    """Decode with the header charset, then a ``<meta>`` charset, then UTF-8."""
    if body.startswith(codecs.BOM_UTF8):
        return body[len(codecs.BOM_UTF8) :].decode("utf-8", errors="replace")
    m = _HEADER_CHARSET_RE.search(content_type or "")
    codec = _usable_codec(m.group(1)) if m else None
    if codec is None:
        m = _META_CHARSET_RE.search(body[:4096])
        codec = _usable_codec(m.group(1).decode("ascii")) if m else None
    return body.decode(codec or "utf-8", errors="replace")


class _PageParser(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.pieces: list[str] = []
        self.anchors: list[tuple[str, str]] = []  # (raw href, raw text)
        self._skip_tag: str | None = None
        self._skip_depth = 0
        self._anchor_href: str | None = None
        self._anchor_text: list[str] = []

    def _hidden(self, tag: str, attrs: list[tuple[str, str | None]]) -> bool:
        if tag in _SKIP_TAGS:
            return True
        for name, value in attrs:
            if name == "hidden":
                return True
            if name == "style" and value and _DISPLAY_NONE_RE.search(value):
                return True
        return False

    def handle_starttag(self, tag, attrs):
        if self._skip_tag is not None:
            if tag == self._skip_tag:
                self._skip_depth += 1
            return
        if tag not in _VOID_TAGS and self._hidden(tag, attrs):
            self._skip_tag, self._skip_depth = tag, 1
            return
        if tag in _BLOCK_TAGS:
            self._emit(" ")
        if tag == "a":
            self._close_anchor()
            href = dict(attrs).get("href")
            if href is not None:
                self._anchor_href, self._anchor_text = href, []

    def handle_startendtag(self, tag, attrs):
        if self._skip_tag is None and tag in _BLOCK_TAGS:
            self._emit(" ")

    def handle_endtag(self, tag):
        if self._skip_tag is not None:
            if tag == self._skip_tag:
                self._skip_depth -= 1
                if self._skip_depth == 0:
                    self._skip_tag = None
            return
        if tag == "a":
            self._close_anchor()
        if tag in _BLOCK_TAGS:
            self._emit(" ")

    def handle_data(self, data):
        if self._skip_tag is None:
            self._emit(data)

    def _emit(self, text: str) -> None:
        self.pieces.append(text)
        if self._anchor_href is not None:
            self._anchor_text.append(text)

    def _close_anchor(self) -> None:
        if self._anchor_href is not None:
            self.anchors.append((self._anchor_href, "".join(self._anchor_text)))
            self._anchor_href = None
            self._anchor_text = []

    def close(self):
        super().close()
        self._close_anchor()


@dataclass(frozen=True)
class ExtractedPage:
    text: str
    links: tuple[tuple[str, str], ...]
    phones: tuple[str, ...]


def _is_html(content_type: str) -> bool:
    media = (content_type or "text/html").split(";")[0].strip().lower()
    return media != "text/plain"


def extract_page(body: bytes, content_type: str = "text/html", base: str | None = None) -> ExtractedPage:
    """Parse once and return text, deduplicated absolute links, and ``tel:`` numbers."""
    decoded = decode_body(body, content_type)
    if not _is_html(content_type):
        return ExtractedPage(normalize_text(decoded), (), ())

    parser = _PageParser()
    parser.feed(decoded)
    parser.close()
    text = normalize_text("".join(parser.pieces))

    links: dict[str, str] = {}
    phones: list[str] = []
    for href, anchor in parser.anchors:
        href = href.strip()
        lowered = href.lower()
        if lowered.startswith("tel:"):
            number = unquote(href[4:]).strip()
            if number and number not in phones:
                phones.append(number)
            continue
        if not href or lowered.startswith(_DROP_SCHEMES) or base is None:
            continue
        try:
            url = normalize_url(urljoin(base, href))
        except (InvalidURL, ValueError):
            continue
        links.setdefault(url, normalize_text(anchor))
    return ExtractedPage(text, tuple(links.items()), tuple(phones))


def extract_text(body: bytes, content_type: str = "text/html") -> str:
    return extract_page(body, content_type).text


def extract_links(body: bytes, base: str, content_type: str = "text/html") -> list[tuple[str, str]]:
    """Absolute normalized ``(url, anchor_text)`` pairs, first anchor text wins per URL."""
    return list(extract_page(body, content_type, base).links)
