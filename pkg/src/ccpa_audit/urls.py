"""URL normalization and registrable-domain helpers.

Normalized URLs are absolute ``http``/``https`` URLs with a lowercased host,
no userinfo, no default port, no fragment, resolved dot-segments, and
canonical percent-encoding (unreserved octets decoded, hex digits
uppercased, everything outside the allowed set encoded as UTF-8).
"""

from __future__ import annotations

import re
import string
from functools import lru_cache
from urllib.parse import urlsplit

import tldextract

__all__ = [
    "InvalidURL",
    "normalize_url",
    "registrable_domain",
    "same_site",
    "url_host",
]

SUPPORTED_SCHEMES = ("http", "https")
DEFAULT_PORTS = {"http": 80, "https": 443}

_UNRESERVED = frozenset(string.ascii_letters + string.digits + "-._~")
_SUB_DELIMS = frozenset("!$&'()*+,;=")
_PATH_SAFE = _UNRESERVED | _SUB_DELIMS | frozenset(":@/")
_QUERY_SAFE = _PATH_SAFE | frozenset("?")
_HEX = frozenset(string.hexdigits)

_SCHEME_SEP_RE = re.compile(r"^([A-Za-z][A-Za-z0-9+.\-]*)://")
_SCHEME_ONLY_RE = re.compile(r"^([A-Za-z][A-Za-z0-9+.\-]*):(.*)$", re.DOTALL)
_PORT_TAIL_RE = re.compile(r"^\d*(?:[/?#].*)?$", re.DOTALL)
_HOST_RE = re.compile(r"^[a-z0-9_\-]+(?:\.[a-z0-9_\-]+)*$")
_IPV6_RE = re.compile(r"^\[[0-9a-f:.]+\]$")
_CONTROL_RE = re.compile(r"[\x00-\x20\x7f]")

# Bundled public-suffix snapshot only; never touches the network.
_EXTRACT = tldextract.TLDExtract(suffix_list_urls=(), cache_dir=None)


class InvalidURL(ValueError):
    """Raised when a string cannot be turned into a crawlable URL."""


def _encode_controls(s: str) -> str:
    return _CONTROL_RE.sub(lambda m: "%{:02X}".format(ord(m.group())), s)


def _normalize_percent(component: str, safe: frozenset[str]) -> str:
    out = []
    i = 0
    n = len(component)
    while i < n:
        ch = component[i]
        if ch == "%" and i + 2 < n and component[i + 1] in _HEX and component[i + 2] in _HEX:
            octet = chr(int(component[i + 1 : i + 3], 16))
            if octet in _UNRESERVED:
                out.append(octet)
            else:
                out.append("%" + component[i + 1 : i + 3].upper())
            i += 3
            continue
        if ch in safe:
            out.append(ch)
        else:
            try:
                raw = ch.encode("utf-8")
            except UnicodeEncodeError as exc:
                raise InvalidURL(f"unencodable character {ch!r}") from exc
            out.append("".join(f"%{b:02X}" for b in raw))
        i += 1
    return "".join(out)


def _remove_dot_segments(path: str) -> str:
    segments = path.split("/")
    stack: list[str] = []
    for seg in segments[1:]:
        if seg == ".":
            continue
        if seg == "..":
            if stack:
                stack.pop()
            continue
        stack.append(seg)
    # A trailing "." or ".." names a directory.
    if segments[-1] in (".", ".."):
        stack.append("")
    return "/" + "/".join(stack)


def _normalize_host(host: str) -> str:
    host = host.lower()
    if host.startswith("["):
        if not _IPV6_RE.match(host):
            raise InvalidURL(f"bad IPv6 literal {host!r}")
        return host
    if host.endswith("."):
        host = host[:-1]
    if not host:
        raise InvalidURL("empty host")
    if not host.isascii():
        try:
            host = host.encode("idna").decode("ascii")
        except UnicodeError as exc:
            raise InvalidURL(f"bad internationalized host {host!r}") from exc
    if not _HOST_RE.match(host):
        raise InvalidURL(f"bad host {host!r}")
    return host


def _with_scheme(s: str) -> str:
    if _SCHEME_SEP_RE.match(s):
        return s
    if s.startswith("//"):
        return "https:" + s
    m = _SCHEME_ONLY_RE.match(s)
    # "host:8080/x" looks like a scheme to a parser; a digit-only tail means port.
    if m and not _PORT_TAIL_RE.match(m.group(2)):
        raise InvalidURL(f"unsupported URL form {s!r}")
    return "https://" + s


def normalize_url(raw: str) -> str:
    """Return the canonical absolute form of a user-supplied URL.

    Bare hosts get an ``https`` scheme. Raises :class:`InvalidURL` for empty
    input, unsupported schemes, or malformed authorities.
    """
    if not isinstance(raw, str):
        raise InvalidURL("URL must be a string")
    s = raw.strip()
    if not s:
        raise InvalidURL("empty URL")
    s = _encode_controls(_with_scheme(s))
    try:
        parts = urlsplit(s)
    except ValueError as exc:
        raise InvalidURL(str(exc)) from exc

    scheme = parts.scheme.lower()
    if scheme not in SUPPORTED_SCHEMES:
        raise InvalidURL(f"unsupported scheme {scheme!r}")

    hostport = parts.netloc.rpartition("@")[2]
    if hostport.startswith("["):
        close = hostport.find("]")
        if close < 0:
            raise InvalidURL("unterminated IPv6 literal")
        host, rest = hostport[: close + 1], hostport[close + 1 :]
        if rest and not rest.startswith(":"):
            raise InvalidURL(f"bad authority {hostport!r}")
        port_text = rest[1:]
    else:
        host, _, port_text = hostport.partition(":")
    host = _normalize_host(host)

    port = None
    if port_text:
        if not port_text.isdigit() or not port_text.isascii():
            raise InvalidURL(f"bad port {port_text!r}")
        port = int(port_text)
        if port > 65535:
            raise InvalidURL(f"port out of range {port}")
        if port == DEFAULT_PORTS[scheme]:
            port = None

    path = _normalize_percent(parts.path, _PATH_SAFE)
    path = _remove_dot_segments(path) if path else "/"
    query = _normalize_percent(parts.query, _QUERY_SAFE)

    authority = host if port is None else f"{host}:{port}"
    url = f"{scheme}://{authority}{path}"
    if query:
        url += "?" + query
    return url


def url_host(url: str) -> str:
    """Host of an already-normalized URL, without port."""
    return urlsplit(url).hostname or ""


@lru_cache(maxsize=4096)
def registrable_domain(host: str) -> str:
    """Registrable domain (eTLD+1) of ``host``; IPs and single labels map to themselves."""
    host = host.lower().rstrip(".")
    if host.startswith("["):
        return host
    top = _EXTRACT(host).top_domain_under_public_suffix
    return top or host


def same_site(url_a: str, url_b: str) -> bool:
    return registrable_domain(url_host(url_a)) == registrable_domain(url_host(url_b))
