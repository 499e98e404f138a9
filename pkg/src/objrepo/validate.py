"""Shared syntactic validators for names, MIME types and ids."""

from __future__ import annotations

import re

from .errors import BadArguments, MalformedMime

URN_RE = re.compile(r"^urn:[a-z0-9.-]+:[A-Za-z0-9._-]+$")
_TOKEN = r"[!#$%&'*+\-.^_`|~0-9A-Za-z]+"
MIME_RE = re.compile(rf"^({_TOKEN})/({_TOKEN})((;.+)?)$")
DS_ID_RE = re.compile(r"^DS([1-9][0-9]*)$")
DISS_ID_RE = re.compile(r"^DISS([1-9][0-9]*)$")
ENDPOINT_RE = re.compile(r"^[A-Za-z0-9.-]+:[0-9]+$")


def is_urn(value) -> bool:
    return isinstance(value, str) and URN_RE.match(value) is not None


def require_urn(value: str, what: str = "name") -> str:
    if not is_urn(value):
        raise BadArguments(f"{what} is not a valid urn: {value!r}")
    return value


def is_mime(value) -> bool:
    return isinstance(value, str) and MIME_RE.match(value) is not None


def require_mime(value: str) -> str:
    """Validate ``type/subtype``; parameters after ';' are kept verbatim."""
    if not is_mime(value):
        raise MalformedMime(f"not a valid MIME type: {value!r}")
    return value


def mime_base(value: str) -> str:
    """``type/subtype`` lowercased, parameters stripped."""
    return value.split(";", 1)[0].strip().lower()


def is_endpoint(value) -> bool:
    return isinstance(value, str) and ENDPOINT_RE.match(value) is not None


def require_endpoint(value: str, what: str = "endpoint") -> str:
    if not is_endpoint(value):
        raise BadArguments(f"{what} must look like host:port, got {value!r}")
    return value
