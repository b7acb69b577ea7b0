"""Identifier syntax and lookup normalization shared by every engine."""
from __future__ import annotations

import re

_IDENT_RE = re.compile(r"[A-Za-z][A-Za-z0-9_\-]*\Z")
_NON_ALNUM = re.compile(r"[^0-9a-z]")


def is_identifier(text: object) -> bool:
    return isinstance(text, str) and _IDENT_RE.match(text) is not None


def normalize_name(text: str) -> str:
    """Lookup key: lower-cased with every non-alphanumeric character removed.

    >>> normalize_name("Co-Processor") == normalize_name("co processor")
    True
    """
    return _NON_ALNUM.sub("", text.lower())
