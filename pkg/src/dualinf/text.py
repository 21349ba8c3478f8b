"""Name normalization shared by corpus matching, parsing, voting and scoring."""

from __future__ import annotations

import re
import unicodedata

_PUNCT = re.compile(r"[^\w\s-]", re.UNICODE)
_SPACE = re.compile(r"\s+")


def normalize_name(text: str) -> str:
    """Case-fold, drop punctuation other than hyphens, collapse whitespace.

    >>> normalize_name("  Wilson's   Disease. ")
    'wilsons disease'
    """
    text = unicodedata.normalize("NFKC", text).casefold()
    text = _PUNCT.sub("", text).replace("_", "")
    return _SPACE.sub(" ", text).strip()


def dedupe(items, key=normalize_name):
    """Order-preserving de-duplication under ``key``; first occurrence wins."""
    seen = set()
    out = []
    for item in items:
        k = key(item)
        if k in seen:
            continue
        seen.add(k)
        out.append(item)
    return out
