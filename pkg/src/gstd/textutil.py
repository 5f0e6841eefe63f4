"""Shared tokenization helpers for scoring and edit validation."""

from __future__ import annotations

import re

# Word characters (unicode-aware, so accented letters stay whole) or a single
# non-space punctuation mark.
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str, lowercase: bool = False) -> list[str]:
    """Split on whitespace and isolate punctuation marks as their own tokens."""
    if lowercase:
        text = text.lower()
    return _TOKEN_RE.findall(text)
