"""Text normalization used before comparing model output against stored text."""

from __future__ import annotations

import re

# Smart punctuation that chat models and PDF copies swap freely.
_QUOTE_MAP = str.maketrans(
    {
        "‘": "'",
        "’": "'",
        "‚": "'",
        "“": '"',
        "”": '"',
        "„": '"',
        "–": "-",
        "—": "-",
        " ": " ",
    }
)

_WS_RUN = re.compile(r"\s+")


def normalize(text: str) -> str:
    """Collapse whitespace runs and straighten curly quotes/dashes."""
    return _WS_RUN.sub(" ", text.translate(_QUOTE_MAP)).strip()


def same_text(a: str, b: str) -> bool:
    """True when two strings are equal after normalization."""
    return normalize(a) == normalize(b)
