"""Shared text normalization helpers."""
from __future__ import annotations


def normalize_answer(text: str) -> str:
    """Trim, casefold, and strip trailing punctuation from an answer string."""
    out = text.strip().casefold()
    while out and out[-1] in ".!?,;:":
        out = out[:-1].rstrip()
    return out


def squash_ws(text: str) -> str:
    """Collapse all whitespace runs to single spaces."""
    return " ".join(text.split())
