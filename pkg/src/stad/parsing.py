"""Balanced-span JSON extraction from free-form model output."""
from __future__ import annotations

import json
from typing import Iterator

_PAIRS = {"{": "}", "[": "]"}


def iter_json_values(text: str, open_ch: str) -> Iterator[object]:
    """Yield parsed JSON values for balanced spans opened by open_ch.

    The scan is string-aware, so braces inside quoted strings do not
    confuse the depth count. Spans that fail to parse are skipped.
    """
    close_ch = _PAIRS[open_ch]
    i = 0
    while i < len(text):
        if text[i] != open_ch:
            i += 1
            continue
        depth = 0
        in_str = False
        esc = False
        end = -1
        for j in range(i, len(text)):
            ch = text[j]
            if in_str:
                if esc:
                    esc = False
                elif ch == "\\":
                    esc = True
                elif ch == '"':
                    in_str = False
            else:
                if ch == '"':
                    in_str = True
                elif ch == open_ch:
                    depth += 1
                elif ch == close_ch:
                    depth -= 1
                    if depth == 0:
                        end = j
                        break
        if end < 0:
            return
        try:
            yield json.loads(text[i : end + 1])
        except json.JSONDecodeError:
            pass
        i = end + 1


def first_json_array(text: str) -> list | None:
    """First well-formed JSON array in the text, if any."""
    for value in iter_json_values(text, "["):
        if isinstance(value, list):
            return value
    return None


def first_json_object(text: str) -> dict | None:
    """First well-formed JSON object in the text, if any."""
    for value in iter_json_values(text, "{"):
        if isinstance(value, dict):
            return value
    return None
