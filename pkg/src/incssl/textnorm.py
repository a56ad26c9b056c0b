"""Text normalization shared by every metric and filter.

Lowercase, keep letters, digits and apostrophes, turn everything else into
whitespace, collapse runs of whitespace and trim. CER treats the single
spaces left behind as characters.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import List

_APOSTROPHES = str.maketrans({"’": "'", "ʼ": "'"})
_ASCII_DROP = re.compile(r"[^a-z0-9']")


@dataclass(frozen=True)
class NormText:
    raw: str
    norm: str


def _keep(ch: str) -> bool:
    return ch.isalpha() or ch.isdigit() or ch == "'"


def normalize(text: str) -> NormText:
    lowered = text.translate(_APOSTROPHES).lower()
    if lowered.isascii():
        # Same result as the general path, without a per-character loop.
        cleaned = _ASCII_DROP.sub(" ", lowered)
    else:
        cleaned = "".join(ch if _keep(ch) else " " for ch in lowered)
    return NormText(raw=text, norm=" ".join(cleaned.split()))


def word_tokens(t: NormText) -> List[str]:
    return t.norm.split(" ") if t.norm else []


def char_tokens(t: NormText) -> List[str]:
    return list(t.norm)
