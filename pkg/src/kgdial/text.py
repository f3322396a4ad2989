"""Deterministic tokenization helpers used by matching, retrieval, and metrics.

The default tokenizer splits on whitespace and additionally treats every CJK
ideograph as its own token, so mixed-script text segments without an external
word segmenter. No case folding is applied anywhere; matching is exact.
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable

Tokenizer = Callable[[str], list[str]]

# CJK Unified Ideographs, Extension A, and the compatibility block.
_CJK_RANGES = (
    (0x4E00, 0x9FFF),
    (0x3400, 0x4DBF),
    (0xF900, 0xFAFF),
)


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def tokenize(text: str) -> list[str]:
    """Split on whitespace; each CJK codepoint becomes a standalone token."""
    tokens: list[str] = []
    for chunk in text.split():
        buf: list[str] = []
        for ch in chunk:
            if _is_cjk(ch):
                if buf:
                    tokens.append("".join(buf))
                    buf = []
                tokens.append(ch)
            else:
                buf.append(ch)
        if buf:
            tokens.append("".join(buf))
    return tokens


def load_stopwords(path: str | Path) -> frozenset[str]:
    """Read a stopword file: one token per line, blank lines ignored."""
    words = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            words.append(line)
    return frozenset(words)
