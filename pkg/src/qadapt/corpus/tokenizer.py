"""Whitespace/punctuation tokenization with exact character offsets.

The default tokenizer splits on word characters vs. single punctuation
marks and records the character range of every token, so any token span
can be mapped back to a substring of the original text. Anything with
the same ``tokenize`` signature (e.g. a subword tokenizer) can be
substituted.
"""
from __future__ import annotations

import re
from typing import Protocol

# "@entity3"-style cloze masks stay single tokens
_TOKEN_RE = re.compile(r"@\w+|\w+|[^\w\s]")

CharRange = tuple[int, int]


class Tokenizer(Protocol):
    def tokenize(self, text: str) -> tuple[list[str], list[CharRange]]:
        ...


class RegexTokenizer:
    """Tokenizer driven by a regex; one match = one token."""

    def __init__(self, pattern: re.Pattern[str] = _TOKEN_RE):
        self.pattern = pattern

    def tokenize(self, text: str) -> tuple[list[str], list[CharRange]]:
        tokens: list[str] = []
        offsets: list[CharRange] = []
        for m in self.pattern.finditer(text):
            tokens.append(m.group(0))
            offsets.append((m.start(), m.end()))
        return tokens, offsets


DEFAULT_TOKENIZER = RegexTokenizer()


def char_span_to_token_span(
    offsets: list[CharRange] | tuple[CharRange, ...],
    char_start: int,
    char_end: int,
) -> tuple[int, int] | None:
    """Snap a character range onto the covering token range.

    ``char_end`` is exclusive. Returns ``None`` when the range touches no
    token at all (e.g. it lies entirely in whitespace).
    """
    first = None
    last = None
    for i, (s, e) in enumerate(offsets):
        if e <= char_start:
            continue
        if s >= char_end:
            break
        if first is None:
            first = i
        last = i
    if first is None or last is None:
        return None
    return first, last
