"""Answer-span conduction heuristics for cloze and free-form answers.

Cloze answers (masked entities that occur several times in a passage)
are resolved to the occurrence closest to the question entities.
Free-form answers are resolved to the passage span with the highest
token-level F1 against the answer text. Conversational questions are
flattened into a single token sequence.
"""
from __future__ import annotations

from collections import Counter
from typing import Optional, Sequence

from .records import AnswerSpan
from .vocab import SEP_TOKEN

DEFAULT_MAX_SPAN_LEN = 30

HISTORY_SEPARATOR = SEP_TOKEN


def extract_cloze_span(
    passage_tokens: Sequence[str],
    answer_occurrences: Sequence[int],
    entity_occurrences: Sequence[Sequence[int]],
) -> int:
    """Pick the answer occurrence nearest (in summed token distance) to
    the question entities.

    For each answer occurrence, sums the distance to the nearest
    occurrence of every question entity; entities that never occur in
    the passage contribute nothing. Ties resolve to the earliest
    occurrence.
    """
    if not answer_occurrences:
        raise ValueError("answer not found in passage")
    best_pos = None
    best_sum = None
    for a in answer_occurrences:
        total = 0
        for positions in entity_occurrences:
            if not positions:
                continue
            total += min(abs(a - e) for e in positions)
        if best_sum is None or total < best_sum or (total == best_sum and a < best_pos):
            best_pos = a
            best_sum = total
    return best_pos


def _token_f1(span_tokens: Sequence[str], answer_tokens: Sequence[str]) -> float:
    common = Counter(span_tokens) & Counter(answer_tokens)
    n_same = sum(common.values())
    if n_same == 0:
        return 0.0
    precision = n_same / len(span_tokens)
    recall = n_same / len(answer_tokens)
    return 2 * precision * recall / (precision + recall)


def best_f1_span(
    passage_tokens: Sequence[str],
    answer_text: str,
    max_span_len: int = DEFAULT_MAX_SPAN_LEN,
) -> Optional[AnswerSpan]:
    """Find the span of length <= max_span_len maximizing token F1
    against ``answer_text``; ``None`` when no span overlaps at all.

    Comparison is case-insensitive. Ties resolve to the smallest start,
    then the smallest end.
    """
    if max_span_len < 1:
        raise ValueError("max_span_len must be >= 1")
    answer_tokens = [t.lower() for t in answer_text.split()]
    if not answer_tokens:
        return None
    lowered = [t.lower() for t in passage_tokens]
    best: Optional[AnswerSpan] = None
    best_f1 = 0.0
    for start in range(len(lowered)):
        for end in range(start, min(start + max_span_len, len(lowered))):
            f1 = _token_f1(lowered[start : end + 1], answer_tokens)
            if f1 > best_f1:
                best_f1 = f1
                best = AnswerSpan(start, end)
    return best


def build_conversational_question(
    history: Sequence[tuple[Sequence[str], Sequence[str]]],
    current: Sequence[str],
    separator: str = HISTORY_SEPARATOR,
) -> list[str]:
    """Concatenate all previous question/answer turns before the current
    question, one separator token between every element.

    The result is truncated later (at windowing) to the query budget,
    keeping the most recent tokens.
    """
    parts: list[list[str]] = []
    for question, answer in history:
        parts.append(list(question))
        parts.append(list(answer))
    parts.append(list(current))
    merged: list[str] = []
    for i, part in enumerate(parts):
        if i:
            merged.append(separator)
        merged.extend(part)
    return merged
