"""Immutable data records: examples, answer spans, encoded windows."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal, Optional

Domain = Literal["source", "target"]

CharRange = tuple[int, int]


@dataclass(frozen=True)
class AnswerSpan:
    """Inclusive token span into a passage: ``start <= end``."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start < 0 or self.end < self.start:
            raise ValueError(f"invalid answer span ({self.start}, {self.end})")

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class RCExample:
    """One passage/question sample, optionally carrying a gold span.

    ``passage_offsets`` maps every passage token back to its character
    range in ``passage_text``, so span text can always be reconstructed.
    """

    id: str
    passage_tokens: tuple[str, ...]
    question_tokens: tuple[str, ...]
    passage_text: str
    passage_offsets: tuple[CharRange, ...]
    answer: Optional[AnswerSpan] = None
    domain: Domain = "source"
    answer_text: Optional[str] = None

    def __post_init__(self) -> None:
        if len(self.passage_tokens) != len(self.passage_offsets):
            raise ValueError(f"example {self.id}: token/offset length mismatch")
        if not self.passage_tokens:
            raise ValueError(f"example {self.id}: empty passage")
        if self.answer is not None and self.answer.end >= len(self.passage_tokens):
            raise ValueError(
                f"example {self.id}: span ({self.answer.start}, {self.answer.end}) "
                f"exceeds passage length {len(self.passage_tokens)}"
            )

    def span_text(self, span: AnswerSpan) -> str:
        start_char = self.passage_offsets[span.start][0]
        end_char = self.passage_offsets[span.end][1]
        return self.passage_text[start_char:end_char]

    def gold_text(self) -> str:
        """Gold answer string: the free-form answer when present, else the span text."""
        if self.answer_text is not None:
            return self.answer_text
        if self.answer is None:
            raise ValueError(f"example {self.id} carries no gold answer")
        return self.span_text(self.answer)

    def with_answer(self, span: AnswerSpan) -> "RCExample":
        return replace(self, answer=span, answer_text=None)


@dataclass(frozen=True)
class EncodedWindow:
    """Fixed-length model input slice of an example.

    Layout: ``[CLS] question [SEP] passage-slice [SEP] [PAD]*`` with
    ``passage_mask`` true only at passage-slice positions. ``label``,
    when present, is expressed in window coordinates.
    """

    example_id: str
    token_ids: tuple[int, ...]
    passage_mask: tuple[bool, ...]
    window_offset: int
    char_offsets: tuple[Optional[CharRange], ...]
    label: Optional[AnswerSpan] = None

    def __post_init__(self) -> None:
        m = len(self.token_ids)
        if len(self.passage_mask) != m or len(self.char_offsets) != m:
            raise ValueError(f"window {self.example_id}: field length mismatch")
        if self.label is not None:
            if self.label.end >= m:
                raise ValueError(f"window {self.example_id}: label out of range")
            if not (self.passage_mask[self.label.start] and self.passage_mask[self.label.end]):
                raise ValueError(f"window {self.example_id}: label at non-passage position")

    @property
    def passage_start(self) -> int:
        """Window position of the first passage token."""
        return self.passage_mask.index(True)

    def to_passage_index(self, window_position: int) -> int:
        """Map a window position back to an index into the original passage."""
        return window_position - self.passage_start + self.window_offset
