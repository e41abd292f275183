"""Sliding-window encoding of examples into fixed-length model inputs."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Optional

from ..errors import ConfigurationError
from .records import AnswerSpan, EncodedWindow, RCExample
from .vocab import Vocabulary

RESERVED_POSITIONS = 3  # [CLS], [SEP] after the question, trailing [SEP]


def window_examples(
    example: RCExample,
    vocab: Vocabulary,
    max_len: int,
    stride: int,
    max_query_len: int,
    training: bool,
) -> list[EncodedWindow]:
    """Slice an example into windows of exactly ``max_len`` positions.

    Windows start at passage offsets 0, stride, 2*stride, ... until the
    passage is covered; the stride is capped at the window's passage
    capacity so coverage always holds. Questions longer than
    ``max_query_len`` keep their most recent tokens. In training mode,
    windows whose slice does not fully contain the answer are discarded
    and labels are remapped into window coordinates.
    """
    if stride < 1:
        raise ConfigurationError("stride must be >= 1")
    if max_len <= max_query_len + RESERVED_POSITIONS:
        raise ConfigurationError(
            f"max_len {max_len} leaves no passage room beside "
            f"max_query_len {max_query_len} and {RESERVED_POSITIONS} specials"
        )
    if training and example.answer is None:
        raise ValueError(f"example {example.id}: training windows need an answer")

    question = list(example.question_tokens[-max_query_len:])
    capacity = max_len - len(question) - RESERVED_POSITIONS
    effective_stride = min(stride, capacity)

    passage = example.passage_tokens
    starts = [0]
    while starts[-1] + capacity < len(passage):
        starts.append(starts[-1] + effective_stride)

    prefix_ids = [vocab.cls_id] + [vocab.encode(t) for t in question] + [vocab.sep_id]
    passage_start = len(prefix_ids)

    windows: list[EncodedWindow] = []
    for offset in starts:
        piece = passage[offset : offset + capacity]
        label: Optional[AnswerSpan] = None
        if training:
            ans = example.answer
            if not (offset <= ans.start and ans.end < offset + len(piece)):
                continue
            label = AnswerSpan(
                ans.start - offset + passage_start,
                ans.end - offset + passage_start,
            )
        token_ids = prefix_ids + [vocab.encode(t) for t in piece] + [vocab.sep_id]
        mask = [False] * passage_start + [True] * len(piece) + [False]
        chars: list[Optional[tuple[int, int]]] = [None] * passage_start
        chars += [example.passage_offsets[offset + k] for k in range(len(piece))]
        chars.append(None)
        pad = max_len - len(token_ids)
        token_ids += [vocab.pad_id] * pad
        mask += [False] * pad
        chars += [None] * pad
        windows.append(
            EncodedWindow(
                example_id=example.id,
                token_ids=tuple(token_ids),
                passage_mask=tuple(mask),
                window_offset=offset,
                char_offsets=tuple(chars),
                label=label,
            )
        )
    return windows


def dump_windows_jsonl(windows: Iterable[EncodedWindow], path: str | Path) -> int:
    """Write one JSON record per window; returns the record count."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for w in windows:
            record = {
                "example_id": w.example_id,
                "token_ids": list(w.token_ids),
                "passage_mask": list(w.passage_mask),
                "window_offset": w.window_offset,
                "char_offsets": [list(c) if c else None for c in w.char_offsets],
                "label": {"start": w.label.start, "end": w.label.end} if w.label else None,
            }
            fh.write(json.dumps(record) + "\n")
            n += 1
    return n


def load_windows_jsonl(path: str | Path) -> list[EncodedWindow]:
    windows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            r = json.loads(line)
            windows.append(
                EncodedWindow(
                    example_id=r["example_id"],
                    token_ids=tuple(r["token_ids"]),
                    passage_mask=tuple(r["passage_mask"]),
                    window_offset=r["window_offset"],
                    char_offsets=tuple(tuple(c) if c else None for c in r["char_offsets"]),
                    label=AnswerSpan(**r["label"]) if r["label"] else None,
                )
            )
    return windows
