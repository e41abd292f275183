"""Token vocabulary with reserved special tokens."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

from .records import RCExample

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN)


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the special tokens")
        self._tokens = list(tokens)
        self._ids = {tok: i for i, tok in enumerate(self._tokens)}
        if len(self._ids) != len(self._tokens):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, *example_sets: Iterable[RCExample]) -> "Vocabulary":
        """Collect all passage and question tokens; order is sorted, so
        the same corpora always yield the same vocabulary."""
        seen: set[str] = set()
        for examples in example_sets:
            for ex in examples:
                seen.update(ex.passage_tokens)
                seen.update(ex.question_tokens)
        seen.difference_update(SPECIAL_TOKENS)
        return cls(list(SPECIAL_TOKENS) + sorted(seen))

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def cls_id(self) -> int:
        return 2

    @property
    def sep_id(self) -> int:
        return 3

    def encode(self, token: str) -> int:
        return self._ids.get(token, self.unk_id)

    def decode(self, token_id: int) -> str:
        return self._tokens[token_id]

    def to_list(self) -> list[str]:
        return list(self._tokens)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self._tokens, ensure_ascii=False))

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls(json.loads(Path(path).read_text()))
