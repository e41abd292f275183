"""Synthetic source/target dataset pairs for desk-scale experiments.

The task is key location: a passage is a sequence of distinct content
tokens, the question names one of them (the key), and the answer is that
token's position in the passage. Both domains share this task; the
target domain shifts its content-token distribution toward a pool the
source never samples, draws longer passages than the source ever shows,
and optionally rephrases the question. Those axes are what makes
zero-shot transfer degrade and adaptation measurable.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from ..errors import ConfigurationError
from .records import AnswerSpan, RCExample

SOURCE_QUESTION_WORD = "find"
TARGET_QUESTION_WORD = "locate"
_MARKERS = (SOURCE_QUESTION_WORD, TARGET_QUESTION_WORD)

_MIN_CONTENT = 8


@dataclass(frozen=True)
class StyleShift:
    """How far the target domain drifts from the source.

    token_shift: probability a target content token is drawn from the
        target-only half of the vocabulary instead of the shared half.
    phrasing_shift: probability a target question reads
        ``locate <key>`` instead of the source phrasing ``find <key>``.
    length_shift: probability a target passage is drawn from the
        extended length block above the source range, putting answers at
        positions the source never populates.
    """

    token_shift: float = 0.0
    phrasing_shift: float = 0.0
    length_shift: float = 0.0

    def __post_init__(self) -> None:
        for name in ("token_shift", "phrasing_shift", "length_shift"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {v}")

    def is_zero(self) -> bool:
        return self.token_shift == self.phrasing_shift == self.length_shift == 0.0

    @classmethod
    def from_dict(cls, raw: dict) -> "StyleShift":
        return cls(**raw)

    def to_dict(self) -> dict:
        return {
            "token_shift": self.token_shift,
            "phrasing_shift": self.phrasing_shift,
            "length_shift": self.length_shift,
        }


@dataclass(frozen=True)
class SyntheticTaskSpec:
    vocab_size: int = 60
    passage_length_range: tuple[int, int] = (8, 14)
    style_shift: StyleShift = field(default_factory=StyleShift)
    n_examples: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.vocab_size < len(_MARKERS) + _MIN_CONTENT:
            raise ConfigurationError(
                f"vocab_size {self.vocab_size} cannot hold {len(_MARKERS)} question "
                f"markers plus a usable content pool (need >= {len(_MARKERS) + _MIN_CONTENT})"
            )
        lo, hi = self.passage_length_range
        if not 2 <= lo <= hi:
            raise ConfigurationError(f"bad passage_length_range {self.passage_length_range}")
        pool = self.vocab_size - len(_MARKERS)
        if 2 * hi - lo > pool // 2:  # extended block must stay samplable
            raise ConfigurationError(
                f"passages of length up to {2 * hi - lo} cannot be sampled without "
                f"replacement from a per-domain pool of {pool // 2} tokens"
            )
        if self.n_examples < 1:
            raise ConfigurationError("n_examples must be >= 1")

    @classmethod
    def from_dict(cls, raw: dict) -> "SyntheticTaskSpec":
        raw = dict(raw)
        if "style_shift" in raw and isinstance(raw["style_shift"], dict):
            raw["style_shift"] = StyleShift.from_dict(raw["style_shift"])
        if "passage_length_range" in raw:
            raw["passage_length_range"] = tuple(raw["passage_length_range"])
        return cls(**raw)

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "passage_length_range": list(self.passage_length_range),
            "style_shift": self.style_shift.to_dict(),
            "n_examples": self.n_examples,
            "seed": self.seed,
        }


def _content_pool(vocab_size: int) -> list[str]:
    return [f"w{i:03d}" for i in range(vocab_size - len(_MARKERS))]


def _make_example(
    rng: np.random.Generator,
    index: int,
    spec: SyntheticTaskSpec,
    domain: Literal["source", "target"],
    pool: np.ndarray,
    weights: np.ndarray,
) -> RCExample:
    shift = spec.style_shift
    lo, hi = spec.passage_length_range
    extended = domain == "target" and rng.random() < shift.length_shift
    if extended and hi > lo:
        length = int(rng.integers(hi + 1, 2 * hi - lo + 1))
    else:
        length = int(rng.integers(lo, hi + 1))
    # distinct tokens, so the queried key pins down exactly one position
    tokens = [str(t) for t in rng.choice(pool, size=length, replace=False, p=weights)]
    answer_pos = int(rng.integers(length))
    key = tokens[answer_pos]

    rephrased = domain == "target" and rng.random() < shift.phrasing_shift
    question_word = TARGET_QUESTION_WORD if rephrased else SOURCE_QUESTION_WORD
    question = [question_word, key]

    offsets = []
    cursor = 0
    for t in tokens:
        offsets.append((cursor, cursor + len(t)))
        cursor += len(t) + 1

    return RCExample(
        id=f"{domain}-{index:05d}",
        passage_tokens=tuple(tokens),
        question_tokens=tuple(question),
        passage_text=" ".join(tokens),
        passage_offsets=tuple(offsets),
        answer=AnswerSpan(answer_pos, answer_pos),
        domain=domain,
        answer_text=None,
    )


def generate_synthetic_domain_pair(
    spec: SyntheticTaskSpec,
) -> tuple[list[RCExample], list[RCExample]]:
    """Deterministically generate (source, target) example lists.

    Target examples keep their gold labels; adaptation code must treat
    them as unlabeled and only evaluation may read them.
    """
    content = np.array(_content_pool(spec.vocab_size))
    half = len(content) // 2

    source_weights = np.zeros(len(content))
    source_weights[:half] = 1.0 / half

    s = spec.style_shift.token_shift
    target_weights = np.zeros(len(content))
    target_weights[:half] = (1.0 - s) / half
    target_weights[half:] = s / (len(content) - half)

    rng = np.random.default_rng(spec.seed)
    source = [
        _make_example(rng, i, spec, "source", content, source_weights)
        for i in range(spec.n_examples)
    ]
    target = [
        _make_example(rng, i, spec, "target", content, target_weights)
        for i in range(spec.n_examples)
    ]
    return source, target
