"""Confidence-filtered pseudo-label generation for self-training.

Answer candidates are the n-best (start, end) pairs by summed logits;
the generating probability of a sample is the softmax-normalized weight
of its best candidate within that n-best set. Only samples at or above
the probability threshold become pseudo-labeled training data, and every
epoch regenerates the set from the current model.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch

from .corpus.records import AnswerSpan, EncodedWindow, RCExample
from .corpus.spans import DEFAULT_MAX_SPAN_LEN
from .corpus.vocab import Vocabulary
from .corpus.windows import window_examples
from .errors import ConfigurationError
from .model import SpanModel, collate_windows


@dataclass(frozen=True)
class NBestList:
    """Candidate (start, end, score) triples, scores non-increasing."""

    candidates: tuple[tuple[int, int, float], ...]

    def __post_init__(self) -> None:
        scores = [c[2] for c in self.candidates]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("n-best scores must be non-increasing")
        if any(i > j or i < 0 for i, j, _ in self.candidates):
            raise ValueError("n-best candidates must satisfy 0 <= start <= end")


@dataclass(frozen=True)
class SpanPrediction:
    example_id: str
    span: AnswerSpan
    p_g: float

    def __post_init__(self) -> None:
        if not 0.0 < self.p_g <= 1.0:
            raise ValueError(f"generating probability {self.p_g} outside (0, 1]")


@dataclass(frozen=True)
class PseudoLabeledSet:
    samples: tuple[tuple[RCExample, SpanPrediction], ...]
    epoch: int
    t_prob: float

    def __len__(self) -> int:
        return len(self.samples)


def _ranked(pairs: Iterable[tuple[int, int, float]]) -> list[tuple[int, int, float]]:
    return sorted(pairs, key=lambda c: (-c[2], c[0], c[1]))


def _exhaustive_pairs(
    gs: np.ndarray, ge: np.ndarray, valid: np.ndarray, max_span_len: int
) -> list[tuple[int, int, float]]:
    pairs = []
    for i in valid:
        for j in valid[(valid >= i) & (valid < i + max_span_len)]:
            pairs.append((int(i), int(j), float(gs[i] + ge[j])))
    return pairs


def n_best_spans(
    start_logits,
    end_logits,
    passage_mask,
    n_best: int,
    max_span_len: int = DEFAULT_MAX_SPAN_LEN,
) -> NBestList:
    """Top n_best valid (i, j) pairs by g^s_i + g^e_j.

    Valid means both positions passage-masked true, i <= j, and span
    length <= max_span_len. Ties break toward the smaller start, then
    the smaller end. Uses a top-k/top-k candidate product and falls back
    to exhaustive enumeration whenever that shortcut cannot be proven
    exact.
    """
    if n_best < 1:
        raise ConfigurationError("n_best must be >= 1")
    gs = np.asarray(start_logits, dtype=np.float64)
    ge = np.asarray(end_logits, dtype=np.float64)
    mask = np.asarray(passage_mask, dtype=bool)
    valid = np.flatnonzero(mask)
    if valid.size == 0:
        raise ValueError("empty passage window")

    k = min(n_best, valid.size)
    top_starts = valid[np.lexsort((valid, -gs[valid]))][:k]
    top_ends = valid[np.lexsort((valid, -ge[valid]))][:k]
    candidates = _ranked(
        (int(i), int(j), float(gs[i] + ge[j]))
        for i in top_starts
        for j in top_ends
        if i <= j < i + max_span_len
    )
    # Any pair outside the candidate product is bounded by dropping the
    # weaker of its two logits to the k-th best; only trust the shortcut
    # when n_best candidates provably beat that bound.
    exact = False
    if len(candidates) >= n_best:
        bound = max(
            gs[top_starts[-1]] + ge[top_ends[0]],
            gs[top_starts[0]] + ge[top_ends[-1]],
        )
        exact = candidates[n_best - 1][2] > bound
    if not exact:
        candidates = _ranked(_exhaustive_pairs(gs, ge, valid, max_span_len))
    return NBestList(tuple(candidates[:n_best]))


def generating_probability(nbest: NBestList, example_id: str = "") -> SpanPrediction:
    """Softmax the n-best scores; the winner's probability is p_g."""
    if not nbest.candidates:
        raise ValueError("empty n-best list")
    scores = np.array([c[2] for c in nbest.candidates], dtype=np.float64)
    shifted = np.exp(scores - scores.max())
    probs = shifted / shifted.sum()
    best = nbest.candidates[0]
    return SpanPrediction(example_id, AnswerSpan(best[0], best[1]), float(probs[0]))


def aggregate_windows(
    window_predictions: Sequence[tuple[EncodedWindow, SpanPrediction]],
) -> SpanPrediction:
    """Pick the highest-confidence window and remap its span into
    original-passage coordinates."""
    if not window_predictions:
        raise ValueError("no window predictions to aggregate")
    best = max(range(len(window_predictions)), key=lambda i: (window_predictions[i][1].p_g, -i))
    window, pred = window_predictions[best]
    span = AnswerSpan(
        window.to_passage_index(pred.span.start),
        window.to_passage_index(pred.span.end),
    )
    return SpanPrediction(pred.example_id, span, pred.p_g)


def filter_pseudo_labels(
    predictions: Sequence[SpanPrediction],
    examples: Mapping[str, RCExample],
    t_prob: float,
    epoch: int = 0,
) -> PseudoLabeledSet:
    """Keep predictions with p_g >= t_prob (boundary inclusive)."""
    if not 0.0 <= t_prob <= 1.0:
        raise ConfigurationError(f"t_prob must lie in [0, 1], got {t_prob}")
    kept = tuple(
        (examples[p.example_id], p) for p in predictions if p.p_g >= t_prob
    )
    return PseudoLabeledSet(samples=kept, epoch=epoch, t_prob=t_prob)


def predict_spans(
    model: SpanModel,
    examples: Sequence[RCExample],
    vocab: Vocabulary,
    *,
    stride: int,
    max_query_len: int,
    n_best: int,
    max_span_len: int = DEFAULT_MAX_SPAN_LEN,
    batch_size: int = 32,
) -> dict[str, SpanPrediction]:
    """One aggregated prediction per example, from a frozen model."""
    all_windows: list[EncodedWindow] = []
    for ex in examples:
        all_windows.extend(
            window_examples(ex, vocab, model.config.max_len, stride, max_query_len, training=False)
        )

    window_preds: list[SpanPrediction] = []
    with torch.no_grad():
        for lo in range(0, len(all_windows), batch_size):
            chunk = all_windows[lo : lo + batch_size]
            batch = collate_windows(chunk)
            out = model(batch["token_ids"], batch["passage_mask"], train_mode=False)
            gs = out.start_logits.numpy()
            ge = out.end_logits.numpy()
            for row, w in enumerate(chunk):
                nbest = n_best_spans(gs[row], ge[row], w.passage_mask, n_best, max_span_len)
                window_preds.append(generating_probability(nbest, w.example_id))

    grouped: dict[str, list[tuple[EncodedWindow, SpanPrediction]]] = {}
    for w, p in zip(all_windows, window_preds):
        grouped.setdefault(w.example_id, []).append((w, p))
    return {ex_id: aggregate_windows(pairs) for ex_id, pairs in grouped.items()}


def dump_pseudo_labels(pseudo_set: PseudoLabeledSet, path: str | Path) -> int:
    """Audit dump, one JSON line per kept sample."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for _, pred in pseudo_set.samples:
            fh.write(
                json.dumps(
                    {
                        "id": pred.example_id,
                        "start": pred.span.start,
                        "end": pred.span.end,
                        "p_g": pred.p_g,
                        "epoch": pseudo_set.epoch,
                    }
                )
                + "\n"
            )
            n += 1
    return n
