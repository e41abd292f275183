"""Answer-string metrics, transfer matrices, and the dataset force graph.

EM and F1 follow the de-facto SQuAD evaluation convention: answers are
lowercased, punctuation and the articles a/an/the are stripped, and
whitespace is collapsed before comparison; F1 is the harmonic mean of
bag-of-token precision and recall over the normalized strings.
"""
from __future__ import annotations

import json
import math
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus.records import RCExample
from .corpus.vocab import Vocabulary
from .pseudo import predict_spans

_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    text = text.lower().translate(_PUNCT_TABLE)
    text = _ARTICLE_RE.sub(" ", text)
    return " ".join(text.split())


def exact_match(prediction: str, gold: str) -> int:
    return int(normalize_answer(prediction) == normalize_answer(gold))


def f1_score(prediction: str, gold: str) -> float:
    pred_tokens = normalize_answer(prediction).split()
    gold_tokens = normalize_answer(gold).split()
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    common = Counter(pred_tokens) & Counter(gold_tokens)
    n_same = sum(common.values())
    if n_same == 0:
        return 0.0
    precision = n_same / len(pred_tokens)
    recall = n_same / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class EvalResult:
    exact_match: float  # percentage
    f1: float           # percentage
    n_examples: int

    def __post_init__(self) -> None:
        if not (0.0 <= self.exact_match <= self.f1 + 1e-9 and self.f1 <= 100.0 + 1e-9):
            raise ValueError(f"inconsistent result EM={self.exact_match} F1={self.f1}")

    @property
    def mean_score(self) -> float:
        """Average of EM and F1, the P value used by force computation."""
        return (self.exact_match + self.f1) / 2.0

    def to_dict(self) -> dict:
        return {
            "em": round(self.exact_match, 2),
            "f1": round(self.f1, 2),
            "n_examples": self.n_examples,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "EvalResult":
        return cls(raw["em"], raw["f1"], raw.get("n_examples", 0))


def score_predictions(dataset: Sequence[RCExample], predictions) -> EvalResult:
    """EM/F1 of per-example span predictions against gold answers.

    ``predictions`` maps example id to a prediction carrying a ``span``
    in passage coordinates.
    """
    if not dataset:
        raise ValueError("cannot evaluate an empty dataset")
    if any(ex.answer is None and ex.answer_text is None for ex in dataset):
        raise ValueError("evaluation dataset must carry gold answers")
    ems = []
    f1s = []
    for ex in dataset:
        pred_text = ex.span_text(predictions[ex.id].span)
        gold = ex.gold_text()
        ems.append(float(exact_match(pred_text, gold)))
        f1s.append(f1_score(pred_text, gold))
    n = len(dataset)
    # fsum keeps the means exactly order-invariant under dataset shuffles
    return EvalResult(100.0 * math.fsum(ems) / n, 100.0 * math.fsum(f1s) / n, n)


def evaluate(
    model,
    dataset: Sequence[RCExample],
    vocab: Vocabulary,
    *,
    stride: int,
    max_query_len: int,
    n_best: int,
    max_span_len: int = 30,
    batch_size: int = 64,
) -> EvalResult:
    """Score aggregated best-window predictions against gold answers."""
    if not dataset:
        raise ValueError("cannot evaluate an empty dataset")
    predictions = predict_spans(
        model, dataset, vocab,
        stride=stride, max_query_len=max_query_len,
        n_best=n_best, max_span_len=max_span_len, batch_size=batch_size,
    )
    return score_predictions(dataset, predictions)


def compute_force(p_ij: float, p_ji: float, p_i: float, p_j: float) -> float:
    """F_ij = P_ij / P_j + P_ji / P_i over mean-of-EM-and-F1 scores."""
    if p_i <= 0 or p_j <= 0:
        raise ValueError("zero self-performance; force undefined")
    return p_ij / p_j + p_ji / p_i


@dataclass
class TransferMatrix:
    """Cross-dataset results: cells[i][j] holds source i -> target j."""

    datasets: list[str]
    cells: list[list[Optional[EvalResult]]]
    diagonal: list[EvalResult]
    meta: dict[str, dict] = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = len(self.datasets)
        if len(self.cells) != n or any(len(row) != n for row in self.cells):
            raise ValueError("cells must be square over the dataset list")
        if len(self.diagonal) != n:
            raise ValueError("diagonal must hold one self result per dataset")

    def to_dict(self) -> dict:
        return {
            "datasets": list(self.datasets),
            "cells": [
                [cell.to_dict() if cell else None for cell in row] for row in self.cells
            ],
            "diagonal": [d.to_dict() for d in self.diagonal],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TransferMatrix":
        return cls(
            datasets=list(raw["datasets"]),
            cells=[
                [EvalResult.from_dict(c) if c else None for c in row]
                for row in raw["cells"]
            ],
            diagonal=[EvalResult.from_dict(d) for d in raw["diagonal"]],
            meta=raw.get("meta", {}),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TransferMatrix":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _force_layout(
    n_nodes: int,
    edges: Sequence[tuple[int, int, float]],
    seed: int,
    iterations: int = 200,
) -> np.ndarray:
    """Fruchterman-Reingold-style layout with a fixed iteration count."""
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-0.5, 0.5, size=(n_nodes, 2))
    if n_nodes == 1:
        return pos
    k = 1.0 / math.sqrt(n_nodes)
    max_force = max((w for _, _, w in edges), default=1.0) or 1.0
    for step in range(iterations):
        disp = np.zeros_like(pos)
        for i in range(n_nodes):
            delta = pos[i] - pos
            dist = np.maximum(np.linalg.norm(delta, axis=1), 1e-9)
            repulse = (delta.T / dist * (k * k / dist)).T
            repulse[i] = 0.0
            disp[i] += repulse.sum(axis=0)
        for a, b, w in edges:
            delta = pos[a] - pos[b]
            dist = max(float(np.linalg.norm(delta)), 1e-9)
            pull = delta / dist * (dist * dist / k) * (w / max_force)
            disp[a] -= pull
            disp[b] += pull
        temp = 0.1 * (1.0 - step / iterations)
        lengths = np.maximum(np.linalg.norm(disp, axis=1), 1e-9)
        pos += (disp.T / lengths * np.minimum(lengths, temp)).T
    return pos


def build_force_graph(matrix: TransferMatrix, seed: int = 0, iterations: int = 200) -> dict:
    """Graph JSON with pairwise forces and a deterministic layout.

    Node size and corpus/question-form tags come from ``matrix.meta``
    when present.
    """
    n = len(matrix.datasets)
    self_scores = [d.mean_score for d in matrix.diagonal]
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if matrix.cells[i][j] is None or matrix.cells[j][i] is None:
                raise ValueError(f"missing off-diagonal cell between {i} and {j}")
            force = compute_force(
                matrix.cells[i][j].mean_score,
                matrix.cells[j][i].mean_score,
                self_scores[i],
                self_scores[j],
            )
            edges.append((i, j, force))
    pos = _force_layout(n, edges, seed, iterations)
    nodes = []
    for i, name in enumerate(matrix.datasets):
        meta = matrix.meta.get(name, {})
        nodes.append(
            {
                "id": name,
                "x": round(float(pos[i][0]), 6),
                "y": round(float(pos[i][1]), 6),
                "size": meta.get("size", 1),
                "corpus": meta.get("corpus", "unknown"),
                "qform": meta.get("question_form", "unknown"),
            }
        )
    return {
        "nodes": nodes,
        "edges": [
            {"a": matrix.datasets[a], "b": matrix.datasets[b], "force": round(f, 6)}
            for a, b, f in edges
        ],
    }


def emit_graph(
    matrix: TransferMatrix,
    out_path: str | Path,
    seed: int = 0,
    metadata: Optional[dict[str, dict]] = None,
) -> dict:
    if metadata:
        matrix.meta = {**matrix.meta, **metadata}
    graph = build_force_graph(matrix, seed=seed)
    Path(out_path).write_text(json.dumps(graph, indent=2), encoding="utf-8")
    return graph


def zero_shot_matrix(dataset_paths: Sequence[str | Path], config, run_dir: str | Path) -> TransferMatrix:
    """Table-2 protocol: train on each dataset, evaluate on every other."""
    from .corpus.loaders import load_dataset, read_dataset_tags
    from .pipeline import pretrain_only

    if len(dataset_paths) < 2:
        raise ValueError("a transfer matrix needs at least two datasets")
    names = [Path(p).stem for p in dataset_paths]
    datasets = [load_dataset(p, config.source_format) for p in dataset_paths]
    meta = {}
    for name, path, data in zip(names, dataset_paths, datasets):
        tags = read_dataset_tags(path)
        meta[name] = {
            "size": len(data),
            "corpus": tags.get("corpus", "unknown"),
            "question_form": tags.get("question_form", "unknown"),
        }

    n = len(names)
    cells: list[list[Optional[EvalResult]]] = [[None] * n for _ in range(n)]
    diagonal: list[Optional[EvalResult]] = [None] * n
    for i in range(n):
        model, vocab = pretrain_only(
            datasets, i, config, Path(run_dir) / f"source_{names[i]}"
        )
        for j in range(n):
            result = evaluate(
                model, datasets[j], vocab,
                stride=config.stride, max_query_len=config.max_query_len,
                n_best=config.n_best, max_span_len=config.max_span_len,
            )
            if i == j:
                diagonal[i] = result
            else:
                cells[i][j] = result
    return TransferMatrix(datasets=names, cells=cells, diagonal=diagonal, meta=meta)


def probe_threshold(config, grid: Sequence[float], run_dir: str | Path) -> list[dict]:
    """Sweep T_prob: per-epoch pseudo-label counts plus final target EM/F1."""
    from dataclasses import replace

    from .pipeline import run_case

    rows = []
    for t_prob in grid:
        sub_config = replace(config, t_prob=float(t_prob))
        sub_dir = Path(run_dir) / f"t_prob_{t_prob}"
        result = run_case(config.source_data, config.target_data, sub_config, sub_dir)
        counts = [
            log.pseudo_label_count
            for log in result.epoch_logs
            if log.phase == "self_train"
        ]
        final = evaluate(
            result.model, result.target_examples, result.vocab,
            stride=config.stride, max_query_len=config.max_query_len,
            n_best=config.n_best, max_span_len=config.max_span_len,
        )
        rows.append(
            {
                "t_prob": float(t_prob),
                "pseudo_label_counts": counts,
                "em": round(final.exact_match, 2),
                "f1": round(final.f1, 2),
            }
        )
    return rows
