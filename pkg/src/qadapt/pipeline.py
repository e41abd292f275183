"""Training orchestration: source pretraining, alternating self-training
and conditional adversarial epochs, domain balancing, and run artifacts.

A run directory contains ``config.json``, ``metrics.jsonl`` (one JSON
line per logged step or epoch; no wall-clock fields, so identical
config+seed reproduces the file byte for byte), per-epoch checkpoints
under ``checkpoints/epoch_<n>/``, and one pseudo-label audit dump per
adaptation epoch.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence, TypeVar

import numpy as np
import torch

from .adversary import (
    Discriminator,
    DiscriminatorConfig,
    DomainBatch,
    RandomizedMap,
    adversarial_step,
    init_randomized_map,
)
from .checkpoint import load_checkpoint, restore_model, save_checkpoint
from .corpus.loaders import load_dataset, write_span_json
from .corpus.records import EncodedWindow, RCExample
from .corpus.synthetic import SyntheticTaskSpec, generate_synthetic_domain_pair
from .corpus.vocab import Vocabulary
from .corpus.windows import window_examples
from .errors import ConfigurationError
from .evaluation import evaluate
from .model import EncoderConfig, SpanModel, collate_windows, span_loss
from .pseudo import (
    PseudoLabeledSet,
    dump_pseudo_labels,
    filter_pseudo_labels,
    predict_spans,
)

logger = logging.getLogger(__name__)

ABLATION_TOGGLES = ("no_conditioning", "no_adversarial", "no_selftrain", "no_batchnorm")

_PHASE_IDS = {"pretrain": 0, "self_train": 1, "balance": 2, "adversarial": 3}

T = TypeVar("T")


@dataclass(frozen=True)
class PipelineConfig:
    # schedule and optimization
    n_pre: int = 3
    n_da: int = 4
    lr_pretrain: float = 3e-5
    lr_selftrain: float = 2e-5
    lr_adversarial: float = 1e-5
    batch_size: int = 12
    t_prob: float = 0.4
    n_best: int = 20
    max_span_len: int = 30
    dropout: float = 0.2
    use_entropy: bool = False
    reversal_coefficient: float = 1.0
    seed: int = 13
    # ablation toggles
    no_conditioning: bool = False
    no_adversarial: bool = False
    no_selftrain: bool = False
    no_batchnorm: bool = False
    # encoder
    n_layers: int = 2
    hidden_dim: int = 32
    n_heads: int = 4
    max_len: int = 64
    encoder_mode: str = "toy_transformer"
    init_std: float = 0.02
    # adversary
    d_r: int = 768
    disc_hidden_dim: int = 512
    # data handling
    stride: int = 128
    max_query_len: int = 40
    source_format: str = "span_json"
    target_format: str = "span_json"
    source_data: Optional[str] = None
    target_data: Optional[str] = None
    synthetic: Optional[dict] = None
    checkpoint: Optional[str] = None
    run_dir: Optional[str] = None
    eval_each_epoch: bool = False

    def __post_init__(self) -> None:
        for name in ("lr_pretrain", "lr_selftrain", "lr_adversarial"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be > 0")
        if self.n_pre < 1 or self.n_da < 1:
            raise ConfigurationError("n_pre and n_da must be >= 1")
        if not 0.0 <= self.t_prob <= 1.0:
            raise ConfigurationError("t_prob must lie in [0, 1]")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.reversal_coefficient < 0:
            raise ConfigurationError("reversal_coefficient must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        unknown = set(raw) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_json(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(
            n_layers=self.n_layers,
            hidden_dim=self.hidden_dim,
            n_heads=self.n_heads,
            max_len=self.max_len,
            dropout_rate=self.dropout,
            vocab_size=vocab_size,
            mode=self.encoder_mode,
            init_std=self.init_std,
        )


@dataclass
class EpochLog:
    epoch: int
    phase: str  # pretrain | self_train | adversarial
    pseudo_label_count: Optional[int] = None
    mean_loss: Optional[float] = None
    steps: int = 0
    wall_time: float = 0.0
    eval_em: Optional[float] = None
    eval_f1: Optional[float] = None


class MetricsWriter:
    """Append-only line-delimited JSON metrics stream."""

    def __init__(self, path: Optional[Path]):
        self.path = path
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text("")

    def write(self, record: dict) -> None:
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")


@dataclass
class RunResult:
    model: SpanModel
    disc: Optional[Discriminator]
    rmap: Optional[RandomizedMap]
    vocab: Vocabulary
    epoch_logs: list[EpochLog]
    run_dir: Optional[Path]
    source_examples: list[RCExample]
    target_examples: list[RCExample]


def _phase_rng(config: PipelineConfig, phase: str, epoch: int) -> np.random.Generator:
    return np.random.default_rng([config.seed, _PHASE_IDS[phase], epoch])


def _minibatches(n: int, batch_size: int, rng: np.random.Generator, min_size: int = 1):
    """Shuffled index batches; trailing batches below min_size are dropped
    (train-mode batch norm rejects singleton batches)."""
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        chunk = order[lo : lo + batch_size]
        if len(chunk) >= min_size:
            yield chunk


def _train_span_epoch(
    model: SpanModel,
    windows: Sequence[EncodedWindow],
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
) -> tuple[float, int]:
    """One epoch of span-loss optimization; fresh Adam at the phase rate."""
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    min_size = 2 if model.use_batchnorm else 1
    losses = []
    for idx in _minibatches(len(windows), batch_size, rng, min_size):
        batch = collate_windows([windows[i] for i in idx], with_labels=True)
        optimizer.zero_grad()
        out = model(batch["token_ids"], batch["passage_mask"], train_mode=True)
        loss = span_loss(
            out.start_logits, out.end_logits,
            batch["start_labels"], batch["end_labels"], batch["passage_mask"],
        )
        loss.backward()
        optimizer.step()
        losses.append(float(loss.detach()))
    if not losses:
        return 0.0, 0
    return math.fsum(losses) / len(losses), len(losses)


def _training_windows(
    examples: Sequence[RCExample], vocab: Vocabulary, config: PipelineConfig
) -> list[EncodedWindow]:
    windows: list[EncodedWindow] = []
    for ex in examples:
        windows.extend(
            window_examples(ex, vocab, config.max_len, config.stride, config.max_query_len, True)
        )
    return windows


def _inference_windows(
    examples: Sequence[RCExample], vocab: Vocabulary, config: PipelineConfig
) -> list[EncodedWindow]:
    windows: list[EncodedWindow] = []
    for ex in examples:
        windows.extend(
            window_examples(ex, vocab, config.max_len, config.stride, config.max_query_len, False)
        )
    return windows


def pretrain_source(
    model: SpanModel,
    source_windows: Sequence[EncodedWindow],
    config: PipelineConfig,
    metrics: MetricsWriter,
    logs: list[EpochLog],
    run_dir: Optional[Path] = None,
    vocab: Optional[Vocabulary] = None,
) -> SpanModel:
    """N_pre epochs of supervised span training on labeled source windows."""
    if not source_windows:
        raise ConfigurationError("pretraining needs a non-empty labeled source set")
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr_pretrain)
    min_size = 2 if model.use_batchnorm else 1
    step = 0
    for epoch in range(1, config.n_pre + 1):
        started = time.perf_counter()
        rng = _phase_rng(config, "pretrain", epoch)
        losses = []
        for idx in _minibatches(len(source_windows), config.batch_size, rng, min_size):
            batch = collate_windows([source_windows[i] for i in idx], with_labels=True)
            optimizer.zero_grad()
            out = model(batch["token_ids"], batch["passage_mask"], train_mode=True)
            loss = span_loss(
                out.start_logits, out.end_logits,
                batch["start_labels"], batch["end_labels"], batch["passage_mask"],
            )
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
            step += 1
        mean_loss = math.fsum(losses) / len(losses) if losses else 0.0
        metrics.write(
            {"kind": "pretrain_epoch", "epoch": epoch, "mean_loss": mean_loss, "steps": len(losses)}
        )
        logs.append(
            EpochLog(
                epoch=epoch, phase="pretrain", mean_loss=mean_loss,
                steps=len(losses), wall_time=time.perf_counter() - started,
            )
        )
        if run_dir is not None:
            save_checkpoint(
                run_dir / "checkpoints" / f"epoch_{epoch}",
                model.state_dict(), config.to_dict(), step, vocab=vocab,
            )
    return model


def self_train_epoch(
    model: SpanModel,
    target_examples: Sequence[RCExample],
    vocab: Vocabulary,
    config: PipelineConfig,
    epoch: int,
    metrics: MetricsWriter,
    logs: list[EpochLog],
    run_dir: Optional[Path] = None,
) -> tuple[SpanModel, PseudoLabeledSet]:
    """Regenerate pseudo labels from the current model, then train on the
    confident subset. An empty subset skips the training pass."""
    started = time.perf_counter()
    predictions = predict_spans(
        model, target_examples, vocab,
        stride=config.stride, max_query_len=config.max_query_len,
        n_best=config.n_best, max_span_len=config.max_span_len,
    )
    by_id = {ex.id: ex for ex in target_examples}
    ordered = [predictions[ex.id] for ex in target_examples]
    pseudo_set = filter_pseudo_labels(ordered, by_id, config.t_prob, epoch)
    if run_dir is not None:
        dump_pseudo_labels(pseudo_set, run_dir / f"pseudo_labels_epoch_{epoch}.jsonl")

    mean_loss: Optional[float] = None
    steps = 0
    if len(pseudo_set) == 0:
        logger.warning("epoch %d: empty pseudo-label set, self-training skipped", epoch)
    else:
        labeled = [ex.with_answer(pred.span) for ex, pred in pseudo_set.samples]
        windows = _training_windows(labeled, vocab, config)
        rng = _phase_rng(config, "self_train", epoch)
        mean_loss, steps = _train_span_epoch(
            model, windows, config.lr_selftrain, config.batch_size, rng
        )
    metrics.write(
        {
            "kind": "self_train",
            "epoch": epoch,
            "pseudo_label_count": len(pseudo_set),
            "mean_loss": mean_loss,
            "steps": steps,
        }
    )
    logs.append(
        EpochLog(
            epoch=epoch, phase="self_train", pseudo_label_count=len(pseudo_set),
            mean_loss=mean_loss, steps=steps, wall_time=time.perf_counter() - started,
        )
    )
    return model, pseudo_set


def balance_domains(
    source_items: Sequence[T], target_items: Sequence[T], seed
) -> list[tuple[T, int]]:
    """Subsample the larger side to the smaller side's size (seeded,
    without replacement), label 0=source / 1=target, and shuffle."""
    if not source_items or not target_items:
        raise ConfigurationError("domain balancing needs samples on both sides")
    rng = np.random.default_rng(seed)
    n = min(len(source_items), len(target_items))

    def pick(items: Sequence[T]) -> list[T]:
        if len(items) == n:
            return list(items)
        chosen = rng.choice(len(items), size=n, replace=False)
        return [items[i] for i in sorted(chosen)]

    merged = [(w, 0) for w in pick(source_items)] + [(w, 1) for w in pick(target_items)]
    order = rng.permutation(len(merged))
    return [merged[i] for i in order]


def adversarial_epoch(
    model: SpanModel,
    disc: Discriminator,
    rmap: RandomizedMap,
    merged: Sequence[tuple[EncodedWindow, int]],
    config: PipelineConfig,
    epoch: int,
    metrics: MetricsWriter,
    logs: list[EpochLog],
) -> tuple[SpanModel, Discriminator]:
    """One pass of joint adversarial updates over the balanced stream."""
    started = time.perf_counter()
    optimizer = torch.optim.Adam(
        list(model.parameters()) + list(disc.parameters()), lr=config.lr_adversarial
    )
    min_size = 2 if model.use_batchnorm else 1
    losses = []
    accuracies = []
    step = 0
    for lo in range(0, len(merged), config.batch_size):
        chunk = merged[lo : lo + config.batch_size]
        if len(chunk) < min_size:
            continue
        batch = DomainBatch(
            windows=tuple(w for w, _ in chunk),
            domain_labels=tuple(y for _, y in chunk),
        )
        stats = adversarial_step(
            model, disc, rmap, batch, optimizer,
            use_entropy=config.use_entropy,
            reversal_coefficient=config.reversal_coefficient,
            conditioned=not config.no_conditioning,
        )
        step += 1
        metrics.write(
            {
                "kind": "adversarial_step",
                "epoch": epoch,
                "step": step,
                "loss": stats["loss"],
                "mean_pred_source": stats["mean_pred_source"],
                "mean_pred_target": stats["mean_pred_target"],
                "mean_weight": stats["mean_weight"],
            }
        )
        losses.append(stats["loss"])
        accuracies.append(stats["accuracy"])
    mean_loss = math.fsum(losses) / len(losses) if losses else 0.0
    mean_acc = math.fsum(accuracies) / len(accuracies) if accuracies else 0.0
    metrics.write(
        {
            "kind": "adversarial_epoch",
            "epoch": epoch,
            "mean_loss": mean_loss,
            "mean_accuracy": mean_acc,
            "steps": step,
        }
    )
    logs.append(
        EpochLog(
            epoch=epoch, phase="adversarial", mean_loss=mean_loss,
            steps=step, wall_time=time.perf_counter() - started,
        )
    )
    return model, disc


def _materialize_synthetic(config: PipelineConfig, run_dir: Path) -> tuple[str, str]:
    spec = SyntheticTaskSpec.from_dict(config.synthetic)
    source, target = generate_synthetic_domain_pair(spec)
    data_dir = run_dir / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    source_path = data_dir / "source.json"
    target_path = data_dir / "target.json"
    write_span_json(source, source_path)
    write_span_json(target, target_path)
    return str(source_path), str(target_path)


def run_case(
    source_path: Optional[str | Path],
    target_path: Optional[str | Path],
    config: PipelineConfig,
    run_dir: str | Path,
) -> RunResult:
    """Full alternating adaptation run.

    Pretrains on the labeled source (or resumes from ``config.checkpoint``),
    then for each adaptation epoch self-trains on confidence-filtered
    pseudo labels and, on every epoch but the last, runs one balanced
    conditional adversarial epoch. Ablation toggles excise their phase.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(config.seed)

    if config.synthetic is not None and (source_path is None or target_path is None):
        source_path, target_path = _materialize_synthetic(config, run_dir)
    if source_path is None or target_path is None:
        raise ConfigurationError("run_case needs source and target data (paths or synthetic spec)")

    (run_dir / "config.json").write_text(
        json.dumps(config.to_dict(), indent=2), encoding="utf-8"
    )
    metrics = MetricsWriter(run_dir / "metrics.jsonl")
    logs: list[EpochLog] = []

    source_examples = load_dataset(source_path, config.source_format, domain="source")
    target_examples = load_dataset(target_path, config.target_format, domain="target")

    resumed = None
    if config.checkpoint:
        resumed = load_checkpoint(config.checkpoint)
        if resumed.vocab is None:
            raise ConfigurationError("resume checkpoint carries no vocabulary")
        vocab = resumed.vocab
    else:
        vocab = Vocabulary.build(source_examples, target_examples)

    model = SpanModel(
        config.encoder_config(len(vocab)), use_batchnorm=not config.no_batchnorm
    )
    rmap = None
    disc = None
    if not config.no_adversarial:
        rmap = init_randomized_map(config.d_r, config.max_len, config.seed)
        disc = Discriminator(
            DiscriminatorConfig(
                input_dim=config.d_r,
                hidden_dim=config.disc_hidden_dim,
                dropout_rate=config.dropout,
                reversal_coefficient=config.reversal_coefficient,
            )
        )

    if resumed is not None:
        restore_model(model, resumed)
    else:
        source_windows = _training_windows(source_examples, vocab, config)
        pretrain_source(model, source_windows, config, metrics, logs, run_dir, vocab)

    target_labeled = all(ex.answer is not None for ex in target_examples)
    source_inference = _inference_windows(source_examples, vocab, config)
    target_inference = _inference_windows(target_examples, vocab, config)

    for epoch in range(1, config.n_da + 1):
        if not config.no_selftrain:
            model, _ = self_train_epoch(
                model, target_examples, vocab, config, epoch, metrics, logs, run_dir
            )
        if epoch < config.n_da and not config.no_adversarial:
            merged = balance_domains(
                source_inference, target_inference, [config.seed, _PHASE_IDS["balance"], epoch]
            )
            adversarial_epoch(model, disc, rmap, merged, config, epoch, metrics, logs)
        if config.eval_each_epoch and target_labeled:
            snapshot = evaluate(
                model, target_examples, vocab,
                stride=config.stride, max_query_len=config.max_query_len,
                n_best=config.n_best, max_span_len=config.max_span_len,
            )
            metrics.write(
                {
                    "kind": "eval",
                    "epoch": epoch,
                    "em": round(snapshot.exact_match, 2),
                    "f1": round(snapshot.f1, 2),
                }
            )
            if logs:
                logs[-1].eval_em = snapshot.exact_match
                logs[-1].eval_f1 = snapshot.f1
        save_checkpoint(
            run_dir / "checkpoints" / f"epoch_{config.n_pre + epoch}",
            model.state_dict(), config.to_dict(), config.n_pre + epoch, vocab=vocab,
        )

    return RunResult(
        model=model, disc=disc, rmap=rmap, vocab=vocab, epoch_logs=logs,
        run_dir=run_dir, source_examples=source_examples, target_examples=target_examples,
    )


def pretrain_only(
    datasets: Sequence[Sequence[RCExample]],
    source_index: int,
    config: PipelineConfig,
    run_dir: str | Path,
) -> tuple[SpanModel, Vocabulary]:
    """Train a zero-shot model on one dataset over a shared vocabulary."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(config.seed)
    vocab = Vocabulary.build(*datasets)
    model = SpanModel(
        config.encoder_config(len(vocab)), use_batchnorm=not config.no_batchnorm
    )
    metrics = MetricsWriter(run_dir / "metrics.jsonl")
    logs: list[EpochLog] = []
    windows = _training_windows(datasets[source_index], vocab, config)
    pretrain_source(model, windows, config, metrics, logs, run_dir, vocab)
    return model, vocab
