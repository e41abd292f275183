"""Feature network, batch normalization, and span output head.

The desk-scale encoder is a small transformer trained from scratch; the
``external_pretrained`` mode only fixes the contract (token ids in,
m x d features out) so a full-scale pretrained encoder can be plugged in
behind the same span head.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .corpus.records import EncodedWindow
from .errors import ConfigurationError

# Realization of the -inf logit mask; large enough to zero out softmax
# mass in float32 without overflowing gradients.
NEG_MASK = -1.0e4

PAD_ID = 0  # pinned by Vocabulary construction


@dataclass(frozen=True)
class EncoderConfig:
    n_layers: int = 2
    hidden_dim: int = 32
    n_heads: int = 4
    max_len: int = 64
    dropout_rate: float = 0.1
    vocab_size: int = 128
    mode: Literal["toy_transformer", "external_pretrained"] = "toy_transformer"
    # 0.02 matches full-scale transformer practice; from-scratch desk
    # models train far more reliably around 0.1
    init_std: float = 0.02

    def __post_init__(self) -> None:
        if self.hidden_dim % self.n_heads:
            raise ConfigurationError("hidden_dim must be divisible by n_heads")
        if self.max_len < 2:
            raise ConfigurationError("max_len must be >= 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must lie in [0, 1)")
        if self.mode not in ("toy_transformer", "external_pretrained"):
            raise ConfigurationError(f"unknown encoder mode '{self.mode}'")
        if self.init_std <= 0:
            raise ConfigurationError("init_std must be > 0")


@dataclass
class ModelOutput:
    """Post-batch-norm features plus masked start/end logits."""

    features: torch.Tensor      # (B, m, d)
    start_logits: torch.Tensor  # (B, m)
    end_logits: torch.Tensor    # (B, m)


def _init_transformer_weights(module: nn.Module, std: float = 0.02) -> None:
    if isinstance(module, (nn.Linear, nn.Embedding)):
        nn.init.trunc_normal_(module.weight, std=std, a=-2 * std, b=2 * std)
        if isinstance(module, nn.Linear) and module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        b, m, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, m, self.n_heads, self.head_dim).transpose(1, 2)
        k = k.view(b, m, self.n_heads, self.head_dim).transpose(1, 2)
        v = v.view(b, m, self.n_heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        scores = scores + pad_mask[:, None, None, :].to(scores.dtype) * NEG_MASK
        attn = self.dropout(torch.softmax(scores, dim=-1))
        ctx = (attn @ v).transpose(1, 2).reshape(b, m, d)
        return self.out(ctx)


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, n_heads: int, dropout: float):
        super().__init__()
        self.attn = MultiHeadSelfAttention(dim, n_heads, dropout)
        self.norm1 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim)
        )
        self.norm2 = nn.LayerNorm(dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.dropout(self.attn(x, pad_mask)))
        return self.norm2(x + self.dropout(self.ffn(x)))


class ToyTransformerEncoder(nn.Module):
    """Learned-position transformer encoder producing (B, m, d) features."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.token_embedding = nn.Embedding(config.vocab_size, config.hidden_dim)
        self.position_embedding = nn.Embedding(config.max_len, config.hidden_dim)
        self.dropout = nn.Dropout(config.dropout_rate)
        self.blocks = nn.ModuleList(
            TransformerBlock(config.hidden_dim, config.n_heads, config.dropout_rate)
            for _ in range(config.n_layers)
        )
        self.apply(lambda m: _init_transformer_weights(m, config.init_std))

    def forward(self, token_ids: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        positions = torch.arange(token_ids.shape[1], device=token_ids.device)
        x = self.token_embedding(token_ids) + self.position_embedding(positions)
        x = self.dropout(x)
        for block in self.blocks:
            x = block(x, pad_mask)
        return x


class ChannelBatchNorm(nn.Module):
    """Batch normalization per hidden channel across batch and positions."""

    def __init__(self, dim: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))
        self.register_buffer("running_mean", torch.zeros(dim))
        self.register_buffer("running_var", torch.ones(dim))

    def forward(self, x: torch.Tensor, train_mode: bool, update_running: bool = True) -> torch.Tensor:
        if train_mode:
            if x.shape[0] < 2:
                raise ValueError("batch normalization needs batch size >= 2 in train mode")
            flat = x.reshape(-1, x.shape[-1])
            mean = flat.mean(dim=0)
            var = flat.var(dim=0, unbiased=False)
            if update_running:
                with torch.no_grad():
                    n = flat.shape[0]
                    unbiased = var * n / max(n - 1, 1)
                    self.running_mean.mul_(1 - self.momentum).add_(self.momentum * mean)
                    self.running_var.mul_(1 - self.momentum).add_(self.momentum * unbiased)
        else:
            mean = self.running_mean
            var = self.running_var
        return (x - mean) / torch.sqrt(var + self.eps) * self.weight + self.bias


class SpanModel(nn.Module):
    """Feature network + batch norm + linear span head."""

    def __init__(
        self,
        config: EncoderConfig,
        use_batchnorm: bool = True,
        feature_encoder: Optional[nn.Module] = None,
    ):
        super().__init__()
        self.config = config
        self.use_batchnorm = use_batchnorm
        if config.mode == "toy_transformer":
            self.encoder = ToyTransformerEncoder(config)
        else:
            if feature_encoder is None:
                raise ConfigurationError(
                    "external_pretrained mode requires a feature_encoder module "
                    "mapping (token_ids, pad_mask) to (batch, max_len, hidden_dim)"
                )
            self.encoder = feature_encoder
        self.batch_norm = ChannelBatchNorm(config.hidden_dim) if use_batchnorm else None
        self.span_head = nn.Linear(config.hidden_dim, 2)
        _init_transformer_weights(self.span_head, config.init_std)

    def encode(self, token_ids: torch.Tensor, train_mode: bool) -> torch.Tensor:
        """Pre-norm features (B, m, d); dropout only in train mode."""
        if token_ids.shape[1] != self.config.max_len:
            raise ValueError(
                f"window length {token_ids.shape[1]} != configured max_len {self.config.max_len}"
            )
        self.train(train_mode)
        pad_mask = token_ids == PAD_ID
        return self.encoder(token_ids, pad_mask)

    def batch_normalize(
        self, features: torch.Tensor, train_mode: bool, update_running: bool = True
    ) -> torch.Tensor:
        if self.batch_norm is None:
            return features
        return self.batch_norm(features, train_mode, update_running)

    def span_logits(
        self, features: torch.Tensor, passage_mask: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        logits = self.span_head(features)
        invalid = (~passage_mask).to(logits.dtype) * NEG_MASK
        return logits[..., 0] + invalid, logits[..., 1] + invalid

    def forward(
        self,
        token_ids: torch.Tensor,
        passage_mask: torch.Tensor,
        train_mode: bool = False,
        update_running: bool = True,
    ) -> ModelOutput:
        pre = self.encode(token_ids, train_mode)
        features = self.batch_normalize(pre, train_mode, update_running)
        start_logits, end_logits = self.span_logits(features, passage_mask)
        return ModelOutput(features, start_logits, end_logits)

    def pad_mask(self, token_ids: torch.Tensor) -> torch.Tensor:
        return token_ids == PAD_ID


def span_loss(
    start_logits: torch.Tensor,
    end_logits: torch.Tensor,
    start_labels: torch.Tensor,
    end_labels: torch.Tensor,
    passage_mask: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Mean over the batch of 0.5 * (CE(start) + CE(end))."""
    if passage_mask is not None:
        rows = torch.arange(start_labels.shape[0], device=start_labels.device)
        if not bool(passage_mask[rows, start_labels].all() & passage_mask[rows, end_labels].all()):
            raise ValueError("span label at masked position")
    return 0.5 * (
        F.cross_entropy(start_logits, start_labels) + F.cross_entropy(end_logits, end_labels)
    )


def collate_windows(
    windows: Sequence[EncodedWindow], with_labels: bool = False
) -> dict[str, torch.Tensor]:
    """Stack windows into model-ready tensors."""
    batch = {
        "token_ids": torch.tensor([w.token_ids for w in windows], dtype=torch.long),
        "passage_mask": torch.tensor([w.passage_mask for w in windows], dtype=torch.bool),
    }
    if with_labels:
        missing = [w.example_id for w in windows if w.label is None]
        if missing:
            raise ValueError(f"windows without labels: {missing[:3]}")
        batch["start_labels"] = torch.tensor([w.label.start for w in windows], dtype=torch.long)
        batch["end_labels"] = torch.tensor([w.label.end for w in windows], dtype=torch.long)
    return batch
