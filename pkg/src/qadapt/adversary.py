"""Conditional domain discriminator and its randomized multilinear input.

The discriminator sees a fixed random projection that approximates the
outer product of per-position-averaged features and concatenated span
logits, so domain prediction is conditioned on what the model outputs,
not just on its features. A gradient-reversal layer between that
embedding and the discriminator makes the feature and output networks
oppose the discriminator in a single backward pass. Optional entropy
weighting up-weights confident samples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import torch
from torch import nn

from .corpus.records import EncodedWindow
from .errors import ConfigurationError

BCE_EPS = 1e-7


@dataclass(frozen=True)
class RandomizedMap:
    """Fixed random projection matrices; sampled once, never trained."""

    r_f: torch.Tensor  # (d_r, m)
    r_g: torch.Tensor  # (d_r, 2m)
    d_r: int
    seed: int

    def __post_init__(self) -> None:
        if self.r_f.shape[0] != self.d_r or self.r_g.shape[0] != self.d_r:
            raise ValueError("map rows must equal d_r")
        if self.r_g.shape[1] != 2 * self.r_f.shape[1]:
            raise ValueError("r_g must have twice the columns of r_f")


def init_randomized_map(
    d_r: int, max_len: int, seed: int, dtype: torch.dtype = torch.float32
) -> RandomizedMap:
    """Standard-normal matrices from a dedicated seeded generator."""
    if d_r < 1:
        raise ConfigurationError("d_r must be >= 1")
    rng = np.random.default_rng(seed)
    r_f = torch.from_numpy(rng.standard_normal((d_r, max_len))).to(dtype)
    r_g = torch.from_numpy(rng.standard_normal((d_r, 2 * max_len))).to(dtype)
    return RandomizedMap(r_f=r_f, r_g=r_g, d_r=d_r, seed=seed)


def multilinear_embed(
    features: torch.Tensor,
    start_logits: torch.Tensor,
    end_logits: torch.Tensor,
    rmap: RandomizedMap,
    pad_mask: Optional[torch.Tensor] = None,
    conditioned: bool = True,
) -> torch.Tensor:
    """(1/sqrt(d_r)) * (R_f avg(f)) o (R_g (g_s ++ g_e)).

    ``avg`` averages the feature matrix over its hidden channels, one
    value per position; feature rows at padding are zeroed first. With
    ``conditioned=False`` the logits factor is dropped and only the
    projected features reach the discriminator.
    """
    single = features.dim() == 2
    if single:
        features = features.unsqueeze(0)
        start_logits = start_logits.unsqueeze(0)
        end_logits = end_logits.unsqueeze(0)
        if pad_mask is not None:
            pad_mask = pad_mask.unsqueeze(0)
    m = rmap.r_f.shape[1]
    if features.shape[1] != m or start_logits.shape[1] != m or end_logits.shape[1] != m:
        raise ValueError(
            f"inputs of length {features.shape[1]} do not match map width {m}"
        )
    if pad_mask is not None:
        features = features * (~pad_mask).unsqueeze(-1).to(features.dtype)
    avg = features.mean(dim=2)  # (B, m)
    scale = 1.0 / math.sqrt(rmap.d_r)
    r_f = rmap.r_f.to(features.dtype)
    projected = avg @ r_f.T
    if conditioned:
        g = torch.cat([start_logits, end_logits], dim=1)
        projected = projected * (g @ rmap.r_g.to(g.dtype).T)
    out = scale * projected
    return out.squeeze(0) if single else out


class _GradientReversal(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, coefficient):
        ctx.coefficient = coefficient
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return -ctx.coefficient * grad_output, None


def gradient_reversal(x: torch.Tensor, coefficient: float = 1.0) -> torch.Tensor:
    """Identity forward; upstream modules receive -coefficient * grad."""
    if coefficient < 0:
        raise ConfigurationError("reversal coefficient must be >= 0")
    return _GradientReversal.apply(x, coefficient)


@dataclass(frozen=True)
class DiscriminatorConfig:
    input_dim: int
    hidden_dim: int = 512
    dropout_rate: float = 0.2
    reversal_coefficient: float = 1.0

    def __post_init__(self) -> None:
        if self.reversal_coefficient < 0:
            raise ConfigurationError("reversal coefficient must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must lie in [0, 1)")


class Discriminator(nn.Module):
    """3-layer network ending in a sigmoid domain probability."""

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        self.layers = nn.Sequential(
            nn.Linear(config.input_dim, config.hidden_dim),
            nn.ReLU(),
            nn.Dropout(config.dropout_rate),
            nn.Linear(config.hidden_dim, config.hidden_dim),
            nn.ReLU(),
            nn.Dropout(config.dropout_rate),
            nn.Linear(config.hidden_dim, 1),
        )

    def forward(self, embedding: torch.Tensor, train_mode: bool = False) -> torch.Tensor:
        self.train(train_mode)
        single = embedding.dim() == 1
        if single:
            embedding = embedding.unsqueeze(0)
        out = torch.sigmoid(self.layers(embedding)).squeeze(-1)
        return out.squeeze(0) if single else out


def adversarial_loss(
    predictions: torch.Tensor,
    domain_labels: torch.Tensor,
    weights: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Binary cross entropy, mean over the batch; optional per-sample
    weights multiply in before the mean."""
    p = torch.clamp(predictions, BCE_EPS, 1.0 - BCE_EPS)
    y = domain_labels.to(p.dtype)
    per_sample = -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p))
    if weights is not None:
        per_sample = weights.to(per_sample.dtype) * per_sample
    return per_sample.mean()


def sample_entropy(
    start_logits: torch.Tensor,
    end_logits: torch.Tensor,
    passage_mask: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Summed prediction entropy of the start and end distributions."""
    from .model import NEG_MASK

    if passage_mask is not None:
        extra = (~passage_mask).to(start_logits.dtype) * NEG_MASK
        start_logits = start_logits + extra
        end_logits = end_logits + extra

    def _entropy(logits: torch.Tensor) -> torch.Tensor:
        logp = torch.log_softmax(logits, dim=-1)
        return -(logp.exp() * logp).sum(dim=-1)

    return _entropy(start_logits) + _entropy(end_logits)


def entropy_weight(entropy: Union[float, torch.Tensor]) -> Union[float, torch.Tensor]:
    """w = 1 + exp(-E), in (1, 2]; constant w.r.t. gradients."""
    if isinstance(entropy, torch.Tensor):
        return (1.0 + torch.exp(-entropy)).detach()
    return 1.0 + math.exp(-entropy)


@dataclass(frozen=True)
class DomainBatch:
    """Windows plus their domain labels (0 = source, 1 = target)."""

    windows: tuple[EncodedWindow, ...]
    domain_labels: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.windows) != len(self.domain_labels):
            raise ValueError("one domain label per window required")
        if any(y not in (0, 1) for y in self.domain_labels):
            raise ValueError("domain labels must be 0 or 1")

    def __len__(self) -> int:
        return len(self.windows)


def adversarial_step(
    model,
    disc: Discriminator,
    rmap: RandomizedMap,
    batch: DomainBatch,
    optimizer: torch.optim.Optimizer,
    *,
    use_entropy: bool = False,
    reversal_coefficient: float = 1.0,
    conditioned: bool = True,
) -> dict[str, Optional[float]]:
    """One joint update: D minimizes the (optionally entropy-weighted)
    BCE while F and G receive the reversed, coefficient-scaled gradient
    through the multilinear embedding."""
    from .model import collate_windows

    if reversal_coefficient < 0:
        raise ConfigurationError("reversal coefficient must be >= 0")

    tensors = collate_windows(batch.windows)
    labels = torch.tensor(batch.domain_labels, dtype=torch.float32)

    optimizer.zero_grad()
    out = model(tensors["token_ids"], tensors["passage_mask"], train_mode=True)
    pad = model.pad_mask(tensors["token_ids"])
    embedding = multilinear_embed(
        out.features, out.start_logits, out.end_logits, rmap,
        pad_mask=pad, conditioned=conditioned,
    )
    predictions = disc(gradient_reversal(embedding, reversal_coefficient), train_mode=True)

    weights = None
    if use_entropy:
        weights = entropy_weight(
            sample_entropy(out.start_logits, out.end_logits)
        )
    loss = adversarial_loss(predictions, labels, weights)
    loss.backward()
    optimizer.step()

    with torch.no_grad():
        is_target = labels > 0.5
        stats = {
            "loss": float(loss.detach()),
            "mean_pred_source": float(predictions[~is_target].mean()) if bool((~is_target).any()) else None,
            "mean_pred_target": float(predictions[is_target].mean()) if bool(is_target.any()) else None,
            "mean_weight": float(weights.mean()) if weights is not None else 1.0,
            "accuracy": float(((predictions > 0.5) == is_target).float().mean()),
        }
    return stats
