"""Contextual-feature encoder and the unified classification head."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
import torch
from torch import nn

P_DROP = 0.2


class SchemaError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


class FeatureStandardizer(nn.Module):
    """Per-feature z-scoring with statistics from the training split.

    NaN marks a masked value; it becomes 0 after scaling, i.e. the training
    mean.
    """

    def __init__(self, width: int):
        super().__init__()
        self.register_buffer("mean", torch.zeros(width, dtype=torch.float64))
        self.register_buffer("std", torch.ones(width, dtype=torch.float64))

    def fit(self, raw: np.ndarray) -> "FeatureStandardizer":
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape[0] == 0:
            return self
        mean = np.nanmean(raw, axis=0)
        std = np.nanstd(raw, axis=0)
        mean = np.where(np.isfinite(mean), mean, 0.0)
        std = np.where(np.isfinite(std) & (std > 1e-12), std, 1.0)
        self.mean.copy_(torch.from_numpy(mean))
        self.std.copy_(torch.from_numpy(std))
        return self

    def forward(self, raw: torch.Tensor) -> torch.Tensor:
        z = (raw - self.mean.to(raw.dtype)) / self.std.to(raw.dtype)
        return torch.nan_to_num(z, nan=0.0)


class ContextEncoder(nn.Module):
    """``d_TU = tanh(W [x_TF ; x_UF] + b)`` on standardised features."""

    def __init__(self, n_tf: int, n_uf: int, out_dim: int = 128):
        super().__init__()
        self.n_tf, self.n_uf = n_tf, n_uf
        self.out_dim = out_dim
        self.standardizer = FeatureStandardizer(n_tf + n_uf)
        self.linear = nn.Linear(n_tf + n_uf, out_dim)
        bound = 1.0 / math.sqrt(max(1, n_tf + n_uf))
        nn.init.uniform_(self.linear.weight, -bound, bound)
        nn.init.uniform_(self.linear.bias, -bound, bound)

    def features(self, x_tf: torch.Tensor, x_uf: torch.Tensor) -> torch.Tensor:
        if x_tf.shape[-1] != self.n_tf or x_uf.shape[-1] != self.n_uf:
            raise SchemaError(
                f"expected {self.n_tf} tweet and {self.n_uf} user features, "
                f"got {x_tf.shape[-1]} and {x_uf.shape[-1]}"
            )
        return self.standardizer(torch.cat([x_tf, x_uf], dim=-1))

    def encode_standardized(self, x: torch.Tensor) -> torch.Tensor:
        return torch.tanh(self.linear(x))

    def forward(self, x_tf: torch.Tensor, x_uf: torch.Tensor) -> torch.Tensor:
        return self.encode_standardized(self.features(x_tf, x_uf))


def encode_context(x_tf, x_uf, params: ContextEncoder) -> torch.Tensor:
    return params(torch.as_tensor(x_tf, dtype=torch.float64), torch.as_tensor(x_uf, dtype=torch.float64))


def dropout(x: torch.Tensor, p: float, generator: Optional[torch.Generator]) -> torch.Tensor:
    """Inverted dropout with an explicit generator."""
    if p <= 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p
    return x * keep / (1.0 - p)


class ClassifierHead(nn.Module):
    """Dropout, affine map to two logits, softmax."""

    def __init__(self, in_dim: int, p_drop: float = P_DROP):
        super().__init__()
        if not 0.0 <= p_drop < 1.0:
            raise ValueError(f"p_drop must be in [0, 1), got {p_drop}")
        self.p_drop = p_drop
        self.linear = nn.Linear(in_dim, 2)
        bound = 1.0 / math.sqrt(in_dim)
        nn.init.uniform_(self.linear.weight, -bound, bound)
        nn.init.zeros_(self.linear.bias)

    def logits(self, d: torch.Tensor, train: bool = False, generator: Optional[torch.Generator] = None):
        if train:
            d = dropout(d, self.p_drop, generator)
        return self.linear(d)

    def forward(self, d, train=False, generator=None):
        return torch.softmax(self.logits(d, train, generator), dim=-1)


_COMPONENTS = ("ek_hat", "tt_hat", "tg_hat", "ug_hat", "d_tu")


def fuse(ek_hat, tt_hat, tg_hat, ug_hat, d_tu) -> torch.Tensor:
    parts = (ek_hat, tt_hat, tg_hat, ug_hat, d_tu)
    for name, part in zip(_COMPONENTS, parts):
        if not torch.isfinite(part).all():
            raise NumericError(f"non-finite values in {name}")
    return torch.cat(parts, dim=-1)


def classify(
    ek_hat,
    tt_hat,
    tg_hat,
    ug_hat,
    d_tu,
    head: ClassifierHead,
    mode: str = "eval",
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Class probabilities ``(genuine, fake)`` from the five fused representations."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return head(fuse(ek_hat, tt_hat, tg_hat, ug_hat, d_tu), train=mode == "train", generator=generator)
