"""Parallel co-attention between two representation sequences."""

from __future__ import annotations

import math
from typing import NamedTuple

import torch
from torch import nn


class DimensionError(ValueError):
    pass


class CoAttentionOutput(NamedTuple):
    a_hat: torch.Tensor  # (..., Z)
    b_hat: torch.Tensor  # (..., Z)
    attn_a: torch.Tensor  # (..., X)
    attn_b: torch.Tensor  # (..., Y)
    affinity: torch.Tensor  # (..., Y, X)


class CoAttention(nn.Module):
    """Affinity-coupled attention over ``d_a`` (X x Z) and ``d_b`` (Y x Z).

    ``affinity[y, x] = tanh(d_a[x] . W_b . d_b[y])``. Each side's hidden map
    mixes its own projection with the other side's projection routed through
    the affinity; a softmax over positions gives the attention weights and the
    summaries are the attention-weighted sums of the input rows. Inputs may
    carry a leading batch dimension.
    """

    def __init__(self, dim: int, hidden: int = 256):
        super().__init__()
        if dim < 1 or hidden < 1:
            raise ValueError("dim and hidden must be positive")
        self.dim = dim
        self.hidden = hidden
        self.W_b = nn.Parameter(torch.empty(dim, dim))
        self.W_a_proj = nn.Parameter(torch.empty(hidden, dim))
        self.W_b_proj = nn.Parameter(torch.empty(hidden, dim))
        self.w_ha = nn.Parameter(torch.empty(hidden))
        self.w_hb = nn.Parameter(torch.empty(hidden))
        self.reset_parameters()

    def reset_parameters(self) -> None:
        b_in = 1.0 / math.sqrt(self.dim)
        b_h = 1.0 / math.sqrt(self.hidden)
        for p in (self.W_b, self.W_a_proj, self.W_b_proj):
            nn.init.uniform_(p, -b_in, b_in)
        for p in (self.w_ha, self.w_hb):
            nn.init.uniform_(p, -b_h, b_h)

    def forward(self, d_a: torch.Tensor, d_b: torch.Tensor) -> CoAttentionOutput:
        if d_a.dim() < 2 or d_b.dim() < 2:
            raise DimensionError(f"d_a and d_b must be at least 2-D, got {tuple(d_a.shape)} and {tuple(d_b.shape)}")
        if d_a.shape[-1] != self.dim or d_b.shape[-1] != self.dim:
            raise DimensionError(
                f"inner dim mismatch: d_a {tuple(d_a.shape)}, d_b {tuple(d_b.shape)}, W_b expects {self.dim}"
            )
        if d_a.shape[:-2] != d_b.shape[:-2]:
            raise DimensionError(f"batch dims differ: d_a {tuple(d_a.shape)}, d_b {tuple(d_b.shape)}")
        if d_a.shape[-2] < 1 or d_b.shape[-2] < 1:
            raise DimensionError("d_a and d_b need at least one row each")

        affinity = torch.tanh(d_b @ self.W_b.T @ d_a.transpose(-1, -2))  # (.., Y, X)
        proj_a = self.W_a_proj @ d_a.transpose(-1, -2)  # (.., k, X)
        proj_b = self.W_b_proj @ d_b.transpose(-1, -2)  # (.., k, Y)
        h_a = torch.tanh(proj_a + proj_b @ affinity)
        h_b = torch.tanh(proj_b + proj_a @ affinity.transpose(-1, -2))
        attn_a = torch.softmax(self.w_ha @ h_a, dim=-1)
        attn_b = torch.softmax(self.w_hb @ h_b, dim=-1)
        a_hat = (attn_a.unsqueeze(-2) @ d_a).squeeze(-2)
        b_hat = (attn_b.unsqueeze(-2) @ d_b).squeeze(-2)
        return CoAttentionOutput(a_hat, b_hat, attn_a, attn_b, affinity)


def coattend(d_a, d_b, params: CoAttention) -> CoAttentionOutput:
    return params(torch.as_tensor(d_a), torch.as_tensor(d_b))
