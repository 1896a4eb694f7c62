"""Stream and query encoders mapping raw features to the shared width.

Dynamic: temporal Conv1d (kernel 3, same padding) followed by a linear
projection. Static: per-position linear projection plus a gated causal
exponential moving average (output at position t depends only on inputs at
positions <= t; zero gate weights reduce it to the plain projection).
Text: mean pool of token embeddings, then a linear projection.
"""

from __future__ import annotations

import math
from typing import Sequence

import torch
from torch import Tensor, nn


def require_finite(x: Tensor, name: str) -> None:
    if not torch.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite values")


def _init_linear(layer: nn.Module, gen: torch.Generator) -> None:
    # Matches torch's default kaiming-uniform bound, but generator-seeded.
    fan_in = layer.weight.shape[1]
    if layer.weight.dim() > 2:
        fan_in = int(torch.tensor(layer.weight.shape[1:]).prod())
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        layer.weight.uniform_(-bound, bound, generator=gen)
        if layer.bias is not None:
            layer.bias.uniform_(-bound, bound, generator=gen)


class DynamicEncoder(nn.Module):
    def __init__(self, raw_dim: int, dim: int, kernel_size: int = 3,
                 dtype: torch.dtype = torch.float64):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd for same padding")
        self.kernel_size = kernel_size
        self.conv = nn.Conv1d(raw_dim, raw_dim, kernel_size,
                              padding=kernel_size // 2, dtype=dtype)
        self.proj = nn.Linear(raw_dim, dim, dtype=dtype)

    def reset_parameters(self, gen: torch.Generator) -> None:
        _init_linear(self.conv, gen)
        _init_linear(self.proj, gen)

    def forward(self, raw: Tensor) -> Tensor:
        # raw: (T, raw_dim) -> (T, dim)
        require_finite(raw, "dynamic features")
        if raw.shape[0] < self.kernel_size:
            raise ValueError(
                f"need at least {self.kernel_size} clips, got {raw.shape[0]}"
            )
        h = self.conv(raw.t().unsqueeze(0)).squeeze(0).t()
        return self.proj(h)


class StaticEncoder(nn.Module):
    def __init__(self, raw_dim: int, dim: int, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.proj = nn.Linear(raw_dim, dim, dtype=dtype)
        self.gate = nn.Linear(dim, dim, dtype=dtype)
        self.decay_logit = nn.Parameter(torch.zeros(dim, dtype=dtype))

    def reset_parameters(self, gen: torch.Generator) -> None:
        _init_linear(self.proj, gen)
        _init_linear(self.gate, gen)
        with torch.no_grad():
            self.decay_logit.zero_()

    def forward(self, raw: Tensor) -> Tensor:
        # raw: (T, raw_dim) -> (T, dim)
        require_finite(raw, "static features")
        v = self.proj(raw)
        decay = torch.sigmoid(self.decay_logit)
        state = v[0]
        trail = [state]
        for t in range(1, v.shape[0]):
            state = decay * state + (1.0 - decay) * v[t]
            trail.append(state)
        ema = torch.stack(trail)
        return v + torch.tanh(self.gate(v)) * ema


class TextEncoder(nn.Module):
    def __init__(self, embed_dim: int, dim: int, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.proj = nn.Linear(embed_dim, dim, dtype=dtype)

    def reset_parameters(self, gen: torch.Generator) -> None:
        _init_linear(self.proj, gen)

    def forward(self, token_lists: Sequence[Sequence[int]], table: Tensor) -> Tensor:
        # table: (vocab, embed_dim) -> (num_queries, dim)
        require_finite(table, "token table")
        vocab = table.shape[0]
        pooled = []
        for i, tokens in enumerate(token_lists):
            if len(tokens) == 0:
                raise ValueError(f"query {i} has no tokens")
            ids = torch.as_tensor(list(tokens), dtype=torch.long, device=table.device)
            if ids.min() < 0 or ids.max() >= vocab:
                raise ValueError(f"query {i} has token ids outside [0, {vocab})")
            pooled.append(table[ids].mean(dim=0))
        if not pooled:
            empty = table.new_zeros((0, table.shape[1]))
            return self.proj(empty)
        return self.proj(torch.stack(pooled))
