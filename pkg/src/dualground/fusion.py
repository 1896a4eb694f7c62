"""Multimodal fusion: concatenate the three sequences, normalize, MLP, split.

The block is purely row-wise (LayerNorm and MLP act per position, there is
no cross-token mixing), so each output row depends only on its own input row.
The first residual adds LayerNorm(x) onto x itself; `literal_residual_norm`
keeps that form, switching it off drops the extra normalization term.
"""

from __future__ import annotations

import math

import torch
from torch import Tensor, nn

from .encoders import _init_linear


def gelu_exact(x: Tensor) -> Tensor:
    # Spelled out via erf: the fused F.gelu kernel rounds its vectorized body
    # and scalar tail differently, so outputs there depend on row position
    # and break bitwise permutation equivariance.
    return 0.5 * x * (1.0 + torch.erf(x / math.sqrt(2.0)))


class FusionBlock(nn.Module):
    def __init__(self, dim: int, hidden_mult: int = 4, literal_residual_norm: bool = True,
                 eps: float = 1e-5, dtype: torch.dtype = torch.float64):
        super().__init__()
        if dim < 1:
            raise ValueError("fusion width must be positive")
        self.literal_residual_norm = literal_residual_norm
        self.pre_norm = nn.LayerNorm(dim, eps=eps, dtype=dtype)
        self.out_norm = nn.LayerNorm(dim, eps=eps, dtype=dtype)
        self.fc1 = nn.Linear(dim, hidden_mult * dim, dtype=dtype)
        self.fc2 = nn.Linear(hidden_mult * dim, dim, dtype=dtype)

    def reset_parameters(self, gen: torch.Generator) -> None:
        _init_linear(self.fc1, gen)
        _init_linear(self.fc2, gen)
        with torch.no_grad():
            for norm in (self.pre_norm, self.out_norm):
                norm.weight.fill_(1.0)
                norm.bias.zero_()

    def mlp(self, x: Tensor) -> Tensor:
        return self.fc2(gelu_exact(self.fc1(x)))

    def forward(self, dyn: Tensor, sta: Tensor, qry: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        # dyn, sta: (T, D); qry: (N, D) with N >= 0
        if dyn.shape[0] != sta.shape[0]:
            raise ValueError("dynamic and static streams must share a clip count")
        num_clips = dyn.shape[0]
        x = torch.cat([dyn, sta, qry], dim=0)  # (2T + N, D)
        if self.literal_residual_norm:
            x = x + self.pre_norm(x)
        x = self.out_norm(x + self.mlp(x))
        return (
            x[:num_clips],
            x[num_clips:2 * num_clips],
            x[2 * num_clips:],
        )
