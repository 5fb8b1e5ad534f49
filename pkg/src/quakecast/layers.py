"""Dense-adjacency graph layers operating on (batch, nodes, features) tensors.

The adjacency is a single (N, N) matrix shared by every graph in the batch.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


def normalized_adjacency(a: torch.Tensor) -> torch.Tensor:
    """D^-1/2 A D^-1/2 with degrees taken from A as given (self-loops included)."""
    deg = a.sum(dim=1)
    inv_sqrt = torch.where(deg > 0, deg.clamp_min(1e-12).rsqrt(), torch.zeros_like(deg))
    return inv_sqrt[:, None] * a * inv_sqrt[None, :]


def scaled_laplacian(a: torch.Tensor) -> torch.Tensor:
    """2 L / lambda_max - I for the normalised Laplacian, with lambda_max ~ 2.

    This reduces to -D^-1/2 A D^-1/2.
    """
    return -normalized_adjacency(a)


def random_walk(a: torch.Tensor) -> torch.Tensor:
    deg = a.sum(dim=1, keepdim=True)
    return torch.where(deg > 0, a / deg.clamp_min(1e-12), torch.zeros_like(a))


def _propagate(m: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    return torch.einsum("ij,bjf->bif", m, x)


def _glorot(w: torch.Tensor) -> None:
    nn.init.xavier_uniform_(w)


class ChebConv(nn.Module):
    """Chebyshev spectral filter with K terms T_0 .. T_{K-1}."""

    def __init__(self, in_channels: int, out_channels: int, k: int = 2):
        super().__init__()
        if k < 1:
            raise ValueError("Chebyshev order must be >= 1")
        self.k = k
        self.weight = nn.Parameter(torch.empty(k, in_channels, out_channels))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        for i in range(k):
            _glorot(self.weight.data[i])

    def forward(self, x: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
        lap = scaled_laplacian(a)
        t_prev, t_cur = x, None
        out = t_prev @ self.weight[0]
        if self.k > 1:
            t_cur = _propagate(lap, x)
            out = out + t_cur @ self.weight[1]
        for i in range(2, self.k):
            t_next = 2 * _propagate(lap, t_cur) - t_prev
            out = out + t_next @ self.weight[i]
            t_prev, t_cur = t_cur, t_next
        return out + self.bias


class GraphSkipConv(nn.Module):
    """Normalised neighbourhood aggregation plus a trainable skip transform."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.w_neigh = nn.Parameter(torch.empty(in_channels, out_channels))
        self.w_skip = nn.Parameter(torch.empty(in_channels, out_channels))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        _glorot(self.w_neigh)
        _glorot(self.w_skip)

    def forward(self, x, a):
        return _propagate(normalized_adjacency(a), x) @ self.w_neigh + x @ self.w_skip + self.bias


class GraphConv(nn.Module):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(in_channels, out_channels))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        _glorot(self.weight)

    def forward(self, x, a):
        return _propagate(normalized_adjacency(a), x) @ self.weight + self.bias


class DiffusionConv(nn.Module):
    """Sum of random-walk diffusion powers P^0 .. P^{K-1}, each with own weights."""

    def __init__(self, in_channels: int, out_channels: int, k: int = 2):
        super().__init__()
        self.k = k
        self.weight = nn.Parameter(torch.empty(k, in_channels, out_channels))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        for i in range(k):
            _glorot(self.weight.data[i])

    def forward(self, x, a):
        p = random_walk(a)
        h = x
        out = h @ self.weight[0]
        for i in range(1, self.k):
            h = _propagate(p, h)
            out = out + h @ self.weight[i]
        return out + self.bias


class GraphAttention(nn.Module):
    """Single-head attention restricted to edges with positive weight."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(in_channels, out_channels))
        self.att_src = nn.Parameter(torch.empty(out_channels))
        self.att_dst = nn.Parameter(torch.empty(out_channels))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        _glorot(self.weight)
        bound = 1.0 / math.sqrt(out_channels)
        nn.init.uniform_(self.att_src, -bound, bound)
        nn.init.uniform_(self.att_dst, -bound, bound)

    def forward(self, x, a):
        h = x @ self.weight
        e = (h @ self.att_dst)[:, :, None] + (h @ self.att_src)[:, None, :]
        e = F.leaky_relu(e, 0.2)
        mask = (a > 0) | torch.eye(a.shape[0], dtype=torch.bool, device=a.device)
        e = e.masked_fill(~mask, float("-inf"))
        alpha = torch.softmax(e, dim=-1)
        return alpha @ h + self.bias


class AttentionPool(nn.Module):
    """Gated global pooling: sum_i sigmoid(x_i W_g) * (x_i W_f) over nodes."""

    def __init__(self, in_channels: int, channels: int):
        super().__init__()
        self.features = nn.Linear(in_channels, channels)
        self.gate = nn.Linear(in_channels, channels)

    def forward(self, x):
        return (torch.sigmoid(self.gate(x)) * self.features(x)).sum(dim=1)


LAYER_TYPES = {
    "cheb": ChebConv,
    "skip": GraphSkipConv,
    "gcn": GraphConv,
    "diffusion": DiffusionConv,
    "gat": GraphAttention,
}


def make_graph_layer(descriptor: str, in_channels: int, k: int = 2) -> tuple[nn.Module, int]:
    """Build a layer from ``"kind:channels"``, e.g. ``"cheb:256"``."""
    kind, _, width = descriptor.partition(":")
    kind = kind.strip().lower()
    if kind not in LAYER_TYPES:
        raise ValueError(f"unknown graph layer {kind!r}; choose from {sorted(LAYER_TYPES)}")
    out = int(width) if width else in_channels
    if kind in ("cheb", "diffusion"):
        return LAYER_TYPES[kind](in_channels, out, k), out
    return LAYER_TYPES[kind](in_channels, out), out
