"""Intensity prediction network.

Per-station 1D CNN features -> graph block over the station adjacency ->
per-station embedding (node dense features concatenated with a broadcast
attention-pooled graph context) -> prediction head, plus a disposable
projection head used only during contrastive training.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, fields, replace
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .layers import AttentionPool, make_graph_layer

log = logging.getLogger(__name__)

FROZEN_AFTER_STRIP = ("input_norm", "cnn", "dense", "gnn", "embedding")


@dataclass(frozen=True)
class ModelConfig:
    n_samples: int = 3000
    cnn_filters: tuple[int, ...] = (16, 16, 32, 32, 48, 96)
    cnn_kernels: tuple[int, ...] = (50, 25, 16, 8, 4, 4)
    cnn_pools: tuple[int, ...] = (4, 6, 12)
    cnn_padding: tuple[str, ...] = ("same", "valid", "valid")
    cnn_dropout: float = 0.1
    dense_widths: tuple[int, ...] = (256, 256)
    dense_dropout: float = 0.1
    gnn_layers: tuple[str, ...] = ("cheb:256", "cheb:256", "skip:256")
    cheb_k: int = 2
    gnn_dropout: float = 0.1
    attention_pool: bool = True
    pool_channels: int = 5
    embedding_dense: int = 100
    embedding_dim: int = 32
    projection_hidden: tuple[int, ...] = (32,)
    projection_dim: int = 10
    projection_dropout: float = 0.05
    head_hidden: tuple[int, ...] = (32,)
    head_bias_init: float = 2.0
    bn_momentum: float = 0.1

    def __post_init__(self):
        if len(self.cnn_filters) != 2 * len(self.cnn_pools):
            raise ValueError("each CNN block needs two filter counts")
        if len(self.cnn_kernels) != len(self.cnn_filters):
            raise ValueError("one kernel size per convolution is required")
        if len(self.cnn_padding) != len(self.cnn_pools):
            raise ValueError("one padding mode per CNN block is required")
        for p in self.cnn_padding:
            if p not in ("same", "valid"):
                raise ValueError(f"padding must be 'same' or 'valid', got {p!r}")
        if self.projection_dim >= self.embedding_dim:
            raise ValueError("projection_dim must be smaller than embedding_dim")
        if not self.gnn_layers:
            raise ValueError("at least one graph layer is required")
        cnn_output_length(self)

    def blocks(self):
        for b, pool in enumerate(self.cnn_pools):
            yield (
                self.cnn_filters[2 * b: 2 * b + 2],
                self.cnn_kernels[2 * b: 2 * b + 2],
                pool,
                self.cnn_padding[b],
            )


def cnn_output_length(cfg: ModelConfig) -> int:
    """Temporal length after the CNN blocks, computed symbolically."""
    length = cfg.n_samples
    for b, (_, kernels, pool, padding) in enumerate(cfg.blocks()):
        if padding == "valid":
            length -= sum(k - 1 for k in kernels)
        length //= pool
        if length < 1:
            raise ValueError(
                f"{cfg.n_samples} samples collapse to nothing after CNN block {b + 1}"
            )
    return length


def tiny_config(n_samples: int = 200, **kw) -> ModelConfig:
    """Small widths for tests and gradient checks."""
    base = dict(
        n_samples=n_samples,
        cnn_filters=(4, 4, 6, 6, 8, 8),
        cnn_kernels=(7, 5, 5, 3, 3, 3),
        cnn_pools=(2, 2, 2),
        dense_widths=(8, 8),
        gnn_layers=("cheb:8", "cheb:8", "skip:8"),
        pool_channels=3,
        embedding_dense=8,
        embedding_dim=8,
        projection_hidden=(8,),
        projection_dim=4,
        head_hidden=(8,),
    )
    base.update(kw)
    return ModelConfig(**base)


def compact_config(n_samples: int = 3000, **kw) -> ModelConfig:
    """Reduced widths that train on a laptop CPU in minutes."""
    base = dict(
        n_samples=n_samples,
        cnn_filters=(8, 8, 16, 16, 16, 16),
        cnn_kernels=(11, 11, 7, 7, 3, 3),
        cnn_pools=(4, 6, 12),
        dense_widths=(64, 64),
        gnn_layers=("cheb:64", "cheb:64", "skip:64"),
        embedding_dense=32,
        embedding_dim=32,
        projection_hidden=(32,),
        projection_dim=10,
        head_hidden=(32,),
        head_bias_init=3.0,
    )
    base.update(kw)
    return ModelConfig(**base)


ABLATIONS = {
    "chc+chc+gcsc+gap": dict(gnn_layers=("cheb:256", "cheb:256", "skip:256"), attention_pool=True),
    "chc+chc+gcsc": dict(gnn_layers=("cheb:256", "cheb:256", "skip:256"), attention_pool=False),
    "chc+chc+gat": dict(gnn_layers=("cheb:256", "cheb:256", "gat:256"), attention_pool=False),
    "chc+chc+gcn": dict(gnn_layers=("cheb:256", "cheb:256", "gcn:256"), attention_pool=False),
    "chc+chc+dc": dict(gnn_layers=("cheb:256", "cheb:256", "diffusion:256"), attention_pool=False),
    "chc+gcsc+gap": dict(gnn_layers=("cheb:256", "skip:256"), attention_pool=True),
}


def ablation_config(name: str, base: ModelConfig | None = None) -> ModelConfig:
    """Layer-combination variants; widths follow ``base``'s graph width."""
    if name not in ABLATIONS:
        raise KeyError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
    base = base or ModelConfig()
    width = base.gnn_layers[0].partition(":")[2] or "256"
    spec = dict(ABLATIONS[name])
    spec["gnn_layers"] = tuple(d.split(":")[0] + ":" + width for d in spec["gnn_layers"])
    return replace(base, **spec)


class ModelOutput(NamedTuple):
    embedding: torch.Tensor
    projection: torch.Tensor | None
    intensity: torch.Tensor


class HeadRemovedError(RuntimeError):
    pass


def _mlp(widths, in_dim, dropout=0.0, norm=False, momentum=0.1):
    layers = []
    for w in widths:
        layers += [nn.Linear(in_dim, w), nn.SiLU()]
        if norm:
            layers.append(nn.BatchNorm1d(w, momentum=momentum))
        if dropout:
            layers.append(nn.Dropout(dropout))
        in_dim = w
    return layers, in_dim


class ConvBlock(nn.Module):
    def __init__(self, in_ch, filters, kernels, pool, padding, dropout, momentum):
        super().__init__()
        self.conv1 = nn.Conv1d(in_ch, filters[0], kernels[0], padding=padding)
        self.conv2 = nn.Conv1d(filters[0], filters[1], kernels[1], padding=padding)
        self.norm = nn.BatchNorm1d(filters[1], momentum=momentum)
        self.pool = nn.MaxPool1d(pool)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        x = F.silu(self.conv1(x))
        x = F.silu(self.conv2(x))
        return self.drop(self.pool(self.norm(x)))


class SeismicGNN(nn.Module):
    """Maps network waveforms (B, N, T, 3) and adjacency (N, N) to intensities (B, N)."""

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        mom = cfg.bn_momentum
        # shared over stations: statistics pooled across batch, station and time
        self.input_norm = nn.BatchNorm1d(3, momentum=mom)

        blocks, in_ch = [], 3
        for filters, kernels, pool, padding in cfg.blocks():
            blocks.append(ConvBlock(in_ch, filters, kernels, pool, padding, cfg.cnn_dropout, mom))
            in_ch = filters[1]
        self.cnn = nn.Sequential(*blocks)
        flat = in_ch * cnn_output_length(cfg)

        dense = []
        for w in cfg.dense_widths:
            dense += [nn.Linear(flat, w), nn.SiLU()]
            flat = w
        dense.append(nn.Dropout(cfg.dense_dropout))
        self.dense = nn.Sequential(*dense)
        self.feature_dim = flat

        self.gnn = nn.ModuleList()
        width = flat
        for desc in cfg.gnn_layers:
            layer, width = make_graph_layer(desc, width, cfg.cheb_k)
            self.gnn.append(layer)
        self.gnn_drop = nn.Dropout(cfg.gnn_dropout)
        self.graph_dim = width

        self.embedding = nn.ModuleDict({
            "node": nn.Linear(width, cfg.embedding_dense),
        })
        emb_in = cfg.embedding_dense
        if cfg.attention_pool:
            self.embedding["pool"] = AttentionPool(width, cfg.pool_channels)
            emb_in += cfg.pool_channels
        self.embedding["out"] = nn.Linear(emb_in, cfg.embedding_dim)

        proj, d = _mlp(cfg.projection_hidden, cfg.embedding_dim, cfg.projection_dropout, norm=True, momentum=mom)
        self.projection: nn.Module | None = nn.Sequential(*proj, nn.Linear(d, cfg.projection_dim))

        head, d = _mlp(cfg.head_hidden, cfg.embedding_dim)
        self.head = nn.Sequential(*head, nn.Linear(d, 1))
        with torch.no_grad():
            self.head[-1].bias.fill_(cfg.head_bias_init)

    # -- stages ------------------------------------------------------------

    def forward_features(self, waveforms: torch.Tensor) -> torch.Tensor:
        """(B, N, T, 3) -> (B, N, feature_dim); stations share all weights."""
        b, n, t, c = waveforms.shape
        if t != self.cfg.n_samples or c != 3:
            raise ValueError(f"expected (*, *, {self.cfg.n_samples}, 3) input, got {tuple(waveforms.shape)}")
        x = waveforms.reshape(b * n, t, c).transpose(1, 2)
        x = self.input_norm(x)
        x = self.cnn(x)
        x = self.dense(x.flatten(1))
        return x.reshape(b, n, -1)

    def forward_graph(self, feats: torch.Tensor, adjacency: torch.Tensor) -> torch.Tensor:
        n = feats.shape[1]
        if adjacency.shape != (n, n):
            raise ValueError(f"adjacency {tuple(adjacency.shape)} does not match {n} stations")
        adjacency = adjacency.to(feats.dtype)
        x = feats
        last = len(self.gnn) - 1
        for i, layer in enumerate(self.gnn):
            x = F.silu(layer(x, adjacency))
            if i < last:
                x = self.gnn_drop(x)
        return x

    def forward_embedding(self, g: torch.Tensor) -> torch.Tensor:
        node = F.silu(self.embedding["node"](g))
        if "pool" in self.embedding:
            ctx = self.embedding["pool"](g)
            node = torch.cat([ctx[:, None, :].expand(-1, g.shape[1], -1), node], dim=-1)
        return self.embedding["out"](node)

    def forward_projection(self, emb: torch.Tensor) -> torch.Tensor:
        if self.projection is None:
            raise HeadRemovedError("contrastive head has been removed")
        b, n, d = emb.shape
        return self.projection(emb.reshape(b * n, d)).reshape(b, n, -1)

    def forward_intensity(self, emb: torch.Tensor) -> torch.Tensor:
        return F.relu(self.head(emb)).squeeze(-1)

    def embed(self, waveforms, adjacency) -> torch.Tensor:
        return self.forward_embedding(self.forward_graph(self.forward_features(waveforms), adjacency))

    def forward(self, waveforms, adjacency) -> ModelOutput:
        emb = self.embed(waveforms, adjacency)
        z = self.forward_projection(emb) if self.projection is not None else None
        return ModelOutput(emb, z, self.forward_intensity(emb))

    # -- lifecycle ---------------------------------------------------------

    @property
    def has_contrastive_head(self) -> bool:
        return self.projection is not None

    def trunk_modules(self):
        return [getattr(self, name) for name in FROZEN_AFTER_STRIP]

    def frozen_mask(self) -> dict[str, bool]:
        return {name: not p.requires_grad for name, p in self.named_parameters()}

    def train(self, mode: bool = True):
        super().train(mode)
        if mode:
            self.set_trunk_eval()
        return self

    def set_trunk_eval(self) -> None:
        """Keep frozen normalisation statistics and dropout fixed."""
        if not self.has_contrastive_head:
            for m in self.trunk_modules():
                m.eval()


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def strip_contrastive_head(model: SeismicGNN) -> SeismicGNN:
    """Drop the projection head and freeze everything up to the embedding."""
    if not model.has_contrastive_head:
        warnings.warn("contrastive head already removed", stacklevel=2)
        return model
    model.projection = None
    for m in model.trunk_modules():
        m.requires_grad_(False)
    model.set_trunk_eval()
    return model


def config_to_dict(cfg: ModelConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}


def config_from_dict(d: dict) -> ModelConfig:
    kw = {}
    for f in fields(ModelConfig):
        if f.name in d:
            v = d[f.name]
            kw[f.name] = tuple(v) if isinstance(v, list) else v
    return ModelConfig(**kw)
