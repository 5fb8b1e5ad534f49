"""Contrastive, composite regression and hybrid losses."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
import torch.nn.functional as F

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.1
    w_corr: float = 0.002
    w_huber: float = 1.0
    w_mse: float = 0.0096
    w_mae: float = 0.002
    w_asym: float = 0.0032
    huber_delta: float = 1.0
    asym_factor: float = 2.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if min(self.w_corr, self.w_huber, self.w_mse, self.w_mae, self.w_asym) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be positive")
        if self.asym_factor <= 1:
            raise ValueError("asym_factor must exceed 1")


def contrastive_loss(z: torch.Tensor, temperature: float = 0.1, partners=None) -> torch.Tensor:
    """Sum over the batch of -log softmax similarity to the positive partner.

    ``z`` is (M, D); rows are L2-normalised before the dot products. The
    softmax for sample m runs over every other sample. ``partners`` gives each
    row's positive index; default pairs rows (0, 1), (2, 3), ...
    """
    if z.dim() != 2:
        z = z.reshape(z.shape[0], -1)
    m = z.shape[0]
    if partners is None:
        if m % 2:
            raise ValueError(f"contrastive batch size must be even, got {m}")
        partners = torch.arange(m, device=z.device) ^ 1
    else:
        partners = torch.as_tensor(partners, device=z.device)
        if partners.shape != (m,):
            raise ValueError("one partner index per sample is required")
        if torch.any(partners == torch.arange(m, device=z.device)):
            raise ValueError("a sample cannot be its own positive")
        if torch.any(partners[partners] != torch.arange(m, device=z.device)):
            raise ValueError("positive pairs are not matched")
    zn = F.normalize(z, dim=1)
    sim = zn @ zn.T / temperature
    self_mask = torch.eye(m, dtype=torch.bool, device=z.device)
    sim_others = sim.masked_fill(self_mask, float("-inf"))
    log_denom = torch.logsumexp(sim_others, dim=1)
    pos = sim[torch.arange(m, device=z.device), partners]
    return torch.sum(log_denom - pos)


def huber(err: torch.Tensor, delta: float) -> torch.Tensor:
    a = err.abs()
    return torch.where(a <= delta, 0.5 * err * err, delta * (a - 0.5 * delta))


def pearson_r(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor | None:
    """Pearson correlation, or None where either side has zero variance."""
    pc = pred - pred.mean()
    tc = target - target.mean()
    denom2 = (pc * pc).sum() * (tc * tc).sum()
    if denom2.item() <= 0.0:
        return None
    return (pc * tc).sum() / torch.sqrt(denom2)


def regression_loss(pred: torch.Tensor, target: torch.Tensor, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Weighted sum of correlation, Huber, MSE, MAE and asymmetric Huber terms.

    The asymmetric term multiplies the Huber penalty by ``cfg.asym_factor``
    where the prediction underestimates the target. All terms are means over
    the elements. A zero-variance side makes r undefined; the correlation
    term is then charged as if r = 0.
    """
    pred = pred.reshape(-1)
    target = target.reshape(-1).to(pred.dtype)
    if pred.shape != target.shape:
        raise ValueError("pred and target lengths differ")
    if pred.numel() < 2:
        raise ValueError("regression loss needs at least two elements")
    err = pred - target
    r = pearson_r(pred, target)
    if r is None:
        log.debug("zero variance in regression loss; correlation term uses r = 0")
        corr_term = pred.new_tensor(1.0)
    else:
        corr_term = 1.0 - r * r
    h = huber(err, cfg.huber_delta)
    scale = torch.where(pred < target, pred.new_tensor(cfg.asym_factor), pred.new_tensor(1.0))
    return (
        cfg.w_corr * corr_term
        + cfg.w_huber * h.mean()
        + cfg.w_mse * (err * err).mean()
        + cfg.w_mae * err.abs().mean()
        + cfg.w_asym * (scale * h).mean()
    )


def hybrid_loss(contrastive, regression):
    return contrastive + regression
