"""Two-phase training.

Phase 1 optimises contrastive + regression loss on interleaved original /
clipped batches and keeps the weights with the lowest
``L_cont(val) + 100 * L_reg(val)``. The contrastive head is then dropped and
the trunk frozen; phase 2 fits the prediction head on full-length windows
with the regression loss alone and keeps the lowest validation loss.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .augment import AugmentationSpec, make_contrastive_batch
from .data import EventSample
from .losses import LossConfig, contrastive_loss, hybrid_loss, regression_loss
from .model import SeismicGNN, strip_contrastive_head

log = logging.getLogger(__name__)

VAL_REG_FACTOR = 100.0


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    epochs_phase1: int = 100
    epochs_phase2: int = 100
    batch_size: int = 32
    lr_initial: float = 1e-3
    lr_final: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    include_empty_events: bool = False

    def __post_init__(self):
        if self.epochs_phase1 < 1 or self.epochs_phase2 < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError("batch_size must be an even number >= 2")
        if not self.lr_initial >= self.lr_final >= 0:
            raise ValueError("need lr_initial >= lr_final >= 0")
        if self.lr_final == 0 and self.lr_initial != 0:
            raise ValueError("lr_final must be positive unless the schedule is all zero")

    @property
    def total_epochs(self) -> int:
        return self.epochs_phase1 + self.epochs_phase2


def lr_at(epoch: float, cfg: TrainConfig) -> float:
    """Exponential interpolation from lr_initial (epoch 0) to lr_final (last epoch)."""
    if cfg.lr_initial == 0:
        return 0.0
    frac = epoch / cfg.total_epochs
    return cfg.lr_initial * (cfg.lr_final / cfg.lr_initial) ** frac


@dataclass
class CheckpointRecord:
    epoch: int
    phase: int
    metric: float
    state: dict = field(repr=False, default_factory=dict)


@dataclass
class EpochLog:
    epoch: int
    phase: int
    lr: float
    train_loss: float
    val_metric: float


@dataclass
class PhaseResult:
    best: CheckpointRecord
    history: list[EpochLog]


@dataclass
class TrainData:
    """Events for one split plus the shared adjacency weights."""

    adjacency: np.ndarray
    train: list[EventSample]
    validation: list[EventSample]
    aug: AugmentationSpec = field(default_factory=AugmentationSpec)

    def __post_init__(self):
        if not self.train:
            raise ValueError("no training events")


def _dtype(model):
    return next(model.parameters()).dtype


def _tensor(x, model):
    return torch.as_tensor(np.asarray(x), dtype=_dtype(model))


def _epoch_seed(seed: int, phase: int, epoch: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, phase, epoch])


def _batches(events, size, rng):
    order = rng.permutation(len(events))
    for i in range(0, len(order), size):
        yield [events[j] for j in order[i:i + size]]


def _masked_reg(pred, labels, valid, loss_cfg):
    mask = torch.as_tensor(np.asarray(valid), dtype=torch.bool)
    target = torch.as_tensor(np.asarray(labels), dtype=pred.dtype)
    return regression_loss(pred[mask], target[mask], loss_cfg)


def _check_finite(value: torch.Tensor, where: str):
    if not torch.isfinite(value):
        raise DivergenceError(f"non-finite loss during {where}")


def filter_events(events, cfg: TrainConfig):
    if cfg.include_empty_events:
        return list(events)
    kept = [e for e in events if not e.is_empty]
    if len(kept) < len(events):
        log.info("excluding %d events with no available waveforms", len(events) - len(kept))
    return kept


def phase1_step(model, adj, batch, loss_cfg):
    x = _tensor(batch.samples, model)
    out = model(x, adj)
    lc = contrastive_loss(out.projection.reshape(x.shape[0], -1), loss_cfg.temperature)
    lr_ = _masked_reg(out.intensity, batch.labels, batch.label_valid, loss_cfg)
    return lc, lr_


@torch.no_grad()
def phase1_metric(model, data: TrainData, loss_cfg: LossConfig, half_batch: int, seed: int) -> tuple[float, float]:
    """Validation contrastive and regression losses with fixed augmentation draws."""
    events = data.validation or data.train
    was_training = model.training
    model.eval()
    adj = _tensor(data.adjacency, model)
    conts, preds, labels, valid = [], [], [], []
    for i in range(0, len(events), half_batch):
        chunk = events[i:i + half_batch]
        batch = make_contrastive_batch(chunk, data.aug, rng_seed=[seed, 7919, i])
        x = _tensor(batch.samples, model)
        out = model(x, adj)
        conts.append(float(contrastive_loss(out.projection.reshape(x.shape[0], -1), loss_cfg.temperature)))
        preds.append(out.intensity)
        labels.append(batch.labels)
        valid.append(batch.label_valid)
    reg = _masked_reg(torch.cat(preds), np.concatenate(labels), np.concatenate(valid), loss_cfg)
    model.train(was_training)
    return float(np.mean(conts)), float(reg)


def train_phase1(
    model: SeismicGNN,
    data: TrainData,
    cfg: TrainConfig = TrainConfig(),
    loss_cfg: LossConfig = LossConfig(),
    on_epoch=None,
) -> PhaseResult:
    """Hybrid contrastive training; restores the best weights before returning."""
    if not model.has_contrastive_head:
        raise ValueError("phase 1 needs the contrastive head")
    torch.manual_seed(cfg.seed)
    half = cfg.batch_size // 2
    train_events = filter_events(data.train, cfg)
    adj = _tensor(data.adjacency, model)
    opt = torch.optim.Adam(
        [p for p in model.parameters() if p.requires_grad],
        lr=lr_at(0, cfg), betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps,
    )
    best = None
    history = []
    for epoch in range(cfg.epochs_phase1):
        lr = lr_at(epoch, cfg)
        for g in opt.param_groups:
            g["lr"] = lr
        model.train()
        seq = _epoch_seed(cfg.seed, 1, epoch)
        rng = np.random.default_rng(seq)
        losses = []
        for b, chunk in enumerate(_batches(train_events, half, rng)):
            if len(chunk) < 1:
                continue
            batch = make_contrastive_batch(
                chunk, data.aug, rng_seed=[cfg.seed, data.aug.seed, epoch, b], epoch=epoch,
            )
            lc, lreg = phase1_step(model, adj, batch, loss_cfg)
            loss = hybrid_loss(lc, lreg)
            try:
                _check_finite(loss, f"phase 1 epoch {epoch}")
            except DivergenceError:
                if best is not None:
                    model.load_state_dict(best.state)
                raise
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        vc, vr = phase1_metric(model, data, loss_cfg, half, cfg.seed)
        metric = vc + VAL_REG_FACTOR * vr
        if not math.isfinite(metric):
            if best is not None:
                model.load_state_dict(best.state)
            raise DivergenceError(f"non-finite validation metric in phase 1 epoch {epoch}")
        entry = EpochLog(epoch, 1, lr, float(np.mean(losses)), metric)
        history.append(entry)
        log.info("phase 1 epoch %d lr %.3g loss %.5f val %.5f", epoch, lr, entry.train_loss, metric)
        if best is None or metric < best.metric:
            best = CheckpointRecord(epoch, 1, metric, copy.deepcopy(model.state_dict()))
        if on_epoch:
            on_epoch(entry)
    model.load_state_dict(best.state)
    return PhaseResult(best, history)


def freeze_and_strip(model: SeismicGNN) -> SeismicGNN:
    return strip_contrastive_head(model)


@torch.no_grad()
def embed_events(model: SeismicGNN, adjacency, events: Sequence[EventSample], batch_size: int = 32,
                 window_s: float | None = None) -> torch.Tensor:
    """Embeddings (E, N, D_E) in inference mode, optionally on clipped inputs."""
    from .augment import clip_and_pad

    was_training = model.training
    model.eval()
    adj = _tensor(adjacency, model)
    out = []
    for i in range(0, len(events), batch_size):
        x = np.stack([e.waveforms for e in events[i:i + batch_size]])
        if window_s is not None:
            x = clip_and_pad(x, window_s)
        out.append(model.embed(_tensor(x, model), adj))
    model.train(was_training)
    return torch.cat(out)


def _labels(events):
    return (np.stack([np.nan_to_num(e.labels, nan=0.0) for e in events]),
            np.stack([e.label_valid for e in events]))


def train_phase2(
    model: SeismicGNN,
    data: TrainData,
    cfg: TrainConfig = TrainConfig(),
    loss_cfg: LossConfig = LossConfig(),
    on_epoch=None,
) -> PhaseResult:
    """Fit the prediction head on full-length windows; trunk must be frozen.

    The frozen trunk runs in inference mode, so its embeddings are computed
    once per event and reused across epochs.
    """
    if model.has_contrastive_head:
        raise ValueError("strip the contrastive head before phase 2")
    torch.manual_seed(cfg.seed + 1)
    train_events = filter_events(data.train, cfg)
    val_events = data.validation or train_events
    emb_tr = embed_events(model, data.adjacency, train_events)
    emb_va = embed_events(model, data.adjacency, val_events)
    lab_tr, val_tr = _labels(train_events)
    lab_va, val_va = _labels(val_events)

    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=lr_at(cfg.epochs_phase1, cfg),
                           betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)
    best, history = None, []
    for epoch in range(cfg.epochs_phase2):
        global_epoch = cfg.epochs_phase1 + epoch
        lr = lr_at(global_epoch, cfg)
        for g in opt.param_groups:
            g["lr"] = lr
        model.train()
        rng = np.random.default_rng(_epoch_seed(cfg.seed, 2, epoch))
        order = rng.permutation(len(train_events))
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            pred = model.forward_intensity(emb_tr[idx])
            loss = _masked_reg(pred, lab_tr[idx], val_tr[idx], loss_cfg)
            try:
                _check_finite(loss, f"phase 2 epoch {epoch}")
            except DivergenceError:
                if best is not None:
                    model.load_state_dict(best.state)
                raise
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        model.eval()
        with torch.no_grad():
            metric = float(_masked_reg(model.forward_intensity(emb_va), lab_va, val_va, loss_cfg))
        if not math.isfinite(metric):
            if best is not None:
                model.load_state_dict(best.state)
            raise DivergenceError(f"non-finite validation metric in phase 2 epoch {epoch}")
        entry = EpochLog(global_epoch, 2, lr, float(np.mean(losses)), metric)
        history.append(entry)
        log.info("phase 2 epoch %d lr %.3g loss %.5f val %.5f", global_epoch, lr, entry.train_loss, metric)
        if best is None or metric < best.metric:
            best = CheckpointRecord(global_epoch, 2, metric, copy.deepcopy(model.state_dict()))
        if on_epoch:
            on_epoch(entry)
    model.load_state_dict(best.state)
    return PhaseResult(best, history)


def train_two_phase(model, data, cfg=TrainConfig(), loss_cfg=LossConfig(), on_epoch=None):
    p1 = train_phase1(model, data, cfg, loss_cfg, on_epoch)
    freeze_and_strip(model)
    p2 = train_phase2(model, data, cfg, loss_cfg, on_epoch)
    return p1, p2


def write_history(path, history: Sequence[EpochLog]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "phase", "lr", "train_loss", "val_metric"])
        for h in history:
            w.writerow([h.epoch, h.phase, repr(h.lr), repr(h.train_loss), repr(h.val_metric)])


@torch.no_grad()
def predict(model: SeismicGNN, adjacency, events: Sequence[EventSample], window_s: float | None = None,
            batch_size: int = 32) -> np.ndarray:
    """Predicted intensities (E, N) from inputs clipped to ``window_s`` seconds."""
    emb = embed_events(model, adjacency, events, batch_size, window_s)
    was_training = model.training
    model.eval()
    pred = model.forward_intensity(emb).cpu().numpy()
    model.train(was_training)
    return pred
