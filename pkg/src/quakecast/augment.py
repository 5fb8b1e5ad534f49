"""Clip-and-zero-pad augmentation and contrastive batch layout.

A contrastive batch interleaves originals and their augmentations:
``[e1, aug(e1), e2, aug(e2), ...]`` so that samples ``2k`` and ``2k + 1``
(0-based) form a positive pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import SAMPLING_RATE, EventSample

CLIP_CHOICES_30S = (5, 10, 15, 20, 25)
CLIP_CHOICES_10S = (5, 6, 7, 8, 9)
MODES = ("sample", "enumerate")


@dataclass(frozen=True)
class AugmentationSpec:
    clip_choices: tuple[int, ...] = CLIP_CHOICES_30S
    full_length_s: int = 30
    sampling_rate: float = SAMPLING_RATE
    mode: str = "sample"
    seed: int = 0

    def __post_init__(self):
        if not self.clip_choices:
            raise ValueError("clip_choices must not be empty")
        for c in self.clip_choices:
            if int(c) != c or c <= 0:
                raise ValueError(f"clip choice {c} is not a positive integer")
            if c > self.full_length_s:
                raise ValueError(f"clip choice {c} s exceeds full length {self.full_length_s} s")
        if self.mode not in MODES:
            raise ValueError(f"augmentation mode must be one of {MODES}")

    @classmethod
    def for_length(cls, full_length_s: int, **kw) -> "AugmentationSpec":
        if "clip_choices" not in kw:
            kw["clip_choices"] = CLIP_CHOICES_10S if full_length_s <= 10 else CLIP_CHOICES_30S
        return cls(full_length_s=full_length_s, **kw)


@dataclass
class ContrastiveBatch:
    samples: np.ndarray          # (M, N, T, 3)
    event_ids: list[str]         # length M, each id twice
    clip_seconds: np.ndarray     # (M,), full length for originals
    labels: np.ndarray           # (M, N)
    label_valid: np.ndarray      # (M, N)

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    def partners(self) -> np.ndarray:
        return positive_partners(self.size)


def positive_partners(m: int) -> np.ndarray:
    """Index of each sample's positive partner for the interleaved layout."""
    if m % 2:
        raise ValueError(f"batch size must be even, got {m}")
    return np.arange(m) ^ 1


def clip_and_pad(waveform: np.ndarray, t_c: float, sampling_rate: float = SAMPLING_RATE) -> np.ndarray:
    """Keep the first ``t_c`` seconds along the sample axis, zero the rest.

    ``waveform`` is (..., n_samples, 3); the shape is preserved.
    """
    waveform = np.asarray(waveform)
    n_keep = int(round(t_c * sampling_rate))
    n_samples = waveform.shape[-2]
    if n_keep > n_samples:
        raise ValueError(f"clip of {t_c} s needs {n_keep} samples, record has {n_samples}")
    if n_keep < 0:
        raise ValueError("clip length must be non-negative")
    out = np.zeros_like(waveform)
    out[..., :n_keep, :] = waveform[..., :n_keep, :]
    return out


def draw_clips(spec: AugmentationSpec, n: int, rng_seed, epoch: int = 0, offset: int = 0) -> np.ndarray:
    """Clip length for each of ``n`` events.

    ``sample`` mode draws uniformly; ``enumerate`` cycles every choice across
    consecutive epochs so that each event sees all of them.
    """
    choices = np.asarray(spec.clip_choices)
    if spec.mode == "enumerate":
        return choices[(epoch + offset + np.arange(n)) % len(choices)]
    rng = np.random.default_rng(rng_seed)
    return choices[rng.integers(0, len(choices), size=n)]


def make_contrastive_batch(
    events: Sequence[EventSample],
    spec: AugmentationSpec,
    rng_seed=None,
    epoch: int = 0,
) -> ContrastiveBatch:
    """Interleave each event with one network-wide clipped copy of itself."""
    ids = [e.event_id for e in events]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate events in one contrastive batch")
    if not events:
        raise ValueError("empty batch")
    seed = spec.seed if rng_seed is None else rng_seed
    clips = draw_clips(spec, len(events), seed, epoch=epoch)

    n, t = events[0].waveforms.shape[:2]
    m = 2 * len(events)
    samples = np.zeros((m, n, t, 3), dtype=np.float32)
    labels = np.zeros((m, n))
    valid = np.zeros((m, n), dtype=bool)
    clip_s = np.zeros(m)
    batch_ids = []
    for k, (ev, tc) in enumerate(zip(events, clips)):
        samples[2 * k] = ev.waveforms
        samples[2 * k + 1] = clip_and_pad(ev.waveforms, float(tc), spec.sampling_rate)
        lab = np.nan_to_num(ev.labels, nan=0.0)
        labels[2 * k] = labels[2 * k + 1] = lab
        valid[2 * k] = valid[2 * k + 1] = ev.label_valid
        clip_s[2 * k] = t / spec.sampling_rate
        clip_s[2 * k + 1] = tc
        batch_ids += [ev.event_id, ev.event_id]
    return ContrastiveBatch(samples, batch_ids, clip_s, labels, valid)
