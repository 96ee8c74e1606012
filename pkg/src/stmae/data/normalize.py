"""Per-channel normalization with padded-channel neutrality.

Statistics are computed on the train split only. Invalid channels are left
untouched (they are identically zero and must stay that way).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

import torch

from stmae.data.scene import SceneSample


@dataclass(frozen=True)
class NormalizationStats:
    mean: tuple[float, ...]
    std: tuple[float, ...]
    band_valid: tuple[bool, ...]

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std), "band_valid": list(self.band_valid)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(mean=tuple(d["mean"]), std=tuple(d["std"]), band_valid=tuple(bool(b) for b in d["band_valid"]))


def compute_normalization_stats(samples: Iterable[SceneSample]) -> NormalizationStats:
    """Accumulate per-channel mean/std in float64 over all pixels and frames."""
    total = None
    total_sq = None
    count = 0
    band_valid = None
    for sample in samples:
        x = sample.values.to(torch.float64)
        if total is None:
            c = x.shape[1]
            total = torch.zeros(c, dtype=torch.float64)
            total_sq = torch.zeros(c, dtype=torch.float64)
            band_valid = sample.band_valid.clone()
        elif not torch.equal(band_valid, sample.band_valid):
            raise ValueError("samples disagree on band validity")
        total += x.sum(dim=(0, 2, 3))
        total_sq += (x * x).sum(dim=(0, 2, 3))
        count += x.shape[0] * x.shape[2] * x.shape[3]
    if total is None or count == 0:
        raise ValueError("no samples provided")
    mean = total / count
    var = total_sq / count - mean * mean
    std = torch.sqrt(var.clamp_min(0.0))
    for ch in range(len(mean)):
        if band_valid[ch] and std[ch] < 1e-8:
            raise ValueError(f"channel {ch} has zero variance on the train split")
    # Invalid channels carry neutral stats; normalize never touches them.
    mean = torch.where(band_valid, mean, torch.zeros_like(mean))
    std = torch.where(band_valid, std, torch.ones_like(std))
    return NormalizationStats(
        mean=tuple(float(m) for m in mean),
        std=tuple(float(s) for s in std),
        band_valid=tuple(bool(b) for b in band_valid),
    )


def normalize(sample: SceneSample, stats: NormalizationStats) -> SceneSample:
    """Standardize valid channels to train-split mean 0 / std 1."""
    c = sample.channels
    if len(stats.mean) != c:
        raise ValueError(f"stats cover {len(stats.mean)} channels, sample has {c}")
    mean = torch.tensor(stats.mean, dtype=sample.values.dtype).view(1, c, 1, 1)
    std = torch.tensor(stats.std, dtype=sample.values.dtype).view(1, c, 1, 1)
    valid = sample.band_valid.view(1, c, 1, 1)
    values = torch.where(valid, (sample.values - mean) / std, sample.values)
    return replace(sample, values=values)


def denormalize(sample: SceneSample, stats: NormalizationStats) -> SceneSample:
    c = sample.channels
    mean = torch.tensor(stats.mean, dtype=sample.values.dtype).view(1, c, 1, 1)
    std = torch.tensor(stats.std, dtype=sample.values.dtype).view(1, c, 1, 1)
    valid = sample.band_valid.view(1, c, 1, 1)
    values = torch.where(valid, sample.values * std + mean, sample.values)
    return replace(sample, values=values)
