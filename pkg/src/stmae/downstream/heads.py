"""Lightweight task heads over frozen or fine-tuned encoder features.

All heads consume the four stage outputs reduced over time (mean or last
frame) and spectral groups (mean), keeping the heads deliberately small so
evaluation reflects the encoder representation:

- segmentation: per-stage pointwise projection, bilinear upsampling of all
  stages to the stage-1 grid, concatenation, pointwise fusion, pointwise
  classification, upsample to pixels. Every token passes through exactly
  three learned linear layers.
- classification: global average pool of stage-4 tokens, one linear layer.
- change detection: per-stage |f_a - f_b| and f_a * f_b aggregates from two
  shared-weight encoder passes, then the same project/fuse/classify ladder
  as segmentation with a zero-initialized final layer, making the
  prediction exactly symmetric in (a, b).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from stmae.model.encoder import TokenMap


@dataclass(frozen=True)
class HeadConfig:
    task: str                      # segmentation | classification | change
    num_classes: int
    hidden: int = 256
    encoder_frozen: bool = True
    temporal_reduce: str = "mean"  # mean | last

    def validate(self) -> None:
        if self.task not in ("segmentation", "classification", "change"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.hidden <= 0:
            raise ValueError("hidden width must be positive")
        if self.temporal_reduce not in ("mean", "last"):
            raise ValueError(f"unknown temporal_reduce {self.temporal_reduce!r}")


def reduce_stage_features(features: list[TokenMap], temporal_reduce: str = "mean") -> list[torch.Tensor]:
    """[B, T, G, h, w, D] per stage -> [B, h, w, D] via time and group reduction."""
    out = []
    for fmap in features:
        x = fmap.tensor
        x = x[:, -1] if temporal_reduce == "last" else x.mean(dim=1)
        out.append(x.mean(dim=1))
    return out


def _upsample_tokens(x: torch.Tensor, hw: tuple[int, int]) -> torch.Tensor:
    """[B, h, w, C] -> bilinear [B, H, W, C]."""
    if x.shape[1:3] == hw:
        return x
    y = x.permute(0, 3, 1, 2)
    y = F.interpolate(y, size=hw, mode="bilinear", align_corners=False)
    return y.permute(0, 2, 3, 1)


class _MultiScaleFuseHead(nn.Module):
    """Shared ladder: project stages, upsample, concat, fuse, classify."""

    def __init__(self, stage_in_dims: list[int], hidden: int, num_classes: int):
        super().__init__()
        self.project = nn.ModuleList(nn.Linear(d, hidden) for d in stage_in_dims)
        self.fuse = nn.Linear(len(stage_in_dims) * hidden, hidden)
        self.classify = nn.Linear(hidden, num_classes)

    linear_layer_depth = 3  # project -> fuse -> classify

    def forward(self, stage_inputs: list[torch.Tensor], out_hw: tuple[int, int]) -> torch.Tensor:
        base_hw = stage_inputs[0].shape[1:3]
        projected = [
            _upsample_tokens(proj(x), base_hw) for proj, x in zip(self.project, stage_inputs)
        ]
        fused = F.gelu(self.fuse(torch.cat(projected, dim=-1)))
        logits = self.classify(fused)
        logits = logits.permute(0, 3, 1, 2)
        if logits.shape[-2:] != out_hw:
            logits = F.interpolate(logits, size=out_hw, mode="bilinear", align_corners=False)
        return logits


class SegmentationHead(nn.Module):
    """Multi-scale pointwise decoder; logits [B, num_classes, H, W]."""

    def __init__(self, stage_dims: list[int], num_classes: int, hidden: int = 256,
                 temporal_reduce: str = "mean"):
        super().__init__()
        self.temporal_reduce = temporal_reduce
        self.ladder = _MultiScaleFuseHead(stage_dims, hidden, num_classes)

    linear_layer_depth = _MultiScaleFuseHead.linear_layer_depth

    def forward(self, features: list[TokenMap], out_hw: tuple[int, int]) -> torch.Tensor:
        if len(features) != len(self.ladder.project):
            raise ValueError(f"expected {len(self.ladder.project)} stages, got {len(features)}")
        reduced = reduce_stage_features(features, self.temporal_reduce)
        return self.ladder(reduced, out_hw)


class ClassificationHead(nn.Module):
    """Global average pool of stage-4 tokens, then one linear layer."""

    linear_layer_depth = 1

    def __init__(self, stage4_dim: int, num_classes: int, temporal_reduce: str = "mean"):
        super().__init__()
        self.temporal_reduce = temporal_reduce
        self.classify = nn.Linear(stage4_dim, num_classes)

    def forward(self, features: list[TokenMap]) -> torch.Tensor:
        reduced = reduce_stage_features(features[-1:], self.temporal_reduce)[0]
        pooled = reduced.mean(dim=(1, 2))
        return self.classify(pooled)


class ChangeHead(nn.Module):
    """Binary change logits [B, 2, H, W] from before/after stage features."""

    linear_layer_depth = _MultiScaleFuseHead.linear_layer_depth

    def __init__(self, stage_dims: list[int], hidden: int = 256, temporal_reduce: str = "mean"):
        super().__init__()
        self.temporal_reduce = temporal_reduce
        self.ladder = _MultiScaleFuseHead([2 * d for d in stage_dims], hidden, num_classes=2)
        # Symmetric start: identical inputs must not prefer "change".
        nn.init.zeros_(self.ladder.classify.weight)
        nn.init.zeros_(self.ladder.classify.bias)

    def forward(
        self,
        features_a: list[TokenMap],
        features_b: list[TokenMap],
        out_hw: tuple[int, int],
    ) -> torch.Tensor:
        if len(features_a) != len(features_b):
            raise ValueError("before/after stage counts differ")
        aggregates = []
        for fa, fb in zip(
            reduce_stage_features(features_a, self.temporal_reduce),
            reduce_stage_features(features_b, self.temporal_reduce),
        ):
            if fa.shape != fb.shape:
                raise ValueError(f"stage shapes differ: {tuple(fa.shape)} vs {tuple(fb.shape)}")
            aggregates.append(torch.cat([(fa - fb).abs(), fa * fb], dim=-1))
        return self.ladder(aggregates, out_hw)
