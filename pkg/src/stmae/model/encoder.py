"""Hybrid encoder: fused conv/attention blocks across four merging stages.

Each block runs the high-frequency CNN branch and the low-frequency
attention branch on the same input and fuses them by elementwise
multiplication inside a residual: out = hf(x) * lf(x) + x. Between stages,
patch merging concatenates 2x2 spatial neighbours and projects 4D -> 2D,
halving the grid and doubling the width, so stage s has grid n/2^(s-1) at
width embed_dim * 2^(s-1).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from stmae.masking import PatchGrid
from stmae.model.branches import HighFreqBranch, LowFreqBlock
from stmae.model.config import ModelConfig
from stmae.model.embed import PatchEmbed4D


@dataclass
class TokenMap:
    """Stage-indexed token tensor [B, T, G, h, w, D]."""

    tensor: torch.Tensor
    stage: int  # 1-based


def fuse(hf_out: torch.Tensor, lf_out: torch.Tensor, residual: torch.Tensor) -> torch.Tensor:
    """Elementwise product of the branches plus the block input."""
    if hf_out.shape != lf_out.shape or hf_out.shape != residual.shape:
        raise ValueError(
            f"branch shapes differ: {tuple(hf_out.shape)} vs {tuple(lf_out.shape)} "
            f"vs residual {tuple(residual.shape)}"
        )
    return hf_out * lf_out + residual


class HybridBlock(nn.Module):
    def __init__(self, dim: int, num_heads: int, cfg: ModelConfig, shifted: bool):
        super().__init__()
        self.hf = HighFreqBranch(dim, cfg.hf_bottleneck_ratio, cfg.hf_kernel)
        self.lf = LowFreqBlock(
            dim,
            num_heads,
            max_window=cfg.attention_window,
            shift=cfg.shift,
            max_frames=cfg.frames,
            shifted=shifted,
            ffn_ratio=cfg.ffn_ratio,
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return fuse(self.hf(x), self.lf(x), x)


class PatchMerging(nn.Module):
    """Concatenate 2x2 spatial neighbours, then project 4D -> 2D.

    Concatenation order (even/even, odd/even, even/odd, odd/odd) is part of
    the checkpoint compatibility contract. Frames and groups pass through.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim)
        self.reduction = nn.Linear(4 * dim, 2 * dim, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, g, h, w, d = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"patch merging needs even spatial dims, got ({h}, {w})")
        x00 = x[:, :, :, 0::2, 0::2, :]
        x10 = x[:, :, :, 1::2, 0::2, :]
        x01 = x[:, :, :, 0::2, 1::2, :]
        x11 = x[:, :, :, 1::2, 1::2, :]
        merged = torch.cat([x00, x10, x01, x11], dim=-1)
        return self.reduction(self.norm(merged))


class HybridEncoder(nn.Module):
    """Patch embedding plus four stages of fused blocks with merges between."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = PatchEmbed4D(cfg.patch_dim, cfg.embed_dim)
        self.stages = nn.ModuleList()
        self.merges = nn.ModuleList()
        for s in range(4):
            dim = cfg.stage_dim(s)
            blocks = nn.ModuleList(
                HybridBlock(dim, cfg.num_heads[s], cfg, shifted=(i % 2 == 1))
                for i in range(cfg.depths[s])
            )
            self.stages.append(blocks)
            if s < 3:
                self.merges.append(PatchMerging(dim))

    def forward(self, patches: torch.Tensor, patch_mask: torch.Tensor, grid: PatchGrid) -> list[TokenMap]:
        """Run all four stages; returns each stage's (pre-merge) output.

        patches: [B, T, G, n_h, n_w, patch_dim] already mask-zeroed;
        patch_mask: bool [B, T, G, n_h, n_w]. The stage-1 grid must be
        divisible by 8 so three merges stay even.
        """
        if grid.patches_h % 8 or grid.patches_w % 8:
            raise ValueError(
                f"stage-1 grid ({grid.patches_h}, {grid.patches_w}) must be divisible by 8"
            )
        if patches.shape[-1] != self.cfg.patch_dim:
            raise ValueError(f"patch dim {patches.shape[-1]} != configured {self.cfg.patch_dim}")
        x = self.patch_embed(patches, patch_mask)
        features: list[TokenMap] = []
        for s in range(4):
            for block in self.stages[s]:
                x = block(x)
            features.append(TokenMap(tensor=x, stage=s + 1))
            if s < 3:
                x = self.merges[s](x)
        return features


def param_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
