"""Lightweight reconstruction decoder.

One linear head maps each stage-4 token to the pixel block it covers:
stage 4 sits three merges below the patch grid, so a token spans 8x8
patches = (8p)^2 pixels of its spectral group per frame. Blocks flatten in
the same (band-within-group, row, column) order as patchify, making the
decode an exact layout inverse.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from stmae.masking import PatchGrid, unpatchify
from stmae.model.config import ModelConfig
from stmae.model.encoder import TokenMap


class ReconstructionDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.block_pixels = 8 * cfg.patch_size
        out_dim = self.block_pixels * self.block_pixels * cfg.group_size
        self.norm = nn.LayerNorm(cfg.stage_dim(3))
        self.head = nn.Linear(cfg.stage_dim(3), out_dim)

    def forward(self, stage4: TokenMap, grid: PatchGrid) -> torch.Tensor:
        """Stage-4 tokens [B, T, G, h4, w4, D4] -> pixels [B, T, C, H, W]."""
        if stage4.stage != 4:
            raise ValueError(f"decoder consumes stage 4 features, got stage {stage4.stage}")
        x = stage4.tensor
        b, t, g, h4, w4, _ = x.shape
        if (
            t != grid.frames
            or g != grid.groups
            or h4 * self.block_pixels != grid.height
            or w4 * self.block_pixels != grid.width
        ):
            raise ValueError(
                f"stage-4 grid ({t}, {g}, {h4}, {w4}) does not match pixel grid "
                f"[{grid.frames}, {grid.channels}, {grid.height}, {grid.width}]"
            )
        blocks = self.head(self.norm(x))
        block_grid = PatchGrid(
            frames=grid.frames,
            channels=grid.channels,
            height=grid.height,
            width=grid.width,
            patch_size=self.block_pixels,
            group_size=grid.group_size,
            window=(grid.frames, 1, 1),
        )
        return unpatchify(blocks, block_grid)
