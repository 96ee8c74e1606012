"""Encoder-decoder composition for masked reconstruction pretraining."""

from __future__ import annotations

import torch
import torch.nn as nn

from stmae.masking import MaskPlan, PatchGrid, apply_mask, batch_patch_mask, patchify
from stmae.model.config import ModelConfig
from stmae.model.decoder import ReconstructionDecoder
from stmae.model.encoder import HybridEncoder, TokenMap


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, (nn.Linear, nn.Conv2d)):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


class MaskedAutoencoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = HybridEncoder(cfg)
        self.decoder = ReconstructionDecoder(cfg)
        self.apply(_init_weights)

    def forward(
        self, patches: torch.Tensor, patch_mask: torch.Tensor, grid: PatchGrid
    ) -> tuple[torch.Tensor, list[TokenMap]]:
        """Masked patches + mask -> (reconstruction [B, T, C, H, W], stage features)."""
        features = self.encoder(patches, patch_mask, grid)
        recon = self.decoder(features[3], grid)
        return recon, features

    def forward_pixels(
        self, values: torch.Tensor, plans: "MaskPlan | list[MaskPlan]", grid: PatchGrid
    ) -> tuple[torch.Tensor, list[TokenMap]]:
        """Convenience: [B, T, C, H, W] pixels -> masked forward pass."""
        if values.ndim == 4:
            values = values.unsqueeze(0)
        if isinstance(plans, MaskPlan):
            plans = [plans] * values.shape[0]
        patches = patchify(values, grid)
        visible = apply_mask(patches, plans)
        mask = batch_patch_mask(plans).to(values.device)
        return self.forward(visible, mask, grid)


def build_autoencoder(cfg: ModelConfig, seed: int) -> MaskedAutoencoder:
    """Deterministically initialized model; leaves global RNG state untouched."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = MaskedAutoencoder(cfg)
    return model
