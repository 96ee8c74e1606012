"""4D patch embedding with learned mask-token substitution."""

from __future__ import annotations

import torch
import torch.nn as nn


class PatchEmbed4D(nn.Module):
    """Linear projection of flattened patches; masked positions get mask_token.

    The encoder parses every patch position (masked ones as the learned
    token), so the token grid stays dense and patch embedding is exactly
    invertible in layout. No absolute positional embedding is added;
    position enters through relative attention biases only. Substitution
    happens by overwrite, so the output at masked positions is independent
    of whatever content the input carried there.
    """

    def __init__(self, patch_dim: int, embed_dim: int):
        super().__init__()
        self.proj = nn.Linear(patch_dim, embed_dim)
        self.mask_token = nn.Parameter(torch.zeros(embed_dim))
        nn.init.trunc_normal_(self.mask_token, std=0.02)

    def forward(self, patches: torch.Tensor, patch_mask: torch.Tensor) -> torch.Tensor:
        """patches: [B, T, G, n_h, n_w, patch_dim]; patch_mask: bool, same grid."""
        if patches.shape[:-1] != patch_mask.shape:
            raise ValueError(
                f"patch grid {tuple(patches.shape[:-1])} does not match mask {tuple(patch_mask.shape)}"
            )
        tokens = self.proj(patches)
        token = self.mask_token.to(tokens.dtype)
        return torch.where(patch_mask.unsqueeze(-1), token, tokens)
