"""The two parallel per-block branches.

The high-frequency branch is a lightweight bottlenecked CNN applied to each
(frame, group) token grid separately with shared weights: it sees local
texture but never mixes time or spectral groups. The low-frequency branch
is the factorized attention stack: windowed spatial self-attention followed
by temporal attention, each as a pre-norm residual sub-block with its own
feed-forward.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from stmae.model.attention import FeedForward, TemporalAttention, WindowAttention, effective_window


class HighFreqBranch(nn.Module):
    """1x1 reduce -> kxk conv -> GELU -> 1x1 expand, per (frame, group) slice.

    Shape-preserving and purely pre-residual: with all-zero parameters the
    output is exactly zero.
    """

    def __init__(self, dim: int, bottleneck_ratio: float = 0.25, kernel: int = 3):
        super().__init__()
        hidden = max(1, int(round(dim * bottleneck_ratio)))
        self.norm = nn.LayerNorm(dim)
        self.reduce = nn.Conv2d(dim, hidden, kernel_size=1)
        self.conv = nn.Conv2d(hidden, hidden, kernel_size=kernel, padding=kernel // 2)
        self.expand = nn.Conv2d(hidden, dim, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: [B, T, G, h, w, D] -> same shape."""
        b, t, g, h, w, d = x.shape
        y = self.norm(x)
        y = y.reshape(b * t * g, h, w, d).permute(0, 3, 1, 2)
        y = self.reduce(y)
        y = F.gelu(self.conv(y))
        y = self.expand(y)
        y = y.permute(0, 2, 3, 1).reshape(b, t, g, h, w, d)
        return y


class LowFreqBlock(nn.Module):
    """Factorized spatial-window + temporal attention with per-step FFNs."""

    def __init__(
        self,
        dim: int,
        num_heads: int,
        max_window: int,
        shift: int,
        max_frames: int,
        shifted: bool,
        ffn_ratio: int = 4,
    ):
        super().__init__()
        self.cfg_window = max_window
        self.cfg_shift = shift
        self.shifted = shifted
        self.norm1 = nn.LayerNorm(dim)
        self.spatial_attn = WindowAttention(dim, num_heads, max_window)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn1 = FeedForward(dim, ffn_ratio)
        self.norm3 = nn.LayerNorm(dim)
        self.temporal_attn = TemporalAttention(dim, num_heads, max_frames)
        self.norm4 = nn.LayerNorm(dim)
        self.ffn2 = FeedForward(dim, ffn_ratio)

    def _spatial(self, x: torch.Tensor) -> torch.Tensor:
        b, t, g, h, w, d = x.shape
        window, shift = effective_window(self.cfg_window, self.cfg_shift, h, w)
        if not self.shifted:
            shift = 0
        y = x.reshape(b * t * g, h, w, d)
        y = self.spatial_attn(y, window, shift)
        return y.reshape(b, t, g, h, w, d)

    def _temporal(self, x: torch.Tensor) -> torch.Tensor:
        b, t, g, h, w, d = x.shape
        y = x.permute(0, 2, 3, 4, 1, 5).reshape(b * g * h * w, t, d)
        y = self.temporal_attn(y)
        return y.reshape(b, g, h, w, t, d).permute(0, 4, 1, 2, 3, 5)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: [B, T, G, h, w, D] -> same shape."""
        x = x + self._spatial(self.norm1(x))
        x = x + self.ffn1(self.norm2(x))
        x = x + self._temporal(self.norm3(x))
        x = x + self.ffn2(self.norm4(x))
        return x
