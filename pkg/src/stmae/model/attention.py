"""Window and temporal self-attention primitives.

Spatial attention runs inside non-overlapping windows of the patch grid
(cyclically shifted on alternate blocks so information crosses window
borders), with a learned relative-position bias instead of absolute
positional embeddings. Temporal attention attends over the frames sharing
one (group, spatial) position with a learned per-offset bias. When a stage
grid is smaller than the configured window, the window clamps to the grid
and shifting is disabled.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

# Active attention FLOP meter; see profiling.measure_attention_flops.
_FLOP_METER = None


def window_partition(x: torch.Tensor, window: int) -> torch.Tensor:
    """[B, H, W, D] -> [B * nWindows, window*window, D]."""
    b, h, w, d = x.shape
    x = x.view(b, h // window, window, w // window, window, d)
    x = x.permute(0, 1, 3, 2, 4, 5).contiguous()
    return x.view(-1, window * window, d)


def window_reverse(windows: torch.Tensor, window: int, h: int, w: int) -> torch.Tensor:
    """Inverse of :func:`window_partition`."""
    b = windows.shape[0] // ((h // window) * (w // window))
    x = windows.view(b, h // window, w // window, window, window, -1)
    x = x.permute(0, 1, 3, 2, 4, 5).contiguous()
    return x.view(b, h, w, -1)


def _relative_position_index(window: int, max_window: int) -> torch.Tensor:
    """Pairwise offset indices into a (2*max_window-1)^2 bias table.

    Windows smaller than max_window use the central block of the table, so
    one parameter table serves every runtime grid.
    """
    coords = torch.stack(
        torch.meshgrid(torch.arange(window), torch.arange(window), indexing="ij")
    ).flatten(1)
    rel = coords[:, :, None] - coords[:, None, :]            # [2, n, n]
    rel = rel.permute(1, 2, 0)                               # [n, n, 2]
    rel = rel + (max_window - 1)
    return rel[..., 0] * (2 * max_window - 1) + rel[..., 1]


def _shift_attn_mask(h: int, w: int, window: int, shift: int) -> torch.Tensor:
    """[nWindows, n, n] additive mask (-inf style) for shifted windows."""
    img = torch.zeros(1, h, w, 1)
    slices = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    cnt = 0
    for hs in slices:
        for ws in slices:
            img[:, hs, ws, :] = cnt
            cnt += 1
    regions = window_partition(img, window).squeeze(-1)      # [nW, n]
    mask = regions.unsqueeze(1) - regions.unsqueeze(2)
    return mask.masked_fill(mask != 0, -100.0).masked_fill(mask == 0, 0.0)


class WindowAttention(nn.Module):
    """Multi-head self-attention within (optionally shifted) spatial windows."""

    def __init__(self, dim: int, num_heads: int, max_window: int):
        super().__init__()
        if dim % num_heads != 0:
            raise ValueError(f"dim {dim} not divisible by {num_heads} heads")
        self.dim = dim
        self.num_heads = num_heads
        self.max_window = max_window
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        self.relative_position_bias_table = nn.Parameter(
            torch.zeros((2 * max_window - 1) ** 2, num_heads)
        )
        nn.init.trunc_normal_(self.relative_position_bias_table, std=0.02)
        self._index_cache: dict[int, torch.Tensor] = {}
        self._mask_cache: dict[tuple, torch.Tensor] = {}

    def _bias(self, window: int) -> torch.Tensor:
        if window not in self._index_cache:
            self._index_cache[window] = _relative_position_index(window, self.max_window)
        idx = self._index_cache[window]
        n = window * window
        bias = self.relative_position_bias_table[idx.view(-1)].view(n, n, -1)
        return bias.permute(2, 0, 1).contiguous()

    def forward(self, x: torch.Tensor, window: int, shift: int) -> torch.Tensor:
        """x: [B, H, W, D] with window dividing H and W; returns same shape."""
        b, h, w, d = x.shape
        if h % window or w % window:
            raise ValueError(f"window {window} does not divide grid ({h}, {w})")
        if shift:
            x = torch.roll(x, shifts=(-shift, -shift), dims=(1, 2))
        tokens = window_partition(x, window)                 # [B*nW, n, D]
        bn, n, _ = tokens.shape
        qkv = self.qkv(tokens).reshape(bn, n, 3, self.num_heads, d // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4).unbind(0)       # [B*nW, heads, n, dh]
        attn = (q * self.scale) @ k.transpose(-2, -1)
        attn = attn + self._bias(window).to(attn.dtype).unsqueeze(0)
        if shift:
            key = (h, w, window, shift)
            if key not in self._mask_cache:
                self._mask_cache[key] = _shift_attn_mask(h, w, window, shift)
            mask = self._mask_cache[key].to(attn.dtype)
            nw = mask.shape[0]
            attn = attn.view(bn // nw, nw, self.num_heads, n, n) + mask.unsqueeze(0).unsqueeze(2)
            attn = attn.view(bn, self.num_heads, n, n)
        attn = attn.softmax(dim=-1)
        if _FLOP_METER is not None:
            # QK^T and attn@V matmuls: the O(N * M^2) part of the block.
            _FLOP_METER.add(4 * bn * n * n * d)
        out = (attn @ v).transpose(1, 2).reshape(bn, n, d)
        out = self.proj(out)
        out = window_reverse(out, window, h, w)
        if shift:
            out = torch.roll(out, shifts=(shift, shift), dims=(1, 2))
        return out


class TemporalAttention(nn.Module):
    """Self-attention over frames sharing one (group, spatial) position."""

    def __init__(self, dim: int, num_heads: int, max_frames: int):
        super().__init__()
        if dim % num_heads != 0:
            raise ValueError(f"dim {dim} not divisible by {num_heads} heads")
        self.dim = dim
        self.num_heads = num_heads
        self.max_frames = max_frames
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        self.relative_offset_bias = nn.Parameter(torch.zeros(2 * max_frames - 1, num_heads))
        nn.init.trunc_normal_(self.relative_offset_bias, std=0.02)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: [N, T, D] sequences along time; returns same shape."""
        n, t, d = x.shape
        if t > self.max_frames:
            raise ValueError(f"{t} frames exceed the configured maximum {self.max_frames}")
        qkv = self.qkv(x).reshape(n, t, 3, self.num_heads, d // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4).unbind(0)       # [N, heads, T, dh]
        attn = (q * self.scale) @ k.transpose(-2, -1)
        offsets = torch.arange(t).view(-1, 1) - torch.arange(t).view(1, -1)
        bias = self.relative_offset_bias[offsets + self.max_frames - 1]   # [T, T, heads]
        attn = attn + bias.permute(2, 0, 1).to(attn.dtype).unsqueeze(0)
        attn = attn.softmax(dim=-1)
        if _FLOP_METER is not None:
            _FLOP_METER.add(4 * n * t * t * d)
        out = (attn @ v).transpose(1, 2).reshape(n, t, d)
        return self.proj(out)


class FeedForward(nn.Module):
    """Two-layer expansion MLP."""

    def __init__(self, dim: int, ratio: int = 4):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim * ratio)
        self.fc2 = nn.Linear(dim * ratio, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


def effective_window(cfg_window: int, cfg_shift: int, h: int, w: int) -> tuple[int, int]:
    """Clamp the window to the grid; disable shifting when nothing to shift.

    Mirrors the standard rule: if the grid is no larger than the window,
    attention is dense over the grid and cyclic shifting is pointless.
    """
    window = min(cfg_window, h, w)
    if h % window or w % window:
        raise ValueError(f"attention window {window} does not divide grid ({h}, {w})")
    if window >= min(h, w):
        return window, 0
    shift = min(cfg_shift, window // 2)
    return window, shift
