"""Dual reconstruction objective: per-channel plus channel-summed masked MSE.

For a 5D batch (B, T, C, H, W) with loss-inclusion mask L (True exactly at
pixels of masked, non-exception patches on valid channels):

    spectral = (1/m) * sum L * (x - xhat)^2                  m = sum(L)
    spatial  = (c/m) * sum_{b,t,h,w} (sum_c x*L - sum_c xhat*L)^2
    total    = spectral + spatial

where c counts valid channels. The mask is the loss-inclusion indicator
(True = masked and reconstructed): training on visible pixels would defeat
the objective, and partially-unmasked patches are encoder-visible so they
are excluded by default (include_pimask_targets flips that for ablations).
m counts loss-contributing per-channel elements and is shared between both
terms; when nothing is masked both terms are defined to be zero.

Naming note: the channel-summed term is called "spatial" and the per-channel
term "spectral" here, keyed to the formula structure (the per-channel term
compares bands one-to-one; the summed term compares total per-pixel
intensity).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from stmae.masking import MaskPlan


@dataclass
class LossReport:
    total: torch.Tensor
    spectral_term: torch.Tensor
    spatial_term: torch.Tensor
    m: int                  # loss-contributing per-channel elements
    c: int                  # valid channels

    def item(self) -> dict:
        return {
            "total": float(self.total.detach()),
            "spectral": float(self.spectral_term.detach()),
            "spatial": float(self.spatial_term.detach()),
            "m": self.m,
            "c": self.c,
        }


def loss_mask(
    plan: MaskPlan,
    band_valid: torch.Tensor,
    include_pimask_targets: bool = False,
) -> torch.Tensor:
    """Bool [T, C, H, W]: pixels whose reconstruction contributes to the loss.

    True exactly inside masked patches that are not partial-unmasking
    exceptions (unless include_pimask_targets) and whose channel is valid.
    """
    g = plan.grid
    if band_valid.shape != (g.channels,):
        raise ValueError(f"band_valid must have shape [{g.channels}], got {tuple(band_valid.shape)}")
    spatial = plan.masked_window_patches()
    if not include_pimask_targets:
        spatial = spatial & ~plan.pimask_keep
    pixels = spatial.repeat_interleave(g.patch_size, dim=0).repeat_interleave(g.patch_size, dim=1)
    mask = pixels.expand(g.frames, g.channels, g.height, g.width)
    return mask & band_valid.view(1, g.channels, 1, 1)


def spectral_loss(x: torch.Tensor, xhat: torch.Tensor, lmask: torch.Tensor) -> tuple[torch.Tensor, int]:
    """Per-channel masked squared error, averaged over contributing elements."""
    if x.shape != xhat.shape or x.shape != lmask.shape:
        raise ValueError(
            f"shape mismatch: x {tuple(x.shape)}, xhat {tuple(xhat.shape)}, mask {tuple(lmask.shape)}"
        )
    m = int(lmask.sum())
    if m == 0:
        return xhat.new_zeros(()), 0
    diff = (x - xhat) ** 2
    return (diff * lmask).sum() / m, m


def spatial_loss(x: torch.Tensor, xhat: torch.Tensor, lmask: torch.Tensor, c: int) -> torch.Tensor:
    """Channel-summed masked squared error with the c/m prefactor.

    Shares m with the per-channel term.
    """
    if x.shape != xhat.shape or x.shape != lmask.shape:
        raise ValueError(
            f"shape mismatch: x {tuple(x.shape)}, xhat {tuple(xhat.shape)}, mask {tuple(lmask.shape)}"
        )
    m = int(lmask.sum())
    if m == 0:
        return xhat.new_zeros(())
    channel_axis = x.ndim - 3
    masked_x = (x * lmask).sum(dim=channel_axis)
    masked_xhat = (xhat * lmask).sum(dim=channel_axis)
    return (c / m) * ((masked_x - masked_xhat) ** 2).sum()


def total_loss(
    x: torch.Tensor,
    xhat: torch.Tensor,
    plans: "MaskPlan | list[MaskPlan]",
    band_valid: torch.Tensor,
    include_pimask_targets: bool = False,
) -> LossReport:
    """Compose both terms on a shared mask; gradients flow only through xhat.

    x and xhat are [T, C, H, W] with one plan, or [B, T, C, H, W] with one
    plan per batch element (every sample must share band_valid, since the
    valid-channel count c enters the spatial prefactor once).
    """
    if isinstance(plans, MaskPlan):
        plans = [plans]
    x = x.detach()
    if x.ndim == 4:
        if len(plans) != 1:
            raise ValueError("unbatched tensors need exactly one plan")
        lmask = loss_mask(plans[0], band_valid, include_pimask_targets)
    elif x.ndim == 5:
        if len(plans) != x.shape[0]:
            raise ValueError(f"{x.shape[0]} samples but {len(plans)} plans")
        lmask = torch.stack(
            [loss_mask(p, band_valid, include_pimask_targets) for p in plans], dim=0
        )
    else:
        raise ValueError(f"expected 4D or 5D tensors, got {x.ndim}D")
    c = int(band_valid.sum())
    spec, m = spectral_loss(x, xhat, lmask)
    spat = spatial_loss(x, xhat, lmask, c)
    return LossReport(total=spec + spat, spectral_term=spec, spatial_term=spat, m=m, c=c)
