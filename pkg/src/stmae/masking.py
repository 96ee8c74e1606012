"""4D patch grid, window masking with partial unmasking, and patchify.

Patches are p x p pixels by c_p bands by one frame; windows group patches
into (w_t, w_h, w_w) spatiotemporal blocks that are masked or kept as a
unit. The sampled mask lives on the spatial window grid and is broadcast
across all frames and spectral groups, so no information leaks between
timestamps or bands of the same location. Partial unmasking flips a fixed
fraction of patch positions inside each masked window back to visible.

Convention: patch_mask True means masked (content replaced before the
encoder). At the data interface, visible content is selected by elementwise
multiplication with the complement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class PatchGrid:
    """Geometry linking pixel space to patch / window / group index space."""

    frames: int            # T
    channels: int          # C
    height: int            # H, pixels
    width: int             # W, pixels
    patch_size: int        # p, pixels per patch side
    group_size: int        # c_p, bands per spectral group
    window: tuple[int, int, int]  # (w_t, w_h, w_w) in (frames, patches, patches)

    @property
    def groups(self) -> int:
        return self.channels // self.group_size

    @property
    def patches_h(self) -> int:
        return self.height // self.patch_size

    @property
    def patches_w(self) -> int:
        return self.width // self.patch_size

    @property
    def windows_h(self) -> int:
        return self.patches_h // self.window[1]

    @property
    def windows_w(self) -> int:
        return self.patches_w // self.window[2]

    @property
    def num_windows(self) -> int:
        return self.windows_h * self.windows_w

    @property
    def total_patches(self) -> int:
        return self.patches_h * self.patches_w * self.groups * self.frames

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.group_size


def build_patch_grid(
    dims: tuple[int, int, int, int],
    patch_size: int,
    group_size: int,
    window: tuple[int, int, int] = (6, 8, 8),
) -> PatchGrid:
    """Validate divisibility and return the grid as a pure value.

    dims is (T, C, H, W). Every violated divisibility names its axis.
    """
    t, c, h, w = dims
    if patch_size <= 0 or group_size <= 0:
        raise ValueError("patch_size and group_size must be positive")
    if h % patch_size != 0:
        raise ValueError(f"height {h} not divisible by patch size {patch_size}")
    if w % patch_size != 0:
        raise ValueError(f"width {w} not divisible by patch size {patch_size}")
    if c % group_size != 0:
        raise ValueError(f"channels {c} not divisible by spectral group size {group_size}")
    w_t, w_h, w_w = window
    if w_t != t:
        raise ValueError(f"window frames {w_t} must equal sample frames {t}")
    n_h, n_w = h // patch_size, w // patch_size
    if n_h % w_h != 0:
        raise ValueError(f"patch rows {n_h} not divisible by window height {w_h}")
    if n_w % w_w != 0:
        raise ValueError(f"patch cols {n_w} not divisible by window width {w_w}")
    return PatchGrid(
        frames=t,
        channels=c,
        height=h,
        width=w,
        patch_size=patch_size,
        group_size=group_size,
        window=(w_t, w_h, w_w),
    )


@dataclass(frozen=True)
class MaskPlan:
    """A sampled window mask plus partial-unmasking exceptions.

    window_mask: bool [windows_h, windows_w], True = masked window.
    pimask_keep: bool [patches_h, patches_w], True = patch position inside a
                 masked window that stays visible; the same spatial pattern
                 applies to every frame and spectral group.
    """

    grid: PatchGrid
    window_mask: torch.Tensor
    pimask_keep: torch.Tensor
    mask_ratio: float
    seed: int
    pimask_fraction: float = 0.0
    pimask_seed: int | None = None

    def __post_init__(self):
        g = self.grid
        if tuple(self.window_mask.shape) != (g.windows_h, g.windows_w):
            raise ValueError(
                f"window_mask shape {tuple(self.window_mask.shape)} != "
                f"({g.windows_h}, {g.windows_w})"
            )
        if tuple(self.pimask_keep.shape) != (g.patches_h, g.patches_w):
            raise ValueError(
                f"pimask_keep shape {tuple(self.pimask_keep.shape)} != "
                f"({g.patches_h}, {g.patches_w})"
            )

    def masked_window_patches(self) -> torch.Tensor:
        """Bool [patches_h, patches_w]: patch positions inside masked windows."""
        g = self.grid
        return self.window_mask.repeat_interleave(g.window[1], dim=0).repeat_interleave(
            g.window[2], dim=1
        )

    def patch_mask(self) -> torch.Tensor:
        """Bool [T, groups, patches_h, patches_w], True = masked patch.

        Constant along the frame and group axes by construction.
        """
        g = self.grid
        spatial = self.masked_window_patches() & ~self.pimask_keep
        return spatial.expand(g.frames, g.groups, g.patches_h, g.patches_w).clone()

    def to_manifest(self) -> dict:
        return {
            "seed": self.seed,
            "mask_ratio": self.mask_ratio,
            "pimask_fraction": self.pimask_fraction,
            "pimask_seed": self.pimask_seed,
            "window": list(self.grid.window),
        }


def sample_window_mask(grid: PatchGrid, mask_ratio: float, seed: int) -> MaskPlan:
    """Mask exactly floor(mask_ratio * num_windows) spatial windows.

    Windows are chosen uniformly without replacement; the draw is a pure
    function of (grid, mask_ratio, seed). No partial unmasking yet.
    """
    if not 0.0 < mask_ratio < 1.0:
        raise ValueError(f"mask_ratio must be in (0, 1), got {mask_ratio}")
    n = grid.num_windows
    k = int(np.floor(mask_ratio * n))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(n, size=k, replace=False)
    window_mask = torch.zeros(grid.windows_h, grid.windows_w, dtype=torch.bool)
    window_mask.view(-1)[torch.from_numpy(np.sort(chosen))] = True
    return MaskPlan(
        grid=grid,
        window_mask=window_mask,
        pimask_keep=torch.zeros(grid.patches_h, grid.patches_w, dtype=torch.bool),
        mask_ratio=mask_ratio,
        seed=seed,
    )


def apply_pimask(plan: MaskPlan, keep_fraction: float = 0.25, seed: int = 0) -> MaskPlan:
    """Flip floor(keep_fraction * w_h * w_w) positions per masked window to visible.

    Positions are sampled independently per window (in row-major window
    order from one seeded stream); the selected spatial pattern is shared
    across all frames and spectral groups, so no temporal or spectral
    information leaks through the exceptions.
    """
    if not 0.0 <= keep_fraction < 1.0:
        raise ValueError(f"keep_fraction must be in [0, 1), got {keep_fraction}")
    if plan.pimask_keep.any() or plan.pimask_fraction != 0.0:
        raise ValueError("plan already carries partial-unmasking exceptions")
    if keep_fraction == 0.0:
        return plan
    g = plan.grid
    _, w_h, w_w = g.window
    keep_n = int(np.floor(keep_fraction * w_h * w_w))
    keep = torch.zeros(g.patches_h, g.patches_w, dtype=torch.bool)
    rng = np.random.default_rng(seed)
    for wi in range(g.windows_h):
        for wj in range(g.windows_w):
            if not plan.window_mask[wi, wj]:
                continue
            flat = rng.choice(w_h * w_w, size=keep_n, replace=False)
            rows = torch.from_numpy(flat // w_w) + wi * w_h
            cols = torch.from_numpy(flat % w_w) + wj * w_w
            keep[rows, cols] = True
    return MaskPlan(
        grid=g,
        window_mask=plan.window_mask,
        pimask_keep=keep,
        mask_ratio=plan.mask_ratio,
        seed=plan.seed,
        pimask_fraction=keep_fraction,
        pimask_seed=seed,
    )


def full_visibility_plan(grid: PatchGrid) -> MaskPlan:
    """An all-visible plan, used by downstream (non-masked) encoding."""
    return MaskPlan(
        grid=grid,
        window_mask=torch.zeros(grid.windows_h, grid.windows_w, dtype=torch.bool),
        pimask_keep=torch.zeros(grid.patches_h, grid.patches_w, dtype=torch.bool),
        mask_ratio=0.0,
        seed=0,
    )


def batch_patch_mask(plans: "MaskPlan | list[MaskPlan]") -> torch.Tensor:
    """Stack per-sample patch masks into bool [B, T, groups, n_h, n_w]."""
    if isinstance(plans, MaskPlan):
        plans = [plans]
    return torch.stack([p.patch_mask() for p in plans], dim=0)


def patchify(values: torch.Tensor, grid: PatchGrid) -> torch.Tensor:
    """[T, C, H, W] (or batched) -> [..., T, groups, n_h, n_w, p*p*c_p].

    Patch vectors flatten in (band-within-group, row, column) order; this
    ordering is part of the checkpoint compatibility contract.
    """
    if values.shape[-4:] != (grid.frames, grid.channels, grid.height, grid.width):
        raise ValueError(
            f"values shape {tuple(values.shape)} does not match grid "
            f"[{grid.frames}, {grid.channels}, {grid.height}, {grid.width}]"
        )
    lead = values.shape[:-4]
    t, c, h, w = values.shape[-4:]
    p, cp = grid.patch_size, grid.group_size
    g, n_h, n_w = grid.groups, grid.patches_h, grid.patches_w
    x = values.reshape(*lead, t, g, cp, n_h, p, n_w, p)
    dims = list(range(len(lead)))
    nl = len(lead)
    x = x.permute(*dims, nl, nl + 1, nl + 3, nl + 5, nl + 2, nl + 4, nl + 6)
    return x.reshape(*lead, t, g, n_h, n_w, cp * p * p)


def unpatchify(patches: torch.Tensor, grid: PatchGrid) -> torch.Tensor:
    """Inverse of :func:`patchify`, bit-exact."""
    g, n_h, n_w = grid.groups, grid.patches_h, grid.patches_w
    p, cp = grid.patch_size, grid.group_size
    if patches.shape[-5:] != (grid.frames, g, n_h, n_w, cp * p * p):
        raise ValueError(
            f"patches shape {tuple(patches.shape)} does not match grid "
            f"[{grid.frames}, {g}, {n_h}, {n_w}, {cp * p * p}]"
        )
    lead = patches.shape[:-5]
    nl = len(lead)
    x = patches.reshape(*lead, grid.frames, g, n_h, n_w, cp, p, p)
    dims = list(range(nl))
    x = x.permute(*dims, nl, nl + 1, nl + 4, nl + 2, nl + 5, nl + 3, nl + 6)
    return x.reshape(*lead, grid.frames, grid.channels, grid.height, grid.width)


def apply_mask(patches: torch.Tensor, plans: "MaskPlan | list[MaskPlan]") -> torch.Tensor:
    """Zero masked patches; visible patches pass through bit-identically.

    Accepts [T, g, n_h, n_w, D] with a single plan or [B, T, g, n_h, n_w, D]
    with one plan per batch element.
    """
    single = patches.ndim == 5
    if single:
        if isinstance(plans, list) and len(plans) != 1:
            raise ValueError("unbatched input needs exactly one plan")
        mask = (plans[0] if isinstance(plans, list) else plans).patch_mask()
        expected = mask.shape
        if patches.shape[:-1] != expected:
            raise ValueError(f"patch tensor {tuple(patches.shape)} does not match grid {tuple(expected)}")
        return patches * (~mask).unsqueeze(-1).to(patches.dtype)
    mask = batch_patch_mask(plans)
    if patches.shape[:-1] != mask.shape:
        raise ValueError(f"patch tensor {tuple(patches.shape)} does not match plans {tuple(mask.shape)}")
    return patches * (~mask).unsqueeze(-1).to(patches.dtype)
