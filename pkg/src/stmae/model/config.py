"""Encoder-decoder configuration."""

from __future__ import annotations

from dataclasses import dataclass, asdict

from stmae.masking import PatchGrid, build_patch_grid


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 96
    depths: tuple[int, int, int, int] = (2, 2, 6, 2)
    num_heads: tuple[int, int, int, int] = (3, 6, 12, 24)
    attention_window: int = 8     # patches; clamped per stage to the grid
    shift: int = 4                # odd blocks shift the window grid by this
    patch_size: int = 4           # p, pixels
    group_size: int = 2           # c_p, bands per spectral group
    frames: int = 6               # T
    channels: int = 6             # C
    mask_window: tuple[int, int, int] = (6, 8, 8)
    hf_kernel: int = 3
    hf_bottleneck_ratio: float = 0.25
    ffn_ratio: int = 4

    def __post_init__(self):
        if len(self.depths) != 4 or len(self.num_heads) != 4:
            raise ValueError("depths and num_heads must have 4 entries")
        for s in range(4):
            dim = self.stage_dim(s)
            if dim % self.num_heads[s] != 0:
                raise ValueError(
                    f"stage {s + 1} dim {dim} not divisible by {self.num_heads[s]} heads"
                )
        if self.shift >= self.attention_window:
            raise ValueError("shift must be smaller than the attention window")
        if self.channels % self.group_size != 0:
            raise ValueError("channels must divide into spectral groups")
        if self.mask_window[0] != self.frames:
            raise ValueError("mask window must span all frames")

    def stage_dim(self, stage_index: int) -> int:
        return self.embed_dim * (2 ** stage_index)

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.group_size

    def grid_for(self, height: int, width: int) -> PatchGrid:
        return build_patch_grid(
            (self.frames, self.channels, height, width),
            self.patch_size,
            self.group_size,
            self.mask_window,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depths"] = list(self.depths)
        d["num_heads"] = list(self.num_heads)
        d["mask_window"] = list(self.mask_window)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("depths", "num_heads", "mask_window"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def swin_t(cls) -> "ModelConfig":
        """Reference-scale configuration (96-dim, depths 2/2/6/2)."""
        return cls()

    @classmethod
    def desk(cls) -> "ModelConfig":
        """Small configuration for CPU-scale runs on 64px tiles."""
        return cls(
            embed_dim=8,
            depths=(1, 1, 1, 1),
            num_heads=(1, 1, 2, 2),
            attention_window=8,
            shift=4,
            patch_size=4,
            group_size=2,
            frames=6,
            channels=6,
            mask_window=(6, 8, 8),
        )

    @classmethod
    def tiny(cls) -> "ModelConfig":
        """Minimal configuration used by the finite-difference gradient check.

        16px inputs with 2px patches give an 8x8 stage-1 grid, the smallest
        that survives three 2x merges (8 -> 4 -> 2 -> 1).
        """
        return cls(
            embed_dim=8,
            depths=(1, 1, 1, 1),
            num_heads=(1, 1, 2, 2),
            attention_window=2,
            shift=1,
            patch_size=2,
            group_size=2,
            frames=2,
            channels=4,
            mask_window=(2, 2, 2),
        )
