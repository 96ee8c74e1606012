"""Scene samples: the unit of data everywhere in the pipeline.

A scene is a short time series of co-registered multi-band images over one
location, plus band-validity flags (channels padded onto 4-band sensors stay
identically zero and are flagged invalid) and an optional per-pixel label
mask.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import torch


@dataclass
class SceneSample:
    """One georeferenced tile.

    values:     float32 tensor [T, C, H, W], reflectance-like, in [0, 1]
                for raw samples (normalized samples exceed the range).
    band_valid: bool tensor [C]; invalid channels are identically zero.
    timestamps: strictly increasing day-of-year integers, one per frame.
    label_mask: optional int64 tensor [H, W] of class ids.
    """

    values: torch.Tensor
    band_valid: torch.Tensor
    timestamps: tuple[int, ...]
    sample_id: str
    label_mask: torch.Tensor | None = None

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[2]

    @property
    def width(self) -> int:
        return self.values.shape[3]

    def validate(self, check_range: bool = False) -> None:
        """Raise ValueError on any invariant violation.

        check_range additionally enforces the [0, 1] contract of raw
        (un-normalized) samples.
        """
        if self.values.ndim != 4:
            raise ValueError(f"values must be [T, C, H, W], got {tuple(self.values.shape)}")
        t, c, h, w = self.values.shape
        if self.band_valid.shape != (c,):
            raise ValueError(f"band_valid must have shape [{c}], got {tuple(self.band_valid.shape)}")
        if len(self.timestamps) != t:
            raise ValueError(f"expected {t} timestamps, got {len(self.timestamps)}")
        if any(b >= a for a, b in zip(self.timestamps[1:], self.timestamps[:-1])):
            raise ValueError(f"timestamps must be strictly increasing, got {self.timestamps}")
        if not torch.isfinite(self.values).all():
            raise ValueError(f"sample {self.sample_id} contains non-finite values")
        if check_range and (self.values.min() < 0 or self.values.max() > 1):
            raise ValueError(f"sample {self.sample_id} has values outside [0, 1]")
        invalid = ~self.band_valid
        if invalid.any() and self.values[:, invalid].abs().max() > 0:
            raise ValueError(f"sample {self.sample_id}: invalid channels must be identically zero")
        if self.label_mask is not None:
            if self.label_mask.shape != (h, w):
                raise ValueError(
                    f"label_mask shape {tuple(self.label_mask.shape)} does not match values [{h}, {w}]"
                )
            if self.label_mask.min() < 0:
                raise ValueError("label_mask contains negative class ids")

    def clone(self) -> "SceneSample":
        return SceneSample(
            values=self.values.clone(),
            band_valid=self.band_valid.clone(),
            timestamps=tuple(self.timestamps),
            sample_id=self.sample_id,
            label_mask=None if self.label_mask is None else self.label_mask.clone(),
        )


def pad_spectral_channels(sample: SceneSample, target_channels: int = 6) -> SceneSample:
    """Pad a 4-band sample to the target width with zero, invalid channels.

    The appended channels never contribute to gradients downstream; they are
    placeholders that keep tensor shapes uniform across sensors. A sample
    already at the target width is returned unchanged (with a warning).
    """
    c = sample.channels
    if c == target_channels:
        warnings.warn(
            f"sample {sample.sample_id} already has {target_channels} channels; returning unchanged",
            stacklevel=2,
        )
        return sample
    if c != 4:
        raise ValueError(f"expected a 4-band sample, got {c} channels")
    t, _, h, w = sample.values.shape
    pad = torch.zeros(t, target_channels - c, h, w, dtype=sample.values.dtype)
    values = torch.cat([sample.values, pad], dim=1)
    band_valid = torch.cat(
        [sample.band_valid, torch.zeros(target_channels - c, dtype=torch.bool)]
    )
    return replace(sample, values=values, band_valid=band_valid)


def tile_scene(scene: SceneSample, tile_size: int, stride: int) -> list[SceneSample]:
    """Cut a scene into tiles on the stride lattice.

    Enumerates every top-left offset (row-major) on the stride lattice whose
    tile fits entirely inside the scene: floor((dim - tile)/stride) + 1 per
    axis. Tile ids encode the parent id and pixel offset.
    """
    h, w = scene.height, scene.width
    if tile_size > h or tile_size > w:
        raise ValueError(f"tile_size {tile_size} exceeds scene dims ({h}, {w})")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    tiles = []
    for top in range(0, h - tile_size + 1, stride):
        for left in range(0, w - tile_size + 1, stride):
            label = None
            if scene.label_mask is not None:
                label = scene.label_mask[top : top + tile_size, left : left + tile_size].clone()
            tiles.append(
                SceneSample(
                    values=scene.values[:, :, top : top + tile_size, left : left + tile_size].clone(),
                    band_valid=scene.band_valid.clone(),
                    timestamps=tuple(scene.timestamps),
                    sample_id=f"{scene.sample_id}__y{top:05d}x{left:05d}",
                    label_mask=label,
                )
            )
    return tiles


def parse_tile_offset(tile_id: str) -> tuple[str, int, int]:
    """Recover (parent_id, top, left) from a tile id produced by tile_scene."""
    parent, _, tail = tile_id.rpartition("__y")
    if not parent or "x" not in tail:
        raise ValueError(f"not a tile id: {tile_id!r}")
    top_s, _, left_s = tail.partition("x")
    return parent, int(top_s), int(left_s)
