"""Temporally consistent sample augmentation.

One parameter set serves all frames of a sample: the same crop, flips,
quarter-turn rotation, per-channel gain/offset, blur kernel, and noise sigma
apply to every frame (and the spatial part to the label mask), so the
induced pixel-index permutation is identical across time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn.functional as F

from stmae.data.scene import SceneSample
from stmae.seeding import derive_seed


@dataclass(frozen=True)
class AugmentationParams:
    crop: tuple[int, int, int, int] | None  # top, left, height, width
    flip_h: bool
    flip_v: bool
    quarter_turns: int                      # rotation by quarter_turns * 90 degrees
    gain: tuple[float, ...]                 # per-channel multiplier
    offset: tuple[float, ...]               # per-channel shift
    blur_sigma: float
    noise_sigma: float
    seed: int                               # drives the noise draw only

    @classmethod
    def identity(cls, channels: int) -> "AugmentationParams":
        return cls(
            crop=None,
            flip_h=False,
            flip_v=False,
            quarter_turns=0,
            gain=(1.0,) * channels,
            offset=(0.0,) * channels,
            blur_sigma=0.0,
            noise_sigma=0.0,
            seed=0,
        )


def sample_augmentation_params(
    sample: SceneSample,
    seed: int,
    crop_prob: float = 0.5,
    crop_fraction: float = 0.75,
    gain_jitter: float = 0.1,
    offset_jitter: float = 0.05,
    max_blur_sigma: float = 1.0,
    max_noise_sigma: float = 0.02,
) -> AugmentationParams:
    """Draw one parameter set for a sample, seeded by content not worker.

    Set crop_prob to 0 when downstream consumers need fixed dims.
    """
    rng = np.random.default_rng(derive_seed(seed, sample.sample_id))
    c = sample.channels
    crop = None
    if rng.random() < crop_prob:
        ch = max(1, int(round(sample.height * crop_fraction)))
        cw = max(1, int(round(sample.width * crop_fraction)))
        top = int(rng.integers(0, sample.height - ch + 1))
        left = int(rng.integers(0, sample.width - cw + 1))
        crop = (top, left, ch, cw)
    return AugmentationParams(
        crop=crop,
        flip_h=bool(rng.random() < 0.5),
        flip_v=bool(rng.random() < 0.5),
        quarter_turns=int(rng.integers(0, 4)),
        gain=tuple(float(g) for g in 1.0 + rng.uniform(-gain_jitter, gain_jitter, size=c)),
        offset=tuple(float(o) for o in rng.uniform(-offset_jitter, offset_jitter, size=c)),
        blur_sigma=float(rng.uniform(0.0, max_blur_sigma)),
        noise_sigma=float(rng.uniform(0.0, max_noise_sigma)),
        seed=derive_seed(seed, sample.sample_id, "noise"),
    )


def _gaussian_kernel1d(sigma: float) -> torch.Tensor:
    radius = max(1, int(math.ceil(3.0 * sigma)))
    xs = torch.arange(-radius, radius + 1, dtype=torch.float32)
    k = torch.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def _blur(values: torch.Tensor, sigma: float) -> torch.Tensor:
    # Separable depthwise blur; one kernel shared by every frame and channel.
    t, c, h, w = values.shape
    k = _gaussian_kernel1d(sigma)
    r = (k.numel() - 1) // 2
    x = values.reshape(t * c, 1, h, w)
    x = F.pad(x, (r, r, r, r), mode="reflect")
    x = F.conv2d(x, k.view(1, 1, -1, 1))
    x = F.conv2d(x, k.view(1, 1, 1, -1))
    return x.reshape(t, c, h, w)


def augment(sample: SceneSample, params: AugmentationParams) -> SceneSample:
    """Apply one parameter set to all frames (and the label mask).

    Spatial ops are exact index permutations / slices, so flip twice is the
    identity bit-for-bit. Color ops touch valid channels only; padded
    channels stay identically zero. Output values are clamped to [0, 1].
    """
    values = sample.values
    label = sample.label_mask
    t, c, h, w = values.shape
    if len(params.gain) != c or len(params.offset) != c:
        raise ValueError(f"gain/offset must have {c} entries")
    if params.blur_sigma < 0 or params.noise_sigma < 0:
        raise ValueError("sigmas must be non-negative")

    if params.crop is not None:
        top, left, ch, cw = params.crop
        if top < 0 or left < 0 or top + ch > h or left + cw > w or ch < 1 or cw < 1:
            raise ValueError(f"crop {params.crop} out of bounds for ({h}, {w})")
        values = values[:, :, top : top + ch, left : left + cw]
        if label is not None:
            label = label[top : top + ch, left : left + cw]

    k = params.quarter_turns % 4
    if k:
        values = torch.rot90(values, k, dims=(-2, -1))
        if label is not None:
            label = torch.rot90(label, k, dims=(-2, -1))
    if params.flip_h:
        values = torch.flip(values, dims=(-1,))
        if label is not None:
            label = torch.flip(label, dims=(-1,))
    if params.flip_v:
        values = torch.flip(values, dims=(-2,))
        if label is not None:
            label = torch.flip(label, dims=(-2,))
    values = values.contiguous()

    valid = sample.band_valid
    color_identity = (
        all(g == 1.0 for g in params.gain)
        and all(o == 0.0 for o in params.offset)
        and params.blur_sigma == 0.0
        and params.noise_sigma == 0.0
    )
    if not color_identity:
        values = values.clone()
        gain = torch.tensor(params.gain, dtype=values.dtype).view(1, c, 1, 1)
        offset = torch.tensor(params.offset, dtype=values.dtype).view(1, c, 1, 1)
        colored = values * gain + offset
        if params.blur_sigma > 0:
            colored = _blur(colored, params.blur_sigma)
        if params.noise_sigma > 0:
            gen = torch.Generator(device="cpu").manual_seed(params.seed)
            noise = torch.randn(values.shape, generator=gen, dtype=values.dtype)
            colored = colored + params.noise_sigma * noise
        colored = colored.clamp(0.0, 1.0)
        values = torch.where(valid.view(1, c, 1, 1), colored, values)

    out = replace(sample, values=values, label_mask=label)
    return out
