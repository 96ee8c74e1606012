"""Procedural scene generator.

Stands in for a real satellite archive: piecewise-constant class regions
(nearest-seed partition, optionally snapped to a block grid), per-class
spectral signatures, sinusoidal seasonal modulation keyed to day-of-year,
and i.i.d. sensor noise. Every draw is a pure function of the seed.

Per-frame class means follow the closed form

    mean[t, c] = base[k, c] + season_amp[k] * sin(2*pi*doy_t / 365 + phase[k])

(up to noise), which tests exploit by regressing generated means against a
sin/cos basis.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

from stmae.data.scene import SceneSample
from stmae.seeding import derive_seed


@dataclass(frozen=True)
class ClassSpec:
    name: str
    weight: float                      # target area share
    base: tuple[float, ...]            # per-band reflectance in [0, 1]
    season_amp: float = 0.0            # seasonal swing, equal across bands
    season_phase: float = 0.0          # radians


# Area shares follow the vegetation-monitoring distribution; spectra are
# loose caricatures (water dark with low IR, vegetation IR-bright, ...).
DEFAULT_CLASSES: tuple[ClassSpec, ...] = (
    ClassSpec("water", 0.31, (0.06, 0.09, 0.14, 0.04, 0.03, 0.05), 0.010, 0.0),
    ClassSpec("grass", 0.54, (0.12, 0.30, 0.14, 0.55, 0.42, 0.28), 0.120, 0.3),
    ClassSpec("hard_surface", 0.05, (0.45, 0.44, 0.42, 0.40, 0.38, 0.41), 0.0, 0.0),
    ClassSpec("reed", 0.04, (0.10, 0.24, 0.12, 0.46, 0.34, 0.22), 0.100, 1.1),
    ClassSpec("woods", 0.04, (0.07, 0.18, 0.09, 0.50, 0.36, 0.20), 0.080, 0.6),
    ClassSpec("thicket", 0.02, (0.09, 0.21, 0.11, 0.42, 0.31, 0.19), 0.090, 0.9),
)

DEFAULT_TIMESTAMPS: tuple[int, ...] = (15, 75, 135, 195, 255, 315)


@dataclass(frozen=True)
class GeneratorConfig:
    height: int = 64
    width: int = 64
    channels: int = 6
    frames: int = 6
    classes: tuple[ClassSpec, ...] = DEFAULT_CLASSES
    timestamps: tuple[int, ...] = DEFAULT_TIMESTAMPS
    n_regions: int = 8
    region_snap: int | None = None     # snap class boundaries to this pixel grid
    noise_sigma: float = 0.01
    require_multiple: int | None = None  # reject dims not divisible by this

    def validate(self) -> None:
        if self.height <= 0 or self.width <= 0:
            raise ValueError(f"dims must be positive, got ({self.height}, {self.width})")
        if self.require_multiple is not None:
            for axis, dim in (("height", self.height), ("width", self.width)):
                if dim % self.require_multiple != 0:
                    raise ValueError(
                        f"{axis}={dim} not divisible by required multiple {self.require_multiple}"
                    )
        if self.frames != len(self.timestamps):
            raise ValueError(f"{self.frames} frames but {len(self.timestamps)} timestamps")
        if self.channels <= 0 or self.frames <= 0:
            raise ValueError("channels and frames must be positive")
        if self.n_regions < 1:
            raise ValueError("need at least one region")
        for spec in self.classes:
            if len(spec.base) != self.channels:
                raise ValueError(
                    f"class {spec.name!r} has {len(spec.base)} band values, expected {self.channels}"
                )
        if self.region_snap is not None and (
            self.height % self.region_snap or self.width % self.region_snap
        ):
            raise ValueError("region_snap must divide height and width")


def _label_map(cfg: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    """Nearest-seed class partition, optionally at block granularity."""
    weights = np.array([c.weight for c in cfg.classes], dtype=np.float64)
    weights = weights / weights.sum()
    seed_classes = rng.choice(len(cfg.classes), size=cfg.n_regions, p=weights)
    seed_y = rng.uniform(0, cfg.height, size=cfg.n_regions)
    seed_x = rng.uniform(0, cfg.width, size=cfg.n_regions)
    if cfg.region_snap is None:
        yy, xx = np.mgrid[0 : cfg.height, 0 : cfg.width]
    else:
        s = cfg.region_snap
        yy, xx = np.mgrid[0 : cfg.height // s, 0 : cfg.width // s]
        yy = yy * s + s / 2
        xx = xx * s + s / 2
    d2 = (yy[..., None] - seed_y) ** 2 + (xx[..., None] - seed_x) ** 2
    labels = seed_classes[np.argmin(d2, axis=-1)]
    if cfg.region_snap is not None:
        labels = np.repeat(np.repeat(labels, cfg.region_snap, axis=0), cfg.region_snap, axis=1)
    return labels.astype(np.int64)


def _render(cfg: GeneratorConfig, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Evaluate the per-class seasonal signal plus sensor noise."""
    base = np.array([c.base for c in cfg.classes], dtype=np.float64)       # [K, C]
    amp = np.array([c.season_amp for c in cfg.classes], dtype=np.float64)  # [K]
    phase = np.array([c.season_phase for c in cfg.classes], dtype=np.float64)
    doy = np.array(cfg.timestamps, dtype=np.float64)
    season = amp[None, :] * np.sin(2 * np.pi * doy[:, None] / 365.0 + phase[None, :])  # [T, K]
    signal = base[None, :, :] + season[:, :, None]                          # [T, K, C]
    values = signal[:, labels, :].transpose(0, 3, 1, 2)                     # [T, C, H, W]
    values = values + rng.normal(0.0, cfg.noise_sigma, size=values.shape)
    return np.clip(values, 0.0, 1.0).astype(np.float32)


def generate_synthetic_scene(seed: int, cfg: GeneratorConfig) -> SceneSample:
    """Deterministically generate one scene for (seed, cfg)."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    labels = _label_map(cfg, rng)
    values = _render(cfg, labels, rng)
    sample = SceneSample(
        values=torch.from_numpy(values),
        band_valid=torch.ones(cfg.channels, dtype=torch.bool),
        timestamps=tuple(cfg.timestamps),
        sample_id=f"synth-{seed:08d}",
        label_mask=torch.from_numpy(labels),
    )
    sample.validate(check_range=True)
    return sample


def generate_labeled_tile(
    seed: int, cfg: GeneratorConfig, class_id: int
) -> tuple[SceneSample, int]:
    """A tile dominated by one class, for single-label classification tasks."""
    if not 0 <= class_id < len(cfg.classes):
        raise ValueError(f"class_id {class_id} outside palette of {len(cfg.classes)}")
    forced = tuple(
        ClassSpec(c.name, 1.0 if k == class_id else 0.0, c.base, c.season_amp, c.season_phase)
        for k, c in enumerate(cfg.classes)
    )
    sample = generate_synthetic_scene(seed, replace(cfg, classes=forced))
    return sample, class_id


def generate_change_pair(
    seed: int, cfg: GeneratorConfig, min_extent: int = 8
) -> tuple[SceneSample, SceneSample, torch.Tensor]:
    """A before/after pair differing in one inserted rectangle.

    The rectangle is re-labelled to a different class and re-rendered; the
    returned bool tensor [H, W] marks changed pixels.
    """
    cfg.validate()
    rng = np.random.default_rng(derive_seed(seed, "change-pair"))
    labels_before = _label_map(cfg, rng)

    snap = cfg.region_snap or 1
    max_h = max(min_extent, cfg.height // 2)
    max_w = max(min_extent, cfg.width // 2)
    rect_h = int(rng.integers(min_extent, max_h + 1)) // snap * snap or snap
    rect_w = int(rng.integers(min_extent, max_w + 1)) // snap * snap or snap
    top = int(rng.integers(0, cfg.height - rect_h + 1)) // snap * snap
    left = int(rng.integers(0, cfg.width - rect_w + 1)) // snap * snap

    labels_after = labels_before.copy()
    patch = labels_after[top : top + rect_h, left : left + rect_w]
    dominant = int(np.bincount(patch.ravel()).argmax())
    candidates = [k for k in range(len(cfg.classes)) if k != dominant]
    new_class = int(rng.choice(candidates))
    labels_after[top : top + rect_h, left : left + rect_w] = new_class

    # Identical noise realization on both renders: outside the rectangle the
    # pair is pixel-identical, so the only temporal signal is the change.
    render_seed = derive_seed(seed, "change-render")
    values_before = _render(cfg, labels_before, np.random.default_rng(render_seed))
    values_after = _render(cfg, labels_after, np.random.default_rng(render_seed))

    change = torch.zeros(cfg.height, cfg.width, dtype=torch.bool)
    changed_block = labels_before[top : top + rect_h, left : left + rect_w] != new_class
    change[top : top + rect_h, left : left + rect_w] = torch.from_numpy(changed_block)

    def wrap(values: np.ndarray, labels: np.ndarray, tag: str) -> SceneSample:
        return SceneSample(
            values=torch.from_numpy(values),
            band_valid=torch.ones(cfg.channels, dtype=torch.bool),
            timestamps=tuple(cfg.timestamps),
            sample_id=f"synth-{seed:08d}-{tag}",
            label_mask=torch.from_numpy(labels),
        )

    return wrap(values_before, labels_before, "before"), wrap(values_after, labels_after, "after"), change
