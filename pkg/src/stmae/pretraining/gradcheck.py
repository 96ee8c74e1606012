"""Finite-difference verification of analytic gradients.

Runs the full pretraining forward (masking, partial unmasking, frequency
filtering, embed, encode, decode, dual loss) on a minimal model in float64
and compares autograd parameter gradients against central differences,
(L(p + h) - L(p - h)) / 2h, on a random sample of parameter coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from stmae.data.synthetic import ClassSpec, GeneratorConfig, generate_synthetic_scene
from stmae.frequency import FrequencyFilterSpec, apply_frequency_augmentation
from stmae.loss import total_loss
from stmae.masking import apply_mask, apply_pimask, batch_patch_mask, patchify, sample_window_mask
from stmae.model import ModelConfig, build_autoencoder
from stmae.seeding import derive_seed


@dataclass
class CoordinateError:
    parameter: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_coordinates: int
    worst: list[CoordinateError]
    threshold: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.threshold

    def summary(self) -> str:
        lines = [
            f"gradient check: {self.n_coordinates} coordinates, "
            f"max rel error {self.max_rel_error:.3e} "
            f"({'PASS' if self.passed else 'FAIL'} at {self.threshold:.1e})"
        ]
        for worst in self.worst:
            lines.append(
                f"  {worst.parameter}{list(worst.index)}: analytic {worst.analytic:.6e} "
                f"vs numeric {worst.numeric:.6e} (rel {worst.rel_error:.3e})"
            )
        return "\n".join(lines)


def _tiny_batch(cfg: ModelConfig, seed: int) -> tuple[torch.Tensor, torch.Tensor]:
    """A small float64 batch matching the model's frame/channel layout."""
    classes = tuple(
        ClassSpec(spec.name, spec.weight, spec.base[: cfg.channels], spec.season_amp, spec.season_phase)
        for spec in GeneratorConfig().classes
    )
    gen_cfg = GeneratorConfig(
        height=cfg.patch_size * 8,
        width=cfg.patch_size * 8,
        channels=cfg.channels,
        frames=cfg.frames,
        classes=classes,
        timestamps=GeneratorConfig().timestamps[: cfg.frames],
        n_regions=4,
    )
    samples = [generate_synthetic_scene(derive_seed(seed, "sample", i), gen_cfg) for i in range(2)]
    values = torch.stack([s.values for s in samples]).to(torch.float64)
    # Standardize in-place so the loss sits at trainable scale.
    mean = values.mean(dim=(0, 1, 3, 4), keepdim=True)
    std = values.std(dim=(0, 1, 3, 4), keepdim=True).clamp_min(1e-3)
    return (values - mean) / std, samples[0].band_valid


def gradient_check(
    model_cfg: ModelConfig | None = None,
    seed: int = 0,
    n_coordinates: int = 200,
    step: float = 1e-3,
    threshold: float = 1e-4,
    worst_k: int = 5,
) -> GradCheckReport:
    """Compare autograd and central-difference gradients in float64."""
    if model_cfg is None:
        model_cfg = ModelConfig.tiny()
    values, band_valid = _tiny_batch(model_cfg, seed)
    grid = model_cfg.grid_for(values.shape[-2], values.shape[-1])

    plans = []
    for i in range(values.shape[0]):
        plan = sample_window_mask(grid, 0.5, derive_seed(seed, "mask", i))
        plans.append(apply_pimask(plan, 0.25, derive_seed(seed, "pimask", i)))
    spec = FrequencyFilterSpec(seed=derive_seed(seed, "freq"))
    encoder_input = torch.stack(
        [apply_frequency_augmentation(values[i], grid, spec) for i in range(values.shape[0])]
    )
    patch_mask = batch_patch_mask(plans)
    visible = apply_mask(patchify(encoder_input, grid), plans)

    model = build_autoencoder(model_cfg, derive_seed(seed, "model")).double()
    model.eval()

    def loss_value() -> torch.Tensor:
        recon, _ = model(visible, patch_mask, grid)
        return total_loss(values, recon, plans, band_valid).total

    model.zero_grad(set_to_none=True)
    loss_value().backward()
    named = [(name, p) for name, p in model.named_parameters() if p.requires_grad]

    rng = np.random.default_rng(derive_seed(seed, "coords"))
    sizes = np.array([p.numel() for _, p in named], dtype=np.float64)
    probs = sizes / sizes.sum()
    errors: list[CoordinateError] = []
    with torch.no_grad():
        for _ in range(n_coordinates):
            pi = int(rng.choice(len(named), p=probs))
            name, param = named[pi]
            flat_index = int(rng.integers(param.numel()))
            index = np.unravel_index(flat_index, param.shape)
            analytic = float(param.grad.view(-1)[flat_index])
            original = float(param.view(-1)[flat_index])
            param.view(-1)[flat_index] = original + step
            plus = float(loss_value())
            param.view(-1)[flat_index] = original - step
            minus = float(loss_value())
            param.view(-1)[flat_index] = original
            numeric = (plus - minus) / (2.0 * step)
            # Floor keeps the ratio meaningful on near-zero gradients, where
            # the difference quotient is pure cancellation noise; below the
            # floor this is an absolute comparison at 1e-10 resolution.
            denom = max(abs(analytic), abs(numeric), 1e-6)
            errors.append(
                CoordinateError(
                    parameter=name,
                    index=tuple(int(i) for i in index),
                    analytic=analytic,
                    numeric=numeric,
                    rel_error=abs(analytic - numeric) / denom,
                )
            )
    errors.sort(key=lambda e: e.rel_error, reverse=True)
    return GradCheckReport(
        max_rel_error=errors[0].rel_error if errors else 0.0,
        n_coordinates=len(errors),
        worst=errors[:worst_k],
        threshold=threshold,
    )
