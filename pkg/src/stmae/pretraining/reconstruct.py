"""Visual reconstruction artifacts from a (possibly untrained) model.

Replays the exact first training batch of epoch 0 (same ordering, masks,
and frequency filters as run_pretraining at step 1), computes the dual
loss, and renders input / masked / reconstruction triptychs. With the same
seed and dataset, the emitted loss matches the first metrics line of a
pretraining run.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from numpy.random import default_rng
from PIL import Image

from stmae.data.io import SampleStore
from stmae.data.normalize import NormalizationStats, compute_normalization_stats
from stmae.frequency import FrequencyFilterSpec, apply_frequency_augmentation
from stmae.loss import loss_mask, total_loss
from stmae.masking import apply_mask, batch_patch_mask, patchify
from stmae.model import ModelConfig, build_autoencoder
from stmae.model.checkpoint import load_autoencoder
from stmae.pretraining.loop import TrainConfig, make_mask_plan, prepare_batch
from stmae.seeding import derive_seed


def _to_rgb(values: torch.Tensor, stats: NormalizationStats, band_valid: torch.Tensor) -> np.ndarray:
    """Middle frame of a normalized [T, C, H, W] tensor -> uint8 [H, W, 3]."""
    mean = torch.tensor(stats.mean, dtype=values.dtype).view(-1, 1, 1)
    std = torch.tensor(stats.std, dtype=values.dtype).view(-1, 1, 1)
    frame = values[values.shape[0] // 2] * std + mean
    bands = [i for i, ok in enumerate(band_valid.tolist()) if ok][:3]
    while len(bands) < 3:
        bands.append(bands[-1])
    rgb = frame[bands].clamp(0.0, 1.0).numpy()
    return (np.transpose(rgb, (1, 2, 0)) * 255).round().astype(np.uint8)


def render_triptych(
    clean: torch.Tensor,
    recon: torch.Tensor,
    pixel_mask: torch.Tensor,
    stats: NormalizationStats,
    band_valid: torch.Tensor,
    path: Path,
) -> None:
    """Write input | masked | reconstruction side by side as one PNG."""
    masked = clean.clone()
    grey = torch.zeros_like(masked)
    masked = torch.where(pixel_mask, grey, masked)
    panels = [
        _to_rgb(clean, stats, band_valid),
        _to_rgb(masked, stats, band_valid),
        _to_rgb(recon, stats, band_valid),
    ]
    h = panels[0].shape[0]
    sep = np.full((h, 2, 3), 255, dtype=np.uint8)
    row = np.concatenate([panels[0], sep, panels[1], sep, panels[2]], axis=1)
    Image.fromarray(row).save(path)


@torch.no_grad()
def reconstruct_first_batch(
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    dataset_dir: str | Path,
    out_dir: str | Path,
    checkpoint: str | Path | None = None,
    n_images: int = 4,
) -> dict:
    """Returns the loss summary dict that was also written to loss.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    store = SampleStore(dataset_dir)
    split = store.split()
    stats = compute_normalization_stats(store.load(i) for i in split.train_ids)

    if checkpoint is not None:
        model, _ = load_autoencoder(checkpoint, model_cfg)
    else:
        model = build_autoencoder(model_cfg, derive_seed(cfg.seed, "model"))
    model.eval()

    probe = store.load(split.train_ids[0])
    grid = model_cfg.grid_for(probe.height, probe.width)
    order = default_rng(derive_seed(cfg.seed, "order", 0)).permutation(len(split.train_ids))
    ids = [split.train_ids[i] for i in order][: cfg.batch_size]
    samples = [store.load(i) for i in ids]
    values, band_valid, _ = prepare_batch(samples, stats, cfg, epoch=0, train=True)
    plans = [make_mask_plan(grid, cfg, "train", 0, i) for i in ids]
    if cfg.freq_selection_prob > 0:
        encoder_input = torch.stack(
            [
                apply_frequency_augmentation(
                    values[i],
                    grid,
                    FrequencyFilterSpec(
                        cutoff_fraction=cfg.freq_cutoff,
                        selection_prob=cfg.freq_selection_prob,
                        seed=derive_seed(cfg.seed, "freq", 0, sample_id),
                    ),
                )
                for i, sample_id in enumerate(ids)
            ]
        )
    else:
        encoder_input = values
    visible = apply_mask(patchify(encoder_input, grid), plans)
    recon, _ = model(visible, batch_patch_mask(plans), grid)
    report = total_loss(values, recon, plans, band_valid, cfg.include_pimask_targets)

    image_paths = []
    for i in range(min(n_images, len(ids))):
        pixel_mask = loss_mask(plans[i], torch.ones_like(band_valid))
        path = out_dir / f"reconstruction-{ids[i]}.png"
        render_triptych(values[i], recon[i], pixel_mask, stats, band_valid, path)
        image_paths.append(str(path))

    summary = {
        "samples": ids,
        "loss": report.item(),
        "images": image_paths,
    }
    (out_dir / "loss.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
