"""Seeded pretraining loop with resumable checkpoints.

Every stochastic choice is derived from (seed, purpose, epoch, sample id),
never from a shared stream or worker identity, so a run interrupted at an
epoch boundary and resumed is step-for-step identical to an uninterrupted
one once model and optimizer state are restored. Validation masks derive
from the sample id alone and therefore stay fixed across epochs.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from numpy.random import default_rng

import stmae
from stmae.data.augment import augment, sample_augmentation_params
from stmae.data.io import SampleStore
from stmae.data.normalize import NormalizationStats, compute_normalization_stats, normalize
from stmae.data.scene import SceneSample
from stmae.errors import ConfigError, DataError, NumericError
from stmae.frequency import FrequencyFilterSpec, apply_frequency_augmentation
from stmae.loss import LossReport, total_loss
from stmae.masking import MaskPlan, apply_mask, apply_pimask, batch_patch_mask, patchify, sample_window_mask
from stmae.model import MaskedAutoencoder, ModelConfig, build_autoencoder
from stmae.model.checkpoint import load_checkpoint, save_checkpoint
from stmae.seeding import derive_seed


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    base_lr: float | None = None      # None -> 1.5e-4 * batch_size / 256
    warmup_steps: int = 40
    weight_decay: float = 0.05
    seed: int = 0
    mask_ratio: float = 0.75
    pimask_fraction: float = 0.25
    freq_cutoff: float = 0.25
    freq_selection_prob: float = 0.5
    augment: bool = False             # spatial/color augmentation (dims preserved)
    include_pimask_targets: bool = False
    checkpoint_every: int = 0         # extra per-epoch checkpoints; 0 = only last/best
    early_stop_patience: int | None = None
    early_stop_min_improvement: float = 0.005
    debug_target_purity: bool = False

    def validate(self) -> None:
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("epochs and batch_size must be positive")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigError(f"mask_ratio must be in (0, 1), got {self.mask_ratio}")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")

    @property
    def learning_rate(self) -> float:
        if self.base_lr is not None:
            return self.base_lr
        return 1.5e-4 * self.batch_size / 256


@dataclass
class RunManifest:
    train_config: dict
    model_config: dict
    seed: int
    subsystem_seeds: dict
    split_hash: str
    dataset_dir: str
    metrics_path: str
    package_version: str = stmae.__version__

    def to_dict(self) -> dict:
        return {
            "package_version": self.package_version,
            "seed": self.seed,
            "subsystem_seeds": self.subsystem_seeds,
            "split_hash": self.split_hash,
            "dataset_dir": self.dataset_dir,
            "metrics_path": self.metrics_path,
            "train_config": self.train_config,
            "model_config": self.model_config,
        }


def cosine_lr(step: int, total_steps: int, base_lr: float, warmup_steps: int) -> float:
    """Linear warmup then cosine decay to zero."""
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / span)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def split_hash(ids_by_split: dict[str, tuple[str, ...]]) -> str:
    digest = hashlib.sha256()
    for name in ("train", "val", "test"):
        digest.update(name.encode())
        for sample_id in ids_by_split.get(name, ()):
            digest.update(sample_id.encode())
            digest.update(b"\x1f")
    return digest.hexdigest()


def make_mask_plan(grid, cfg: TrainConfig, *parts) -> MaskPlan:
    """Sample mask + partial unmasking from a content-derived seed."""
    plan = sample_window_mask(grid, cfg.mask_ratio, derive_seed(cfg.seed, "mask", *parts))
    if cfg.pimask_fraction > 0:
        plan = apply_pimask(plan, cfg.pimask_fraction, derive_seed(cfg.seed, "pimask", *parts))
    return plan


def prepare_batch(
    samples: list[SceneSample],
    stats: NormalizationStats,
    cfg: TrainConfig,
    epoch: int,
    train: bool,
) -> tuple[torch.Tensor, torch.Tensor, list[str]]:
    """Augment (train only) and normalize; returns values, band_valid, ids."""
    out = []
    for sample in samples:
        if train and cfg.augment:
            params = sample_augmentation_params(
                sample, derive_seed(cfg.seed, "aug", epoch), crop_prob=0.0
            )
            sample = augment(sample, params)
        out.append(normalize(sample, stats))
    values = torch.stack([s.values for s in out])
    band_valid = out[0].band_valid
    for s in out[1:]:
        if not torch.equal(s.band_valid, band_valid):
            raise ValueError("batch mixes samples with different band validity")
    return values, band_valid, [s.sample_id for s in out]


def pretrain_step(
    values: torch.Tensor,
    band_valid: torch.Tensor,
    sample_ids: list[str],
    model: MaskedAutoencoder,
    plans: list[MaskPlan],
    filter_specs: list[FrequencyFilterSpec] | None,
    optimizer: torch.optim.Optimizer,
    lr: float,
    include_pimask_targets: bool = False,
    debug_target_purity: bool = False,
) -> LossReport:
    """One optimization step over a normalized batch [B, T, C, H, W].

    Pipeline: frequency-augment encoder input, patchify, zero masked
    patches, embed with mask tokens, encode, decode, dual loss against the
    clean (pre-filter) target, backprop, update. Raises NumericError with
    the offending sample ids when the loss goes non-finite.
    """
    grid = plans[0].grid
    target = values
    if filter_specs is not None:
        with torch.no_grad():
            encoder_input = torch.stack(
                [
                    apply_frequency_augmentation(values[i], grid, filter_specs[i])
                    for i in range(values.shape[0])
                ]
            )
    else:
        encoder_input = values
    if debug_target_purity:
        assert target is values, "loss target must be the clean pre-filter tensor"
        assert filter_specs is None or encoder_input is not target

    for group in optimizer.param_groups:
        group["lr"] = lr
    patches = patchify(encoder_input, grid)
    visible = apply_mask(patches, plans)
    recon, _ = model(visible, batch_patch_mask(plans), grid)
    report = total_loss(target, recon, plans, band_valid, include_pimask_targets)
    if not torch.isfinite(report.total):
        raise NumericError(
            f"non-finite loss on samples {sample_ids}: "
            f"spectral={float(report.spectral_term.detach())}, "
            f"spatial={float(report.spatial_term.detach())}"
        )
    optimizer.zero_grad(set_to_none=True)
    report.total.backward()
    optimizer.step()
    return report


@torch.no_grad()
def evaluate_validation(
    model: MaskedAutoencoder,
    store: SampleStore,
    val_ids: tuple[str, ...],
    stats: NormalizationStats,
    cfg: TrainConfig,
    grid,
    batch_size: int,
) -> LossReport:
    """Masked-reconstruction loss with per-sample masks fixed across epochs."""
    model.eval()
    total = spec_sum = spat_sum = 0.0
    m_total = 0
    c = 0
    count = 0
    for start in range(0, len(val_ids), batch_size):
        ids = val_ids[start : start + batch_size]
        samples = [store.load(i) for i in ids]
        values, band_valid, _ = prepare_batch(samples, stats, cfg, epoch=0, train=False)
        plans = [make_mask_plan(grid, cfg, "val", sample_id) for sample_id in ids]
        patches = patchify(values, grid)
        visible = apply_mask(patches, plans)
        recon, _ = model(visible, batch_patch_mask(plans), grid)
        report = total_loss(values, recon, plans, band_valid, cfg.include_pimask_targets)
        n = values.shape[0]
        total += float(report.total) * n
        spec_sum += float(report.spectral_term) * n
        spat_sum += float(report.spatial_term) * n
        m_total += report.m
        c = report.c
        count += n
    model.train()
    if count == 0:
        raise ValueError("validation split is empty")
    return LossReport(
        total=torch.tensor(total / count),
        spectral_term=torch.tensor(spec_sum / count),
        spatial_term=torch.tensor(spat_sum / count),
        m=m_total,
        c=c,
    )


def _optimizer_tensors(optimizer: torch.optim.Optimizer) -> dict[str, torch.Tensor]:
    out = {}
    state = optimizer.state_dict()["state"]
    for idx, entry in state.items():
        for key, value in entry.items():
            if isinstance(value, torch.Tensor):
                out[f"optim.{idx}.{key}"] = value
    return out


def _restore_optimizer(optimizer: torch.optim.Optimizer, tensors: dict[str, torch.Tensor]) -> None:
    state = optimizer.state_dict()
    packed: dict[int, dict] = {}
    for name, tensor in tensors.items():
        if not name.startswith("optim."):
            continue
        _, idx, key = name.split(".", 2)
        packed.setdefault(int(idx), {})[key] = tensor
    state["state"] = packed
    optimizer.load_state_dict(state)


def _save_train_checkpoint(
    path: Path,
    model: MaskedAutoencoder,
    optimizer: torch.optim.Optimizer,
    model_cfg: ModelConfig,
    next_epoch: int,
    global_step: int,
    best_val: float | None,
    epochs_since_best: int,
) -> None:
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    tensors.update(_optimizer_tensors(optimizer))
    meta = {
        "kind": "train",
        "config": model_cfg.to_dict(),
        "patch_order": "band-within-group,row,column",
        "next_epoch": next_epoch,
        "global_step": global_step,
        "best_val": best_val,
        "epochs_since_best": epochs_since_best,
    }
    save_checkpoint(path, tensors, meta)


def load_train_checkpoint(path: Path, model: MaskedAutoencoder, optimizer: torch.optim.Optimizer) -> dict:
    tensors, meta = load_checkpoint(path)
    model_state = {k[len("model.") :]: v for k, v in tensors.items() if k.startswith("model.")}
    model.load_state_dict(model_state)
    _restore_optimizer(optimizer, tensors)
    return meta


def run_pretraining(
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    dataset_dir: str | Path,
    out_dir: str | Path,
    resume_from: str | Path | None = None,
    stop_after_epoch: int | None = None,
) -> RunManifest:
    """Train on the dataset's train split; returns the written manifest.

    Artifacts in out_dir: pretrain.json, stats.json, metrics.jsonl (one
    JSON object per step plus one per validation epoch), ckpt-last /
    ckpt-best checkpoints. Checkpoints are written atomically; resuming
    from ckpt-last reproduces the uninterrupted run exactly on one worker
    (the schedule horizon comes from cfg.epochs either way).
    stop_after_epoch interrupts the run once that many epochs completed.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    store = SampleStore(dataset_dir)
    split = store.split()
    if not split.train_ids or not split.val_ids:
        raise DataError("dataset needs non-empty train and val splits")

    stats_path = out_dir / "stats.json"
    if stats_path.exists():
        stats = NormalizationStats.from_dict(json.loads(stats_path.read_text()))
    else:
        stats = compute_normalization_stats(store.load(i) for i in split.train_ids)
        stats_path.write_text(json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n")

    probe = store.load(split.train_ids[0])
    grid = model_cfg.grid_for(probe.height, probe.width)
    model = build_autoencoder(model_cfg, derive_seed(cfg.seed, "model"))
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.95), weight_decay=cfg.weight_decay
    )

    steps_per_epoch = math.ceil(len(split.train_ids) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    if cfg.warmup_steps > total_steps:
        raise ConfigError(f"warmup_steps {cfg.warmup_steps} exceeds total steps {total_steps}")

    manifest = RunManifest(
        train_config=asdict(cfg),
        model_config=model_cfg.to_dict(),
        seed=cfg.seed,
        subsystem_seeds={
            "model": derive_seed(cfg.seed, "model"),
            "order": derive_seed(cfg.seed, "order"),
            "mask": derive_seed(cfg.seed, "mask"),
        },
        split_hash=split_hash(
            {"train": split.train_ids, "val": split.val_ids, "test": split.test_ids}
        ),
        dataset_dir=str(dataset_dir),
        metrics_path=str(out_dir / "metrics.jsonl"),
    )
    (out_dir / "pretrain.json").write_text(
        json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n"
    )

    start_epoch = 0
    global_step = 0
    best_val = None
    epochs_since_best = 0
    metrics_path = out_dir / "metrics.jsonl"
    if resume_from is not None:
        meta = load_train_checkpoint(Path(resume_from), model, optimizer)
        start_epoch = int(meta["next_epoch"])
        global_step = int(meta["global_step"])
        best_val = meta.get("best_val")
        epochs_since_best = int(meta.get("epochs_since_best", 0))
        if metrics_path.exists():
            kept = [
                line
                for line in metrics_path.read_text().splitlines()
                if json.loads(line)["step"] <= global_step
            ]
            metrics_path.write_text("".join(l + "\n" for l in kept))
    if not resume_from and metrics_path.exists():
        metrics_path.unlink()

    log_fh = open(metrics_path, "a", encoding="utf-8")

    def log(record: dict) -> None:
        log_fh.write(json.dumps(record, sort_keys=True) + "\n")
        log_fh.flush()

    try:
        for epoch in range(start_epoch, cfg.epochs):
            order = default_rng(derive_seed(cfg.seed, "order", epoch)).permutation(
                len(split.train_ids)
            )
            epoch_ids = [split.train_ids[i] for i in order]
            for start in range(0, len(epoch_ids), cfg.batch_size):
                ids = epoch_ids[start : start + cfg.batch_size]
                samples = [store.load(i) for i in ids]
                values, band_valid, _ = prepare_batch(samples, stats, cfg, epoch, train=True)
                plans = [make_mask_plan(grid, cfg, "train", epoch, i) for i in ids]
                specs = None
                if cfg.freq_selection_prob > 0:
                    specs = [
                        FrequencyFilterSpec(
                            cutoff_fraction=cfg.freq_cutoff,
                            selection_prob=cfg.freq_selection_prob,
                            seed=derive_seed(cfg.seed, "freq", epoch, i),
                        )
                        for i in ids
                    ]
                lr = cosine_lr(global_step, total_steps, cfg.learning_rate, cfg.warmup_steps)
                report = pretrain_step(
                    values,
                    band_valid,
                    ids,
                    model,
                    plans,
                    specs,
                    optimizer,
                    lr,
                    cfg.include_pimask_targets,
                    cfg.debug_target_purity,
                )
                global_step += 1
                log(
                    {
                        "step": global_step,
                        "epoch": epoch,
                        "split": "train",
                        "total": float(report.total.detach()),
                        "spectral": float(report.spectral_term.detach()),
                        "spatial": float(report.spatial_term.detach()),
                        "lr": lr,
                        "m": report.m,
                    }
                )

            val_report = evaluate_validation(
                model, store, split.val_ids, stats, cfg, grid, cfg.batch_size
            )
            log(
                {
                    "step": global_step,
                    "epoch": epoch,
                    "split": "val",
                    "total": float(val_report.total),
                    "spectral": float(val_report.spectral_term),
                    "spatial": float(val_report.spatial_term),
                    "lr": cosine_lr(global_step, total_steps, cfg.learning_rate, cfg.warmup_steps),
                    "m": val_report.m,
                }
            )

            val_loss = float(val_report.total)
            improved = best_val is None or val_loss < best_val * (1.0 - cfg.early_stop_min_improvement)
            if best_val is None or val_loss < best_val:
                best_val = val_loss
                _save_train_checkpoint(
                    out_dir / "ckpt-best.stckpt",
                    model,
                    optimizer,
                    model_cfg,
                    epoch + 1,
                    global_step,
                    best_val,
                    0,
                )
            epochs_since_best = 0 if improved else epochs_since_best + 1
            _save_train_checkpoint(
                out_dir / "ckpt-last.stckpt",
                model,
                optimizer,
                model_cfg,
                epoch + 1,
                global_step,
                best_val,
                epochs_since_best,
            )
            if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                _save_train_checkpoint(
                    out_dir / f"ckpt-epoch{epoch + 1:04d}.stckpt",
                    model,
                    optimizer,
                    model_cfg,
                    epoch + 1,
                    global_step,
                    best_val,
                    epochs_since_best,
                )
            if (
                cfg.early_stop_patience is not None
                and epochs_since_best >= cfg.early_stop_patience
            ):
                break
            if stop_after_epoch is not None and epoch + 1 >= stop_after_epoch:
                break
    finally:
        log_fh.close()
    return manifest
