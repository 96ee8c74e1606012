"""Head training with a frozen or fine-tuned encoder.

The encoder runs at full visibility (no masking, no frequency filtering).
With a frozen encoder, stage features are computed once per sample and the
head trains against the cache; parameter hashes before and after certify
that frozen means bitwise-unchanged. Single-timestamp inputs are adapted to
the temporal encoder by cyclic frame repetition and reduced back per stage
via the head's temporal reduction.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from stmae.data.normalize import NormalizationStats, compute_normalization_stats, normalize
from stmae.data.scene import SceneSample
from stmae.downstream.heads import ChangeHead, ClassificationHead, HeadConfig, SegmentationHead
from stmae.downstream.metrics import MetricReport, compute_metrics
from stmae.masking import batch_patch_mask, full_visibility_plan, patchify
from stmae.model import HybridEncoder, ModelConfig
from stmae.model.encoder import TokenMap
from stmae.seeding import derive_seed


@dataclass
class FinetuneResult:
    metrics: MetricReport
    train_metrics: MetricReport
    head_state: dict
    encoder_state: dict
    encoder_hash_before: str
    encoder_hash_after: str


def parameter_hash(module: nn.Module) -> str:
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def adapt_frames(values: torch.Tensor, target_frames: int) -> torch.Tensor:
    """[T, C, H, W] -> [target_frames, C, H, W] by cyclic repetition/truncation."""
    t = values.shape[0]
    if t == target_frames:
        return values
    index = torch.arange(target_frames) % t
    return values[index]


def encode_for_downstream(
    encoder: HybridEncoder, values: torch.Tensor, grid
) -> list[TokenMap]:
    """Full-visibility encoding of [B, T, C, H, W] pixels."""
    plans = [full_visibility_plan(grid)] * values.shape[0]
    patches = patchify(values, grid)
    return encoder(patches, batch_patch_mask(plans), grid)


def _build_head(cfg: HeadConfig, model_cfg: ModelConfig, seed: int) -> nn.Module:
    stage_dims = [model_cfg.stage_dim(s) for s in range(4)]
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        if cfg.task == "segmentation":
            return SegmentationHead(stage_dims, cfg.num_classes, cfg.hidden, cfg.temporal_reduce)
        if cfg.task == "classification":
            return ClassificationHead(stage_dims[3], cfg.num_classes, cfg.temporal_reduce)
        return ChangeHead(stage_dims, cfg.hidden, cfg.temporal_reduce)


def _class_weights(labels: torch.Tensor, num_classes: int) -> torch.Tensor:
    counts = torch.bincount(labels.reshape(-1), minlength=num_classes).float()
    weights = counts.sum() / (num_classes * counts.clamp_min(1.0))
    return weights


def _prepare_values(
    samples: list[SceneSample], stats: NormalizationStats, frames: int
) -> torch.Tensor:
    return torch.stack([adapt_frames(normalize(s, stats).values, frames) for s in samples])


class _TaskData:
    """Normalized tensors + targets for one split of one task."""

    def __init__(self, task: str, data, stats: NormalizationStats, frames: int):
        self.task = task
        if task == "segmentation":
            samples = list(data)
            if any(s.label_mask is None for s in samples):
                raise ValueError("segmentation samples need label masks")
            self.values = _prepare_values(samples, stats, frames)
            self.targets = torch.stack([s.label_mask for s in samples])
        elif task == "classification":
            samples = [s for s, _ in data]
            self.values = _prepare_values(samples, stats, frames)
            self.targets = torch.tensor([int(label) for _, label in data], dtype=torch.long)
        else:  # change
            before = [a for a, _, _ in data]
            after = [b for _, b, _ in data]
            self.values = _prepare_values(before, stats, frames)
            self.values_b = _prepare_values(after, stats, frames)
            self.targets = torch.stack([m.long() for _, _, m in data])

    def __len__(self) -> int:
        return self.values.shape[0]


def _collect_samples(task: str, data) -> list[SceneSample]:
    if task == "segmentation":
        return list(data)
    if task == "classification":
        return [s for s, _ in data]
    return [a for a, _, _ in data] + [b for _, b, _ in data]


def _head_logits(
    head: nn.Module,
    cfg: HeadConfig,
    encoder: HybridEncoder,
    grid,
    data: _TaskData,
    index: torch.Tensor,
    frozen_cache: dict | None,
    cache_key: str,
) -> torch.Tensor:
    out_hw = (grid.height, grid.width)

    def features_of(values: torch.Tensor, key: str) -> list[TokenMap]:
        if frozen_cache is not None:
            if key not in frozen_cache:
                with torch.no_grad():
                    frozen_cache[key] = encode_for_downstream(encoder, values, grid)
            feats = frozen_cache[key]
            return [TokenMap(f.tensor[index], f.stage) for f in feats]
        return encode_for_downstream(encoder, values[index], grid)

    if cfg.task == "change":
        fa = features_of(data.values, cache_key + ":a")
        fb = features_of(data.values_b, cache_key + ":b")
        return head(fa, fb, out_hw)
    feats = features_of(data.values, cache_key)
    if cfg.task == "segmentation":
        return head(feats, out_hw)
    return head(feats)


@torch.no_grad()
def evaluate_head(
    cfg: HeadConfig,
    model_cfg: ModelConfig,
    encoder: HybridEncoder,
    head_state: dict,
    eval_data,
    stats: NormalizationStats | None = None,
    batch_size: int = 8,
) -> MetricReport:
    """Metrics for a trained head on one dataset (stats default to eval stats)."""
    cfg.validate()
    samples = _collect_samples(cfg.task, eval_data)
    if not samples:
        raise ValueError("empty evaluation data")
    if stats is None:
        stats = compute_normalization_stats(iter(samples))
    grid = model_cfg.grid_for(samples[0].height, samples[0].width)
    data = _TaskData(cfg.task, eval_data, stats, model_cfg.frames)
    head = _build_head(cfg, model_cfg, seed=0)
    head.load_state_dict(head_state)
    head.eval()
    encoder.eval()
    logits_parts = []
    for start in range(0, len(data), batch_size):
        index = torch.arange(len(data))[start : start + batch_size]
        logits_parts.append(_head_logits(head, cfg, encoder, grid, data, index, None, "eval"))
    logits = torch.cat(logits_parts, dim=0)
    if cfg.task == "classification":
        scores = logits.softmax(dim=-1)
        preds = logits.argmax(dim=-1)
        num_classes = cfg.num_classes
    else:
        scores = logits.softmax(dim=1).permute(0, 2, 3, 1)
        preds = logits.argmax(dim=1)
        num_classes = 2 if cfg.task == "change" else cfg.num_classes
    return compute_metrics(preds, data.targets, task=cfg.task, scores=scores, num_classes=num_classes)


def finetune(
    cfg: HeadConfig,
    model_cfg: ModelConfig,
    encoder: HybridEncoder,
    train_data,
    eval_data,
    steps: int = 300,
    batch_size: int = 8,
    lr: float = 1e-3,
    weight_decay: float = 0.0,
    seed: int = 0,
    class_weighting: bool = False,
) -> FinetuneResult:
    """Train a task head (and optionally the encoder); evaluate on eval_data.

    train_data / eval_data formats:
      segmentation:   [SceneSample with label_mask, ...]
      classification: [(SceneSample, class_id), ...]
      change:         [(before, after, bool change mask [H, W]), ...]
    """
    cfg.validate()
    train_samples = _collect_samples(cfg.task, train_data)
    if not train_samples:
        raise ValueError("empty training data")
    stats = compute_normalization_stats(iter(train_samples))
    probe = train_samples[0]
    grid = model_cfg.grid_for(probe.height, probe.width)
    train = _TaskData(cfg.task, train_data, stats, model_cfg.frames)
    heldout = _TaskData(cfg.task, eval_data, stats, model_cfg.frames)

    head = _build_head(cfg, model_cfg, derive_seed(seed, "head"))
    hash_before = parameter_hash(encoder)
    if cfg.encoder_frozen:
        encoder.eval()
        params = list(head.parameters())
        frozen_cache: dict | None = {}
    else:
        encoder.train()
        params = list(head.parameters()) + list(encoder.parameters())
        frozen_cache = None
    optimizer = torch.optim.AdamW(params, lr=lr, weight_decay=weight_decay)

    weights = None
    if class_weighting:
        weights = _class_weights(train.targets, cfg.num_classes if cfg.task != "change" else 2)

    order_gen = torch.Generator().manual_seed(derive_seed(seed, "order"))
    n = len(train)
    for _ in range(steps):
        index = torch.randperm(n, generator=order_gen)[: min(batch_size, n)]
        logits = _head_logits(head, cfg, encoder, grid, train, index, frozen_cache, "train")
        loss = F.cross_entropy(logits, train.targets[index], weight=weights)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()

    hash_after = parameter_hash(encoder)
    if cfg.encoder_frozen and hash_before != hash_after:
        raise RuntimeError("frozen encoder changed during fine-tuning")

    head.eval()
    encoder.eval()
    results = []
    with torch.no_grad():
        for data, key in ((train, "train"), (heldout, "heldout")):
            all_index = torch.arange(len(data))
            logits_parts = []
            for start in range(0, len(data), batch_size):
                index = all_index[start : start + batch_size]
                logits_parts.append(
                    _head_logits(head, cfg, encoder, grid, data, index, frozen_cache, key)
                )
            logits = torch.cat(logits_parts, dim=0)
            if cfg.task == "classification":
                scores = logits.softmax(dim=-1)
                preds = logits.argmax(dim=-1)
                num_classes = cfg.num_classes
            else:
                scores = logits.softmax(dim=1).permute(0, 2, 3, 1)
                preds = logits.argmax(dim=1)
                num_classes = 2 if cfg.task == "change" else cfg.num_classes
            results.append(
                compute_metrics(
                    preds,
                    data.targets,
                    task=cfg.task,
                    scores=scores,
                    num_classes=num_classes,
                )
            )
    train_metrics, eval_metrics = results
    return FinetuneResult(
        metrics=eval_metrics,
        train_metrics=train_metrics,
        head_state={k: v.detach().clone() for k, v in head.state_dict().items()},
        encoder_state={k: v.detach().clone() for k, v in encoder.state_dict().items()},
        encoder_hash_before=hash_before,
        encoder_hash_after=hash_after,
    )
