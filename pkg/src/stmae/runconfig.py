"""Hierarchical run configuration with CLI overrides.

One JSON config file drives every command; sections default sensibly and
unknown keys are rejected so a run manifest always reflects a complete,
validated configuration. Overrides use dotted paths (``train.epochs=5``)
with JSON-parsed values.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from stmae.errors import ConfigError

DEFAULTS: dict = {
    "seed": 0,
    "data": {
        "task": "pretraining",        # pretraining | classification | change
        "n_scenes": 8,
        "scene_size": 192,
        "tile_size": 64,
        "stride": 64,
        "ratios": [0.7, 0.2, 0.1],
        "n_tiles": 40,                # classification / change sample count
        "generator": {
            "channels": 6,
            "frames": 6,
            "n_regions": 8,
            "region_snap": None,
            "noise_sigma": 0.01,
        },
    },
    "model": {
        "embed_dim": 8,
        "depths": [1, 1, 1, 1],
        "num_heads": [1, 1, 2, 2],
        "attention_window": 8,
        "shift": 4,
        "patch_size": 4,
        "group_size": 2,
        "frames": 6,
        "channels": 6,
        "mask_window": [6, 8, 8],
        "hf_kernel": 3,
        "hf_bottleneck_ratio": 0.25,
        "ffn_ratio": 4,
    },
    "train": {
        "epochs": 50,
        "batch_size": 16,
        "base_lr": None,
        "warmup_steps": 40,
        "weight_decay": 0.05,
        "mask_ratio": 0.75,
        "pimask_fraction": 0.25,
        "freq_cutoff": 0.25,
        "freq_selection_prob": 0.5,
        "augment": False,
        "include_pimask_targets": False,
        "checkpoint_every": 0,
        "early_stop_patience": None,
        "early_stop_min_improvement": 0.005,
        "debug_target_purity": False,
    },
    "finetune": {
        "task": "classification",
        "num_classes": 6,
        "hidden": 256,
        "encoder_frozen": True,
        "temporal_reduce": "mean",
        "steps": 200,
        "batch_size": 16,
        "lr": 0.01,
        "weight_decay": 0.0,
        "class_weighting": False,
        "train_fraction": 1.0,
    },
    "reconstruct": {
        "n_samples": 4,
    },
    "gradcheck": {
        "n_coordinates": 200,
        "step": 1e-3,
        "threshold": 1e-4,
    },
}


def _check_unknown(user: dict, defaults: dict, prefix: str = "") -> None:
    for key, value in user.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {prefix + key!r}")
        if isinstance(defaults[key], dict) and defaults[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {prefix + key!r} must be a section")
            _check_unknown(value, defaults[key], prefix + key + ".")


def _deep_merge(base: dict, user: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in user.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    path, _, raw = text.partition("=")
    keys = [k for k in path.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"override {text!r} has an empty key path")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return keys, value


def apply_override(config: dict, keys: list[str], value) -> None:
    node = config
    for key in keys[:-1]:
        if key not in node or not isinstance(node[key], dict):
            raise ConfigError(f"unknown config section {'.'.join(keys[:-1])!r}")
        node = node[key]
    if keys[-1] not in node:
        raise ConfigError(f"unknown config key {'.'.join(keys)!r}")
    node[keys[-1]] = value


def load_config(path: str | Path | None, overrides: list[str] | None = None, seed: int | None = None) -> dict:
    """Defaults, then file, then --set overrides, then --seed."""
    user = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        try:
            user = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"config file {p} must hold a JSON object")
    _check_unknown(user, DEFAULTS)
    config = _deep_merge(DEFAULTS, user)
    for text in overrides or []:
        keys, value = parse_override(text)
        apply_override(config, keys, value)
    if seed is not None:
        config["seed"] = seed
    return config
