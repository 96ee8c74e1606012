"""Command-line entry point.

Subcommands: synth-data, pretrain, finetune, evaluate, reconstruct,
grad-check. One hierarchical JSON config file (see runconfig.DEFAULTS for
the schema) drives every command, with --set dotted overrides and a single
--seed controlling all randomness. Every command writes a run manifest
(run.json: command, seed, full config echo) into its output directory
before doing work, so artifact directories are self-describing.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

Dataset layouts produced by synth-data:
  pretraining:     tiles cut from scenes, scene-level splits
  classification:  single-label tiles (label = the tile's class mask)
  change:          pairs <id>-before / <id>-after; the after sample's label
                   mask holds the binary change labels; splits list base ids
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import traceback
from pathlib import Path

import numpy as np
import torch

import stmae
from stmae.data.io import SampleStore, write_sample, write_split
from stmae.data.scene import SceneSample, tile_scene
from stmae.data.split import DatasetSplit, split_dataset
from stmae.data.synthetic import (
    GeneratorConfig,
    generate_change_pair,
    generate_labeled_tile,
    generate_synthetic_scene,
)
from stmae.downstream import HeadConfig, evaluate_head, finetune
from stmae.errors import ConfigError, DataError, NumericError
from stmae.model import ModelConfig
from stmae.model.checkpoint import load_autoencoder, load_checkpoint, save_checkpoint
from stmae.pretraining import TrainConfig, gradient_check, run_pretraining
from stmae.pretraining.reconstruct import reconstruct_first_batch
from stmae.runconfig import load_config
from stmae.seeding import derive_seed

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _model_config(config: dict) -> ModelConfig:
    try:
        return ModelConfig.from_dict(config["model"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model config: {exc}") from exc


def _train_config(config: dict) -> TrainConfig:
    try:
        cfg = TrainConfig(seed=config["seed"], **config["train"])
    except TypeError as exc:
        raise ConfigError(f"invalid train config: {exc}") from exc
    cfg.validate()
    return cfg


def _generator_config(config: dict, **overrides) -> GeneratorConfig:
    section = dict(config["data"]["generator"])
    section.update(overrides)
    try:
        gen = GeneratorConfig(**section)
        gen.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid generator config: {exc}") from exc
    return gen


def _write_run_manifest(out_dir: Path, command: str, config: dict, extra: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "package_version": stmae.__version__,
        "seed": config["seed"],
        "config": config,
    }
    if extra:
        manifest.update(extra)
    (out_dir / "run.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_synth_data(config: dict, out_dir: Path) -> int:
    data_cfg = config["data"]
    seed = config["seed"]
    _write_run_manifest(out_dir, "synth-data", config)
    task = data_cfg["task"]
    if task == "pretraining":
        gen = _generator_config(
            config, height=data_cfg["scene_size"], width=data_cfg["scene_size"]
        )
        scenes = [
            generate_synthetic_scene(derive_seed(seed, "scene", i), gen)
            for i in range(data_cfg["n_scenes"])
        ]
        split = split_dataset(
            [s.sample_id for s in scenes], tuple(data_cfg["ratios"]), derive_seed(seed, "split")
        )
        tiles_by_split: dict[str, list[str]] = {"train": [], "val": [], "test": []}
        for scene in scenes:
            tiles = tile_scene(scene, data_cfg["tile_size"], data_cfg["stride"])
            bucket = split.split_of(scene.sample_id)
            for tile in tiles:
                write_sample(out_dir, tile)
                tiles_by_split[bucket].append(tile.sample_id)
        write_split(
            out_dir,
            DatasetSplit(
                train_ids=tuple(tiles_by_split["train"]),
                val_ids=tuple(tiles_by_split["val"]),
                test_ids=tuple(tiles_by_split["test"]),
                ratios=tuple(data_cfg["ratios"]),
                seed=seed,
            ),
        )
        n = sum(len(v) for v in tiles_by_split.values())
        print(f"wrote {n} tiles from {len(scenes)} scenes to {out_dir}")
        return EXIT_OK
    if task == "classification":
        gen = _generator_config(
            config, height=data_cfg["tile_size"], width=data_cfg["tile_size"]
        )
        ids = []
        for i in range(data_cfg["n_tiles"]):
            sample, _ = generate_labeled_tile(
                derive_seed(seed, "tile", i), gen, i % len(gen.classes)
            )
            write_sample(out_dir, sample)
            ids.append(sample.sample_id)
        write_split(out_dir, split_dataset(ids, tuple(data_cfg["ratios"]), derive_seed(seed, "split")))
        print(f"wrote {len(ids)} labeled tiles to {out_dir}")
        return EXIT_OK
    if task == "change":
        gen = _generator_config(
            config, height=data_cfg["tile_size"], width=data_cfg["tile_size"]
        )
        base_ids = []
        for i in range(data_cfg["n_tiles"]):
            before, after, change = generate_change_pair(derive_seed(seed, "pair", i), gen)
            base = f"pair-{i:05d}"
            before.sample_id = f"{base}-before"
            after.sample_id = f"{base}-after"
            after.label_mask = change.long()
            write_sample(out_dir, before)
            write_sample(out_dir, after)
            base_ids.append(base)
        write_split(
            out_dir, split_dataset(base_ids, tuple(data_cfg["ratios"]), derive_seed(seed, "split"))
        )
        print(f"wrote {len(base_ids)} change pairs to {out_dir}")
        return EXIT_OK
    raise ConfigError(f"unknown data task {task!r}")


def cmd_pretrain(config: dict, data_dir: Path, out_dir: Path, resume: Path | None) -> int:
    _write_run_manifest(out_dir, "pretrain", config, {"data_dir": str(data_dir)})
    manifest = run_pretraining(
        _train_config(config), _model_config(config), data_dir, out_dir, resume_from=resume
    )
    print(f"pretraining finished; metrics at {manifest.metrics_path}")
    return EXIT_OK


def _majority_label(sample: SceneSample) -> int:
    if sample.label_mask is None:
        raise DataError(f"sample {sample.sample_id} has no label mask")
    return int(torch.bincount(sample.label_mask.reshape(-1)).argmax())


def _task_data(task: str, store: SampleStore, ids: tuple[str, ...]):
    if task == "segmentation":
        return [store.load(i) for i in ids]
    if task == "classification":
        samples = [store.load(i) for i in ids]
        return [(s, _majority_label(s)) for s in samples]
    pairs = []
    for base in ids:
        before = store.load(f"{base}-before")
        after = store.load(f"{base}-after")
        if after.label_mask is None:
            raise DataError(f"pair {base} lacks change labels")
        pairs.append((before, after, after.label_mask.bool()))
    return pairs


def _head_config(config: dict) -> HeadConfig:
    section = config["finetune"]
    cfg = HeadConfig(
        task=section["task"],
        num_classes=section["num_classes"],
        hidden=section["hidden"],
        encoder_frozen=section["encoder_frozen"],
        temporal_reduce=section["temporal_reduce"],
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def cmd_finetune(config: dict, data_dir: Path, checkpoint: Path, out_dir: Path) -> int:
    _write_run_manifest(
        out_dir, "finetune", config, {"data_dir": str(data_dir), "checkpoint": str(checkpoint)}
    )
    section = config["finetune"]
    head_cfg = _head_config(config)
    model_cfg = _model_config(config)
    autoencoder, _ = load_autoencoder(checkpoint, model_cfg)
    store = SampleStore(data_dir)
    split = store.split()
    train_ids = list(split.train_ids)
    fraction = section["train_fraction"]
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"train_fraction must be in (0, 1], got {fraction}")
    if fraction < 1.0:
        keep = max(1, int(round(fraction * len(train_ids))))
        order = np.random.default_rng(derive_seed(config["seed"], "fraction")).permutation(
            len(train_ids)
        )
        train_ids = [train_ids[i] for i in order[:keep]]
    train_data = _task_data(head_cfg.task, store, tuple(train_ids))
    eval_data = _task_data(head_cfg.task, store, split.val_ids or split.test_ids)
    result = finetune(
        head_cfg,
        model_cfg,
        autoencoder.encoder,
        train_data,
        eval_data,
        steps=section["steps"],
        batch_size=section["batch_size"],
        lr=section["lr"],
        weight_decay=section["weight_decay"],
        seed=config["seed"],
        class_weighting=section["class_weighting"],
    )
    save_checkpoint(
        out_dir / "head.stckpt",
        result.head_state,
        {
            "kind": "head",
            "head_config": {
                "task": head_cfg.task,
                "num_classes": head_cfg.num_classes,
                "hidden": head_cfg.hidden,
                "encoder_frozen": head_cfg.encoder_frozen,
                "temporal_reduce": head_cfg.temporal_reduce,
            },
            "config": model_cfg.to_dict(),
        },
    )
    if not head_cfg.encoder_frozen:
        save_checkpoint(
            out_dir / "encoder.stckpt",
            {f"model.encoder.{k}": v for k, v in result.encoder_state.items()},
            {"kind": "encoder", "config": model_cfg.to_dict(), "patch_order": "band-within-group,row,column"},
        )
    (out_dir / "metrics.json").write_text(result.metrics.to_json() + "\n")
    (out_dir / "metrics.txt").write_text(result.metrics.to_table() + "\n")
    print(result.metrics.to_table())
    print(f"frozen encoder: {head_cfg.encoder_frozen} "
          f"(hash unchanged: {result.encoder_hash_before == result.encoder_hash_after})")
    return EXIT_OK


def cmd_evaluate(config: dict, data_dir: Path, checkpoint: Path, head_path: Path, out_dir: Path) -> int:
    _write_run_manifest(
        out_dir,
        "evaluate",
        config,
        {"data_dir": str(data_dir), "checkpoint": str(checkpoint), "head": str(head_path)},
    )
    model_cfg = _model_config(config)
    autoencoder, _ = load_autoencoder(checkpoint, model_cfg)
    head_state, head_meta = load_checkpoint(head_path)
    stored = head_meta.get("head_config", {})
    head_cfg = HeadConfig(
        task=stored["task"],
        num_classes=stored["num_classes"],
        hidden=stored["hidden"],
        encoder_frozen=stored["encoder_frozen"],
        temporal_reduce=stored["temporal_reduce"],
    )
    store = SampleStore(data_dir)
    split = store.split()
    eval_ids = split.test_ids or split.val_ids
    data = _task_data(head_cfg.task, store, eval_ids)
    report = evaluate_head(head_cfg, model_cfg, autoencoder.encoder, head_state, data)
    (out_dir / "metrics.json").write_text(report.to_json() + "\n")
    (out_dir / "metrics.txt").write_text(report.to_table() + "\n")
    print(report.to_table())
    return EXIT_OK


def cmd_reconstruct(config: dict, data_dir: Path, out_dir: Path, checkpoint: Path | None) -> int:
    _write_run_manifest(
        out_dir,
        "reconstruct",
        config,
        {"data_dir": str(data_dir), "checkpoint": None if checkpoint is None else str(checkpoint)},
    )
    summary = reconstruct_first_batch(
        _train_config(config),
        _model_config(config),
        data_dir,
        out_dir,
        checkpoint=checkpoint,
        n_images=config["reconstruct"]["n_samples"],
    )
    loss = summary["loss"]
    if not math.isfinite(loss["total"]):
        raise NumericError(f"non-finite reconstruction loss: {loss}")
    print(f"reconstruction loss total={loss['total']:.6f} "
          f"(spectral {loss['spectral']:.6f}, spatial {loss['spatial']:.6f}); "
          f"{len(summary['images'])} images in {out_dir}")
    return EXIT_OK


def cmd_grad_check(config: dict, out_dir: Path) -> int:
    _write_run_manifest(out_dir, "grad-check", config)
    section = config["gradcheck"]
    report = gradient_check(
        ModelConfig.tiny(),
        seed=config["seed"],
        n_coordinates=section["n_coordinates"],
        step=section["step"],
        threshold=section["threshold"],
    )
    (out_dir / "gradcheck.json").write_text(
        json.dumps(
            {
                "max_rel_error": report.max_rel_error,
                "n_coordinates": report.n_coordinates,
                "threshold": report.threshold,
                "passed": report.passed,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stmae", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=stmae.__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, data: bool = False) -> None:
        p.add_argument("--config", type=Path, default=None, help="JSON config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="dotted config override")
        p.add_argument("--seed", type=int, default=None, help="override the global seed")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        if data:
            p.add_argument("--data", type=Path, required=True, help="dataset directory")

    common(sub.add_parser("synth-data", help="generate a synthetic dataset directory"))
    p = sub.add_parser("pretrain", help="self-supervised pretraining")
    common(p, data=True)
    p.add_argument("--resume", type=Path, default=None, help="resume from a training checkpoint")
    p = sub.add_parser("finetune", help="train a downstream head")
    common(p, data=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p = sub.add_parser("evaluate", help="evaluate a trained head on the test split")
    common(p, data=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--head", type=Path, required=True)
    p = sub.add_parser("reconstruct", help="render input/masked/reconstruction triptychs")
    common(p, data=True)
    p.add_argument("--checkpoint", type=Path, default=None)
    common(sub.add_parser("grad-check", help="finite-difference gradient verification"))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, args.overrides, args.seed)
        if args.command == "synth-data":
            return cmd_synth_data(config, args.out)
        if args.command == "pretrain":
            return cmd_pretrain(config, args.data, args.out, args.resume)
        if args.command == "finetune":
            return cmd_finetune(config, args.data, args.checkpoint, args.out)
        if args.command == "evaluate":
            return cmd_evaluate(config, args.data, args.checkpoint, args.head, args.out)
        if args.command == "reconstruct":
            return cmd_reconstruct(config, args.data, args.out, args.checkpoint)
        if args.command == "grad-check":
            return cmd_grad_check(config, args.out)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
