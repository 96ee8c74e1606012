"""On-disk sample format and dataset directories.

A sample is a sidecar JSON manifest plus raw payloads:

    <id>.json        manifest: version, sample_id, shape [T, C, H, W],
                     dtype "f32", byte_order "little", band_valid,
                     timestamps, optional label block
    <id>.values.bin  float32 little-endian, C-order [T, C, H, W]
    <id>.labels.bin  int32 little-endian, C-order [H, W] (when labelled)

A dataset is a directory of samples plus a split manifest (splits.json)
listing ids per split. All writes go through a temp file + rename so
readers never observe partial files.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
import torch

from stmae.data.scene import SceneSample
from stmae.data.split import DatasetSplit
from stmae.errors import ManifestError, TruncatedPayloadError, UnknownVersionError

SAMPLE_FORMAT_VERSION = 1
SPLIT_FORMAT_VERSION = 1


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _dump_json(obj: dict) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8")


def write_sample(directory: str | Path, sample: SceneSample) -> Path:
    """Write one sample; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    values = sample.values.detach().to(torch.float32).contiguous().numpy()
    manifest = {
        "version": SAMPLE_FORMAT_VERSION,
        "sample_id": sample.sample_id,
        "shape": list(values.shape),
        "dtype": "f32",
        "byte_order": "little",
        "band_valid": [bool(b) for b in sample.band_valid],
        "timestamps": list(sample.timestamps),
        "label": None,
    }
    if sample.label_mask is not None:
        manifest["label"] = {
            "dtype": "i32",
            "shape": list(sample.label_mask.shape),
        }
        labels = sample.label_mask.detach().to(torch.int32).contiguous().numpy()
        _atomic_write(directory / f"{sample.sample_id}.labels.bin", labels.astype("<i4").tobytes())
    _atomic_write(directory / f"{sample.sample_id}.values.bin", values.astype("<f4").tobytes())
    manifest_path = directory / f"{sample.sample_id}.json"
    _atomic_write(manifest_path, _dump_json(manifest))
    return manifest_path


def read_sample(manifest_path: str | Path) -> SceneSample:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {manifest_path}: {exc}") from exc
    version = manifest.get("version")
    if version != SAMPLE_FORMAT_VERSION:
        raise UnknownVersionError(f"{manifest_path}: unsupported sample version {version!r}")
    for key in ("sample_id", "shape", "dtype", "byte_order", "band_valid", "timestamps"):
        if key not in manifest:
            raise ManifestError(f"{manifest_path}: missing manifest key {key!r}")
    if manifest["dtype"] != "f32" or manifest["byte_order"] != "little":
        raise ManifestError(
            f"{manifest_path}: unsupported payload encoding "
            f"{manifest['dtype']}/{manifest['byte_order']}"
        )
    shape = tuple(int(s) for s in manifest["shape"])
    if len(shape) != 4 or any(s <= 0 for s in shape):
        raise ManifestError(f"{manifest_path}: bad shape {shape}")
    if len(manifest["band_valid"]) != shape[1]:
        raise ManifestError(f"{manifest_path}: band_valid length != channel count")
    if len(manifest["timestamps"]) != shape[0]:
        raise ManifestError(f"{manifest_path}: timestamp count != frame count")

    sample_id = manifest["sample_id"]
    values_path = manifest_path.with_name(f"{sample_id}.values.bin")
    payload = values_path.read_bytes()
    expected = int(np.prod(shape)) * 4
    if len(payload) != expected:
        raise TruncatedPayloadError(
            f"{values_path}: expected {expected} bytes for shape {shape}, found {len(payload)}"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()

    label_mask = None
    if manifest.get("label"):
        label_info = manifest["label"]
        if label_info.get("dtype") != "i32":
            raise ManifestError(f"{manifest_path}: unsupported label dtype {label_info.get('dtype')!r}")
        lshape = tuple(int(s) for s in label_info["shape"])
        if lshape != (shape[2], shape[3]):
            raise ManifestError(
                f"{manifest_path}: label shape {lshape} does not match values [{shape[2]}, {shape[3]}]"
            )
        labels_path = manifest_path.with_name(f"{sample_id}.labels.bin")
        lpayload = labels_path.read_bytes()
        lexpected = int(np.prod(lshape)) * 4
        if len(lpayload) != lexpected:
            raise TruncatedPayloadError(
                f"{labels_path}: expected {lexpected} bytes, found {len(lpayload)}"
            )
        label_mask = torch.from_numpy(
            np.frombuffer(lpayload, dtype="<i4").reshape(lshape).astype(np.int64)
        )

    return SceneSample(
        values=torch.from_numpy(values),
        band_valid=torch.tensor([bool(b) for b in manifest["band_valid"]], dtype=torch.bool),
        timestamps=tuple(int(t) for t in manifest["timestamps"]),
        sample_id=sample_id,
        label_mask=label_mask,
    )


def write_split(directory: str | Path, split: DatasetSplit) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "splits.json"
    _atomic_write(
        path,
        _dump_json(
            {
                "version": SPLIT_FORMAT_VERSION,
                "seed": split.seed,
                "ratios": list(split.ratios),
                "train": list(split.train_ids),
                "val": list(split.val_ids),
                "test": list(split.test_ids),
            }
        ),
    )
    return path


def read_split(directory: str | Path) -> DatasetSplit:
    path = Path(directory) / "splits.json"
    try:
        blob = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read split manifest {path}: {exc}") from exc
    if blob.get("version") != SPLIT_FORMAT_VERSION:
        raise UnknownVersionError(f"{path}: unsupported split version {blob.get('version')!r}")
    split = DatasetSplit(
        train_ids=tuple(blob["train"]),
        val_ids=tuple(blob["val"]),
        test_ids=tuple(blob["test"]),
        ratios=tuple(blob["ratios"]),
        seed=int(blob["seed"]),
    )
    split.validate()
    return split


class SampleStore:
    """Read access to a dataset directory, with optional in-memory caching."""

    def __init__(self, directory: str | Path, cache: bool = True):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise ManifestError(f"dataset directory {self.directory} does not exist")
        self._cache: dict[str, SceneSample] = {}
        self._use_cache = cache

    def ids(self) -> list[str]:
        return sorted(p.stem for p in self.directory.glob("*.json") if p.name != "splits.json")

    def split(self) -> DatasetSplit:
        return read_split(self.directory)

    def load(self, sample_id: str) -> SceneSample:
        if sample_id in self._cache:
            return self._cache[sample_id]
        sample = read_sample(self.directory / f"{sample_id}.json")
        if self._use_cache:
            self._cache[sample_id] = sample
        return sample
