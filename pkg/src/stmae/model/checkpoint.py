"""Versioned binary checkpoint container.

Layout: magic bytes, u32 little-endian header length, UTF-8 JSON header,
then raw little-endian tensor payloads concatenated in header order. The
header carries a format version, free-form metadata (config echo, patch
flattening contract, training state), and a name -> (dtype, shape) table.
Loading rejects unknown versions and truncated payloads; model loading
rejects checkpoints whose parameter table disagrees with the requested
configuration, reporting the differing entries.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

from stmae.errors import CheckpointMismatchError, TruncatedPayloadError, UnknownVersionError
from stmae.model.config import ModelConfig

MAGIC = b"STMCKPT1"
CHECKPOINT_VERSION = 1

PATCH_ORDER_CONTRACT = "band-within-group,row,column"
_DTYPES = {
    "f32": (np.dtype("<f4"), torch.float32),
    "f64": (np.dtype("<f8"), torch.float64),
    "i64": (np.dtype("<i8"), torch.int64),
    "u8": (np.dtype("u1"), torch.uint8),
}
_TORCH_TO_TAG = {torch_dtype: tag for tag, (_, torch_dtype) in _DTYPES.items()}


def save_checkpoint(path: str | Path, tensors: dict[str, torch.Tensor], meta: dict) -> None:
    """Atomically write tensors + metadata."""
    path = Path(path)
    entries = []
    payloads = []
    for name, tensor in tensors.items():
        t = tensor.detach().contiguous().cpu()
        tag = _TORCH_TO_TAG.get(t.dtype)
        if tag is None:
            raise ValueError(f"unsupported tensor dtype {t.dtype} for {name!r}")
        entries.append({"name": name, "dtype": tag, "shape": list(t.shape)})
        payloads.append(t.numpy().astype(_DTYPES[tag][0], copy=False).tobytes())
    header = json.dumps(
        {"version": CHECKPOINT_VERSION, "meta": meta, "tensors": entries},
        sort_keys=True,
    ).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in payloads:
            fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise UnknownVersionError(f"{path}: not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack_from("<I", blob, len(MAGIC))
    start = len(MAGIC) + 4
    header = json.loads(blob[start : start + header_len].decode("utf-8"))
    if header.get("version") != CHECKPOINT_VERSION:
        raise UnknownVersionError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
    offset = start + header_len
    tensors: dict[str, torch.Tensor] = {}
    for entry in header["tensors"]:
        np_dtype, torch_dtype = _DTYPES[entry["dtype"]]
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * np_dtype.itemsize if shape else np_dtype.itemsize
        chunk = blob[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise TruncatedPayloadError(
                f"{path}: tensor {entry['name']!r} needs {nbytes} bytes, found {len(chunk)}"
            )
        array = np.frombuffer(chunk, dtype=np_dtype).reshape(shape).copy()
        tensors[entry["name"]] = torch.from_numpy(array).to(torch_dtype)
        offset += nbytes
    if offset != len(blob):
        raise TruncatedPayloadError(f"{path}: {len(blob) - offset} trailing bytes after payloads")
    return tensors, header["meta"]


def config_diff(stored_cfg: dict, requested: dict) -> dict:
    return {
        key: (stored_cfg.get(key), requested[key])
        for key in requested
        if stored_cfg.get(key) != requested[key]
    }


def load_autoencoder(path: str | Path, model_cfg: ModelConfig | None = None):
    """Restore a MaskedAutoencoder from a model or training checkpoint.

    Training checkpoints prefix model tensors with "model."; optimizer
    tensors are ignored here. Passing model_cfg asserts compatibility with
    the stored config echo.
    """
    from stmae.model.autoencoder import MaskedAutoencoder

    tensors, meta = load_checkpoint(path)
    if meta.get("patch_order") != PATCH_ORDER_CONTRACT:
        raise CheckpointMismatchError(
            f"{path}: patch order {meta.get('patch_order')!r} != {PATCH_ORDER_CONTRACT!r}"
        )
    stored = meta.get("config", {})
    if model_cfg is not None:
        diffs = config_diff(stored, model_cfg.to_dict())
        if diffs:
            detail = ", ".join(
                f"{k}: stored {a!r} != requested {b!r}" for k, (a, b) in sorted(diffs.items())
            )
            raise CheckpointMismatchError(f"{path}: config mismatch ({detail})")
        cfg = model_cfg
    else:
        cfg = ModelConfig.from_dict(stored)
    model = MaskedAutoencoder(cfg)
    if any(name.startswith("model.") for name in tensors):
        state = {k[len("model.") :]: v for k, v in tensors.items() if k.startswith("model.")}
    else:
        state = tensors
    expected = model.state_dict()
    table_diffs = [name for name in expected if name not in state] + [
        name for name in state if name not in expected
    ]
    for name in expected:
        if name in state and tuple(state[name].shape) != tuple(expected[name].shape):
            table_diffs.append(name)
    if table_diffs:
        raise CheckpointMismatchError(
            f"{path}: parameter table mismatch ({', '.join(sorted(set(table_diffs)))})"
        )
    model.load_state_dict(state)
    return model, meta


def save_model_checkpoint(path: str | Path, model: torch.nn.Module, cfg: ModelConfig, extra_meta: dict | None = None) -> None:
    meta = {
        "kind": "model",
        "config": cfg.to_dict(),
        "patch_order": PATCH_ORDER_CONTRACT,
    }
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, dict(model.state_dict()), meta)


def load_model_checkpoint(path: str | Path, model: torch.nn.Module, cfg: ModelConfig) -> dict:
    """Load parameters into model, verifying config echo and shape table."""
    tensors, meta = load_checkpoint(path)
    if meta.get("patch_order") != PATCH_ORDER_CONTRACT:
        raise CheckpointMismatchError(
            f"{path}: patch order {meta.get('patch_order')!r} != {PATCH_ORDER_CONTRACT!r}"
        )
    diffs = config_diff(meta.get("config", {}), cfg.to_dict())
    if diffs:
        detail = ", ".join(f"{k}: stored {a!r} != requested {b!r}" for k, (a, b) in sorted(diffs.items()))
        raise CheckpointMismatchError(f"{path}: config mismatch ({detail})")
    state = model.state_dict()
    table_diffs = []
    for name, tensor in state.items():
        if name not in tensors:
            table_diffs.append(f"missing {name}")
        elif tuple(tensors[name].shape) != tuple(tensor.shape):
            table_diffs.append(
                f"{name}: stored {tuple(tensors[name].shape)} != expected {tuple(tensor.shape)}"
            )
    for name in tensors:
        if name not in state:
            table_diffs.append(f"unexpected {name}")
    if table_diffs:
        raise CheckpointMismatchError(f"{path}: parameter table mismatch ({'; '.join(table_diffs)})")
    model.load_state_dict(tensors)
    return meta
