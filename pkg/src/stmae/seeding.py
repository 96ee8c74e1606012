"""Deterministic seed derivation for per-subsystem RNG streams."""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def derive_seed(*parts) -> int:
    """Map a tuple of values onto a stable 63-bit seed.

    Streams are keyed by content (global seed, purpose tag, sample id, ...),
    never by worker identity, so serial and parallel runs agree.
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def rng_for(*parts) -> np.random.Generator:
    """A numpy generator seeded from :func:`derive_seed` of the parts."""
    return np.random.default_rng(derive_seed(*parts))


def torch_generator_for(*parts) -> torch.Generator:
    gen = torch.Generator(device="cpu")
    gen.manual_seed(derive_seed(*parts))
    return gen


def seed_everything(seed: int) -> None:
    """Seed the global torch/numpy RNGs (process-wide entry points only)."""
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)
