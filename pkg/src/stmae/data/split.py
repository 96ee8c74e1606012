"""Scene-level dataset splitting.

Splitting happens at scene granularity before tiling so tiles from one
scene never straddle split boundaries (splits cover separate areas).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DatasetSplit:
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    ratios: tuple[float, float, float]
    seed: int

    def validate(self) -> None:
        train, val, test = set(self.train_ids), set(self.val_ids), set(self.test_ids)
        if train & val or train & test or val & test:
            raise ValueError("split id sets overlap")
        total = len(self.train_ids) + len(self.val_ids) + len(self.test_ids)
        if len(train | val | test) != total:
            raise ValueError("duplicate ids within a split")

    def split_of(self, sample_id: str) -> str:
        if sample_id in set(self.train_ids):
            return "train"
        if sample_id in set(self.val_ids):
            return "val"
        if sample_id in set(self.test_ids):
            return "test"
        raise KeyError(sample_id)


def split_dataset(
    scene_ids: list[str] | tuple[str, ...],
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1),
    seed: int = 0,
) -> DatasetSplit:
    """Shuffle by seed and allocate counts by floor, remainder to train.

    val and test get floor(ratio * n) scenes each; train absorbs the rest,
    so e.g. 10 scenes at (0.7, 0.2, 0.1) split 7/2/1.
    """
    if not scene_ids:
        raise ValueError("scene_ids is empty")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    if any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be non-negative, got {ratios}")
    ids = list(scene_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("scene_ids contains duplicates")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n = len(ids)
    n_val = math.floor(ratios[1] * n)
    n_test = math.floor(ratios[2] * n)
    n_train = n - n_val - n_test
    split = DatasetSplit(
        train_ids=tuple(shuffled[:n_train]),
        val_ids=tuple(shuffled[n_train : n_train + n_val]),
        test_ids=tuple(shuffled[n_train + n_val :]),
        ratios=tuple(ratios),
        seed=seed,
    )
    split.validate()
    return split
