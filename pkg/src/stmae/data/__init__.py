from stmae.data.scene import SceneSample, pad_spectral_channels, tile_scene
from stmae.data.synthetic import (
    ClassSpec,
    GeneratorConfig,
    generate_change_pair,
    generate_labeled_tile,
    generate_synthetic_scene,
)
from stmae.data.augment import AugmentationParams, augment, sample_augmentation_params
from stmae.data.split import DatasetSplit, split_dataset
from stmae.data.normalize import NormalizationStats, compute_normalization_stats, denormalize, normalize
from stmae.data.io import (
    SampleStore,
    read_sample,
    read_split,
    write_sample,
    write_split,
)

__all__ = [
    "SceneSample",
    "pad_spectral_channels",
    "tile_scene",
    "ClassSpec",
    "GeneratorConfig",
    "generate_synthetic_scene",
    "generate_change_pair",
    "generate_labeled_tile",
    "AugmentationParams",
    "augment",
    "sample_augmentation_params",
    "DatasetSplit",
    "split_dataset",
    "NormalizationStats",
    "compute_normalization_stats",
    "normalize",
    "denormalize",
    "SampleStore",
    "read_sample",
    "write_sample",
    "read_split",
    "write_split",
]
