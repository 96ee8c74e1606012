import pytest
import torch

from stmae.data.io import write_sample, write_split
from stmae.data.split import split_dataset
from stmae.data.synthetic import GeneratorConfig, generate_synthetic_scene
from stmae.model import ModelConfig


@pytest.fixture(scope="session")
def desk_cfg() -> ModelConfig:
    return ModelConfig.desk()


@pytest.fixture(scope="session")
def tiny_cfg() -> ModelConfig:
    return ModelConfig.tiny()


@pytest.fixture(scope="session")
def scene64():
    return generate_synthetic_scene(0, GeneratorConfig())


@pytest.fixture(scope="session")
def mini_dataset(tmp_path_factory):
    """18 synthetic 64px tiles with a 14/3/1 split, written to disk."""
    directory = tmp_path_factory.mktemp("mini-dataset")
    cfg = GeneratorConfig()
    samples = [generate_synthetic_scene(100 + i, cfg) for i in range(18)]
    for sample in samples:
        write_sample(directory, sample)
    write_split(directory, split_dataset([s.sample_id for s in samples], (0.7, 0.2, 0.1), seed=5))
    return directory


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(1234)
