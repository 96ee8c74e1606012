from stmae.model.config import ModelConfig
from stmae.model.autoencoder import MaskedAutoencoder, build_autoencoder
from stmae.model.encoder import HybridEncoder, TokenMap, fuse, param_count
from stmae.model.checkpoint import load_checkpoint, save_checkpoint, save_model_checkpoint, load_model_checkpoint

__all__ = [
    "ModelConfig",
    "MaskedAutoencoder",
    "build_autoencoder",
    "HybridEncoder",
    "TokenMap",
    "fuse",
    "param_count",
    "save_checkpoint",
    "load_checkpoint",
    "save_model_checkpoint",
    "load_model_checkpoint",
]
