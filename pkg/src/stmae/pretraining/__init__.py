from stmae.pretraining.loop import TrainConfig, RunManifest, pretrain_step, run_pretraining
from stmae.pretraining.gradcheck import GradCheckReport, gradient_check

__all__ = [
    "TrainConfig",
    "RunManifest",
    "pretrain_step",
    "run_pretraining",
    "GradCheckReport",
    "gradient_check",
]
