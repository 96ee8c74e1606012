from stmae.downstream.heads import (
    ChangeHead,
    ClassificationHead,
    HeadConfig,
    SegmentationHead,
    reduce_stage_features,
)
from stmae.downstream.metrics import MetricReport, compute_metrics
from stmae.downstream.finetune import (
    FinetuneResult,
    encode_for_downstream,
    evaluate_head,
    finetune,
    parameter_hash,
)

__all__ = [
    "HeadConfig",
    "SegmentationHead",
    "ClassificationHead",
    "ChangeHead",
    "reduce_stage_features",
    "MetricReport",
    "compute_metrics",
    "FinetuneResult",
    "finetune",
    "evaluate_head",
    "encode_for_downstream",
    "parameter_hash",
]
