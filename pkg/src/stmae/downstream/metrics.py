"""Evaluation metrics: per-class precision/recall/F1, top-1, mIoU, mAP.

Conventions: all metrics are percentages in [0, 100]. The confusion matrix
has true classes as rows (row sums equal class support). F1 is 2PR/(P+R)
and defined as 0 when P + R = 0. mIoU averages TP/(TP+FP+FN) over classes.
mAP averages per-class average precision over classes that have at least
one positive, computed from score-ranked predictions; it needs scores and
is omitted otherwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch


@dataclass
class MetricReport:
    precision: list[float]            # per class, %
    recall: list[float]
    f1: list[float]
    top1: float
    miou: float
    mean_ap: float | None
    confusion: list[list[int]]        # rows = true class
    class_names: list[str]
    support: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "top1": self.top1,
            "miou": self.miou,
            "map": self.mean_ap,
            "classes": [
                {
                    "name": self.class_names[k],
                    "precision": self.precision[k],
                    "recall": self.recall[k],
                    "f1": self.f1[k],
                    "support": self.support[k],
                }
                for k in range(len(self.class_names))
            ],
            "confusion": self.confusion,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        """Aligned plain-text table with per-class P/R/F1 columns."""
        name_w = max(12, max(len(n) for n in self.class_names) + 2)
        lines = [f"{'class':<{name_w}}{'precision':>10}{'recall':>10}{'F1':>10}{'support':>10}"]
        for k, name in enumerate(self.class_names):
            lines.append(
                f"{name:<{name_w}}{self.precision[k]:>10.1f}{self.recall[k]:>10.1f}"
                f"{self.f1[k]:>10.1f}{self.support[k]:>10d}"
            )
        summary = f"top-1 {self.top1:.2f}   mIoU {self.miou:.2f}"
        if self.mean_ap is not None:
            summary += f"   mAP {self.mean_ap:.2f}"
        lines.append(summary)
        return "\n".join(lines)


def confusion_matrix(predictions: np.ndarray, labels: np.ndarray, num_classes: int) -> np.ndarray:
    index = labels.astype(np.int64) * num_classes + predictions.astype(np.int64)
    counts = np.bincount(index, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def _average_precision(scores: np.ndarray, positives: np.ndarray) -> float | None:
    """AP for one class from score-ranked predictions; None without positives."""
    n_pos = int(positives.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    hits = positives[order]
    cum_hits = np.cumsum(hits)
    ranks = np.arange(1, len(scores) + 1)
    precision_at = cum_hits / ranks
    return float((precision_at * hits).sum() / n_pos)


def compute_metrics(
    predictions: torch.Tensor | np.ndarray,
    labels: torch.Tensor | np.ndarray,
    task: str,
    scores: torch.Tensor | np.ndarray | None = None,
    num_classes: int | None = None,
    class_names: list[str] | None = None,
) -> MetricReport:
    """Score a prediction set.

    classification: predictions/labels are [N] class ids, scores [N, K].
    segmentation / change: predictions/labels are per-pixel id maps of any
    matching shape (flattened internally), scores [..., K] aligned.
    """
    if task not in ("classification", "segmentation", "change"):
        raise ValueError(f"unknown task {task!r}")
    pred = predictions.detach().cpu().numpy() if isinstance(predictions, torch.Tensor) else np.asarray(predictions)
    true = labels.detach().cpu().numpy() if isinstance(labels, torch.Tensor) else np.asarray(labels)
    if pred.shape != true.shape:
        raise ValueError(f"prediction shape {pred.shape} != label shape {true.shape}")
    if pred.size == 0:
        raise ValueError("empty predictions")
    score_arr = None
    if scores is not None:
        score_arr = scores.detach().cpu().numpy() if isinstance(scores, torch.Tensor) else np.asarray(scores)
        if score_arr.shape[:-1] != pred.shape:
            raise ValueError(f"scores shape {score_arr.shape} does not align with predictions {pred.shape}")
        score_arr = score_arr.reshape(-1, score_arr.shape[-1])
    pred = pred.reshape(-1)
    true = true.reshape(-1)
    k = num_classes if num_classes is not None else int(max(pred.max(), true.max())) + 1
    if true.min() < 0 or true.max() >= k:
        raise ValueError(f"labels outside [0, {k})")
    names = class_names if class_names is not None else [f"class_{i}" for i in range(k)]
    if len(names) != k:
        raise ValueError(f"{len(names)} class names for {k} classes")

    cm = confusion_matrix(pred, true, k)
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp

    precision, recall, f1, iou = [], [], [], []
    for c in range(k):
        p = tp[c] / (tp[c] + fp[c]) if tp[c] + fp[c] > 0 else 0.0
        r = tp[c] / (tp[c] + fn[c]) if tp[c] + fn[c] > 0 else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        denom = tp[c] + fp[c] + fn[c]
        iou.append(tp[c] / denom if denom > 0 else 0.0)
        precision.append(100.0 * p)
        recall.append(100.0 * r)
        f1.append(100.0 * f)

    mean_ap = None
    if score_arr is not None:
        aps = []
        for c in range(k):
            ap = _average_precision(score_arr[:, c], (true == c).astype(np.float64))
            if ap is not None:
                aps.append(ap)
        mean_ap = 100.0 * float(np.mean(aps)) if aps else None

    return MetricReport(
        precision=precision,
        recall=recall,
        f1=f1,
        top1=100.0 * float((pred == true).mean()),
        miou=100.0 * float(np.mean(iou)),
        mean_ap=mean_ap,
        confusion=cm.tolist(),
        class_names=list(names),
        support=cm.sum(axis=1).astype(int).tolist(),
    )


def f1_from_precision_recall(precision_pct: float, recall_pct: float) -> float:
    """F1 (%) from precision/recall percentages; 0 when both are 0."""
    if precision_pct + recall_pct == 0:
        return 0.0
    return 2 * precision_pct * recall_pct / (precision_pct + recall_pct)
