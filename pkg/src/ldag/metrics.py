"""Segmentation metrics: IoU, class-balanced mIoU per fold, FB-IoU."""

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """|intersection| / |union|; two empty masks agree perfectly (1.0)."""
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise DimensionError(f"mask extents differ: {pred.shape} vs {gt.shape}")
    union = int(np.logical_or(pred, gt).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(pred, gt).sum()) / union


@dataclass
class EpisodeResult:
    episode_id: str
    class_name: str
    fold_id: int
    fg_iou: float
    bg_iou: float


@dataclass
class EvalReport:
    per_class_iou: dict  # class -> mean foreground IoU
    per_fold_miou: dict  # fold id -> class-balanced mean
    fbiou: float
    episode_count: int
    config: dict

    @property
    def miou(self) -> float:
        """Mean over folds present (single-fold reports: that fold's mIoU)."""
        return float(np.mean(list(self.per_fold_miou.values())))

    def to_json(self) -> str:
        doc = {
            "per_class_iou": self.per_class_iou,
            "per_fold_miou": {str(k): v for k, v in self.per_fold_miou.items()},
            "miou": self.miou,
            "fbiou": self.fbiou,
            "episode_count": self.episode_count,
            "config": self.config,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def aggregate(results: list, config: dict | None = None) -> EvalReport:
    """Per-class means first, then unweighted class means per fold, plus FB-IoU."""
    if not results:
        raise ContractError("cannot aggregate an empty result list")
    by_class: dict = {}
    folds: dict = {}
    for r in results:
        by_class.setdefault(r.class_name, []).append(r.fg_iou)
        folds.setdefault(r.fold_id, set()).add(r.class_name)
    per_class = {c: float(np.mean(v)) for c, v in by_class.items()}
    per_fold = {f: float(np.mean([per_class[c] for c in sorted(classes)]))
                for f, classes in folds.items()}
    fbiou = float((np.mean([r.fg_iou for r in results])
                   + np.mean([r.bg_iou for r in results])) / 2.0)
    return EvalReport(per_class_iou=per_class, per_fold_miou=per_fold, fbiou=fbiou,
                      episode_count=len(results), config=dict(config or {}))


def episode_result(pred_mask: np.ndarray, gt_mask: np.ndarray, episode_id: str,
                   class_name: str, fold_id: int) -> EpisodeResult:
    pred = np.asarray(pred_mask).astype(bool)
    gt = np.asarray(gt_mask).astype(bool)
    return EpisodeResult(episode_id=episode_id, class_name=class_name, fold_id=fold_id,
                         fg_iou=iou(pred, gt), bg_iou=iou(~pred, ~gt))


def write_rows_csv(path, results: list) -> None:
    """Raw per-episode rows so every report total is recomputable."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode_id", "class", "fold", "fg_iou", "bg_iou"])
        for r in results:
            writer.writerow([r.episode_id, r.class_name, r.fold_id,
                             f"{r.fg_iou:.6f}", f"{r.bg_iou:.6f}"])
