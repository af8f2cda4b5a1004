"""Average precision at IoU 0.5 with all-point interpolation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import DetectionBox
from .detect import iou

IOU_MATCH = 0.5


@dataclass
class EvalReport:
    ap: dict[int, float]                 # per class with >= 1 truth
    map50: float
    gt_counts: dict[int, int]
    pred_counts: dict[int, int]
    param_bytes: int = 0
    images_per_s: float = 0.0
    extra: dict[str, str] = field(default_factory=dict)

    def to_text(self) -> str:
        """Structured ``key: value`` lines with fixed field names."""
        lines = [f"map50: {self.map50:.6f}"]
        for c in sorted(set(self.gt_counts) | set(self.pred_counts)):
            ap = self.ap.get(c)
            lines.append(f"class {c}: ap50={'nan' if ap is None else f'{ap:.6f}'} "
                         f"gt={self.gt_counts.get(c, 0)} pred={self.pred_counts.get(c, 0)}")
        lines.append(f"param_bytes: {self.param_bytes}")
        lines.append(f"images_per_s: {self.images_per_s:.3f}")
        lines.extend(f"{k}: {v}" for k, v in self.extra.items())
        return "\n".join(lines)


def average_precision(tp: np.ndarray, num_truths: int) -> float:
    """All-point interpolated AP from TP flags in descending-score order."""
    if num_truths == 0 or tp.size == 0:
        return 0.0
    tp = tp.astype(np.float64)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / num_truths
    precision = ctp / (ctp + cfp)
    mrec = np.concatenate([[0.0], recall])
    mpre = np.concatenate([[0.0], precision])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def evaluate_map50(preds: list[list[DetectionBox]], truths: list[list[DetectionBox]],
                   param_bytes: int = 0, images_per_s: float = 0.0,
                   iou_thresh: float = IOU_MATCH) -> EvalReport:
    """Per-class AP and their mean over classes that have ground truth.

    Predictions are ranked by score, descending. Equal scores keep their input
    order (image index, then position in that image's list).
    """
    if len(preds) != len(truths):
        raise ValueError(f"{len(preds)} prediction lists for {len(truths)} images")
    gt_counts: dict[int, int] = {}
    pred_counts: dict[int, int] = {}
    for ts in truths:
        for t in ts:
            gt_counts[t.class_id] = gt_counts.get(t.class_id, 0) + 1
    for ps in preds:
        for p in ps:
            pred_counts[p.class_id] = pred_counts.get(p.class_id, 0) + 1

    ap = {}
    for c in sorted(gt_counts):
        ranked = [(img, p) for img, ps in enumerate(preds) for p in ps if p.class_id == c]
        ranked.sort(key=lambda item: -item[1].score)  # stable
        claimed: dict[int, list[bool]] = {}
        flags = []
        for img, p in ranked:
            ts = [t for t in truths[img] if t.class_id == c]
            used = claimed.setdefault(img, [False] * len(ts))
            best, best_j = 0.0, -1
            for j, t in enumerate(ts):
                o = iou(p, t)
                if o > best:
                    best, best_j = o, j
            hit = best_j >= 0 and best >= iou_thresh and not used[best_j]
            if hit:
                used[best_j] = True
            flags.append(hit)
        ap[c] = average_precision(np.array(flags, bool), gt_counts[c])
    m = float(np.mean(list(ap.values()))) if ap else 0.0
    return EvalReport(ap, m, gt_counts, pred_counts, param_bytes, images_per_s)
