"""Anchor-free detection head, target assignment, loss, IoU and NMS.

Each cell of each scale predicts ``4 + 1 + K`` numbers::

    center = (sigmoid(t_xy) + cell) * stride
    size   = exp(t_wh) * stride
    score  = sigmoid(objectness) * sigmoid(class logit)

A truth is assigned to one scale by its longer side (see ``scale_for``) and,
on that scale, to the cell containing its center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import ops
from .data import DetectionBox
from .nn import Conv2d, ConvBNAct, Module
from .tensor import Tensor

STRIDES = (8, 16, 32)
MAX_LOG_SIZE = 6.0  # size logits are clamped to ±6 before exp


@dataclass
class LossWeights:
    box: float = 2.0
    obj: float = 1.0
    cls: float = 1.0
    obj_pos_weight: float = 1.0   # weight of the positive-cell objectness mean
    l1: float = 1.0               # auxiliary |t_wh - log(wh / stride)| at positives, 0 = off


@dataclass
class Grid:
    """Flattened cell coordinates over all scales, concatenated stride 8 first."""

    gx: np.ndarray
    gy: np.ndarray
    stride: np.ndarray
    shapes: list[tuple[int, int]]

    @property
    def size(self) -> int:
        return self.gx.size

    @classmethod
    def for_image(cls, height: int, width: int, strides=STRIDES) -> Grid:
        gx, gy, st, shapes = [], [], [], []
        for s in strides:
            h, w = height // s, width // s
            yy, xx = np.mgrid[0:h, 0:w]
            gx.append(xx.ravel())
            gy.append(yy.ravel())
            st.append(np.full(h * w, s))
            shapes.append((h, w))
        return cls(np.concatenate(gx).astype(np.float64), np.concatenate(gy).astype(np.float64),
                   np.concatenate(st).astype(np.float64), shapes)


def num_outputs(height: int, width: int, strides=STRIDES) -> int:
    return sum((height // s) * (width // s) for s in strides)


class DetectionHead(Module):
    """Decoupled per-scale head: a box branch and an objectness + class branch.

    Each branch is a 3x3 ConvBNAct (at most ``hidden`` channels) and a 1x1
    predictor. Predictor weights start small so early boxes sit at cell
    centers with stride-sized extent.
    """

    def __init__(self, in_channels: list[int], num_classes: int, hidden: int = 64,
                 init_scale: float = 0.01, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.num_classes = num_classes
        widths = [min(c, hidden) for c in in_channels]
        self.box_stems = [ConvBNAct(c, h, 3, rng=rng) for c, h in zip(in_channels, widths)]
        self.cls_stems = [ConvBNAct(c, h, 3, rng=rng) for c, h in zip(in_channels, widths)]
        self.box_preds = [Conv2d(h, 4, 1, rng=rng) for h in widths]
        self.cls_preds = [Conv2d(h, 1 + num_classes, 1, rng=rng) for h in widths]
        for conv in self.box_preds + self.cls_preds:
            conv.weight.data *= init_scale
            conv.bias.data[:] = 0

    def forward(self, feats: list[Tensor]) -> Tensor:
        """Raw predictions (n, 5 + K, P), scales flattened and concatenated."""
        if len(feats) != len(self.box_preds):
            raise ValueError(f"head expects {len(self.box_preds)} feature maps, got {len(feats)}")
        outs = []
        for k, f in enumerate(feats):
            box = self.box_preds[k](self.box_stems[k](f))
            cls = self.cls_preds[k](self.cls_stems[k](f))
            o = ops.concat([box, cls], axis=1)
            n, c, h, w = o.shape
            outs.append(ops.reshape(o, (n, c, h * w)))
        return ops.concat(outs, axis=2)


# ---------------------------------------------------------------- decoding

def decode_boxes(raw: np.ndarray, grid: Grid) -> np.ndarray:
    """(n, 5 + K, P) raw -> (n, 4, P) boxes as cx, cy, w, h in pixels."""
    cx = (expit(raw[:, 0]) + grid.gx) * grid.stride
    cy = (expit(raw[:, 1]) + grid.gy) * grid.stride
    w = np.exp(np.clip(raw[:, 2], -MAX_LOG_SIZE, MAX_LOG_SIZE)) * grid.stride
    h = np.exp(np.clip(raw[:, 3], -MAX_LOG_SIZE, MAX_LOG_SIZE)) * grid.stride
    return np.stack([cx, cy, w, h], axis=1)


def decode(raw: np.ndarray, grid: Grid, image_size: tuple[int, int], conf_thresh: float = 0.01,
           iou_thresh: float = 0.5, max_det: int = 100) -> list[list[DetectionBox]]:
    """Scored, clamped and NMS-filtered detections per image."""
    boxes = decode_boxes(raw, grid)
    obj = expit(raw[:, 4])
    cls = expit(raw[:, 5:])
    cls_id = cls.argmax(axis=1)
    score = obj * np.take_along_axis(cls, cls_id[:, None], 1)[:, 0]
    H, W = image_size
    out = []
    for i in range(raw.shape[0]):
        keep = np.nonzero(score[i] >= conf_thresh)[0]
        keep = keep[np.argsort(-score[i, keep], kind="stable")][: 10 * max_det]
        dets = [DetectionBox(*map(float, boxes[i, :, j]), class_id=int(cls_id[i, j]),
                             score=float(score[i, j])).clamped(W, H) for j in keep]
        out.append(nms(dets, iou_thresh, conf_thresh)[:max_det])
    return out


# ---------------------------------------------------------------- IoU / NMS

def iou(a: DetectionBox, b: DetectionBox) -> float:
    ax1, ay1, ax2, ay2 = a.xyxy()
    bx1, by1, bx2, by2 = b.xyxy()
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def nms(boxes: list[DetectionBox], iou_thresh: float = 0.5,
        score_thresh: float = 0.25) -> list[DetectionBox]:
    """Greedy per-class suppression in descending score order (stable on ties)."""
    for b in boxes:
        if not 0.0 <= b.score <= 1.0:
            raise ValueError(f"score {b.score} outside [0, 1]")
    order = sorted((b for b in boxes if b.score >= score_thresh), key=lambda b: -b.score)
    kept: list[DetectionBox] = []
    for b in order:
        if all(k.class_id != b.class_id or iou(k, b) < iou_thresh for k in kept):
            kept.append(b)
    return kept


# ---------------------------------------------------------------- assignment

def scale_for(w: float, h: float, strides=STRIDES) -> int:
    """Index of the scale for a box: the first stride s with max(w, h) <= 8·s."""
    side = max(w, h)
    for k, s in enumerate(strides):
        if side <= 8 * s:
            return k
    return len(strides) - 1


@dataclass
class Targets:
    positive: np.ndarray    # (n, P) bool
    boxes: np.ndarray       # (n, 4, P), cell-sized dummies at negatives
    classes: np.ndarray     # (n, K, P) one-hot at positives


def assign(truths: list[list[DetectionBox]], grid: Grid, num_classes: int) -> Targets:
    """Center-in-cell assignment. When two truths share a cell the one whose
    center is nearest the cell center wins."""
    n, P = len(truths), grid.size
    pos = np.zeros((n, P), bool)
    boxes = np.stack([(grid.gx + 0.5) * grid.stride, (grid.gy + 0.5) * grid.stride,
                      grid.stride, grid.stride])[None].repeat(n, 0)
    classes = np.zeros((n, num_classes, P))
    best = np.full((n, P), np.inf)
    offsets = np.cumsum([0] + [h * w for h, w in grid.shapes])
    for i, image_truths in enumerate(truths):
        for t in image_truths:
            if not 0 <= t.class_id < num_classes:
                raise ValueError(f"class id {t.class_id} outside [0, {num_classes})")
            k = scale_for(t.w, t.h)
            s = STRIDES[k]
            gh, gw = grid.shapes[k]
            col = min(max(int(t.cx // s), 0), gw - 1)
            row = min(max(int(t.cy // s), 0), gh - 1)
            j = offsets[k] + row * gw + col
            dist = math.hypot(t.cx - (col + 0.5) * s, t.cy - (row + 0.5) * s)
            if dist >= best[i, j]:
                continue
            best[i, j] = dist
            pos[i, j] = True
            boxes[i, :, j] = (t.cx, t.cy, t.w, t.h)
            classes[i, :, j] = 0
            classes[i, t.class_id, j] = 1
    return Targets(pos, boxes, classes)


# ---------------------------------------------------------------- loss

def _const(arr, like: Tensor) -> Tensor:
    return Tensor(np.ascontiguousarray(np.broadcast_to(arr, like.shape), dtype=like.dtype))


def ciou(pred: list[Tensor], target: list[Tensor], eps: float = 1e-9) -> Tensor:
    """Complete IoU between boxes given as [cx, cy, w, h] component tensors.

    The aspect-ratio trade-off α is kept inside the graph (not detached), so
    the loss is an ordinary differentiable function of the predictions.
    """
    px, py, pw, ph = pred
    tx, ty, tw, th = target
    half = 0.5
    p_x1, p_x2 = ops.sub(px, ops.scale(pw, half)), ops.add(px, ops.scale(pw, half))
    p_y1, p_y2 = ops.sub(py, ops.scale(ph, half)), ops.add(py, ops.scale(ph, half))
    t_x1, t_x2 = ops.sub(tx, ops.scale(tw, half)), ops.add(tx, ops.scale(tw, half))
    t_y1, t_y2 = ops.sub(ty, ops.scale(th, half)), ops.add(ty, ops.scale(th, half))

    iw = ops.clamp(ops.sub(ops.minimum(p_x2, t_x2), ops.maximum(p_x1, t_x1)), lo=0.0)
    ih = ops.clamp(ops.sub(ops.minimum(p_y2, t_y2), ops.maximum(p_y1, t_y1)), lo=0.0)
    inter = ops.mul(iw, ih)
    union = ops.add_scalar(ops.sub(ops.add(ops.mul(pw, ph), ops.mul(tw, th)), inter), eps)
    iou_t = ops.div(inter, union)

    cw = ops.sub(ops.maximum(p_x2, t_x2), ops.minimum(p_x1, t_x1))
    ch = ops.sub(ops.maximum(p_y2, t_y2), ops.minimum(p_y1, t_y1))
    c2 = ops.add_scalar(ops.add(ops.square(cw), ops.square(ch)), eps)
    rho2 = ops.add(ops.square(ops.sub(px, tx)), ops.square(ops.sub(py, ty)))

    dv = ops.sub(ops.atan(ops.div(tw, th)), ops.atan(ops.div(pw, ph)))
    v = ops.scale(ops.square(dv), 4.0 / math.pi ** 2)
    alpha = ops.div(v, ops.add_scalar(ops.add(ops.neg(iou_t), v), 1.0 + eps))
    return ops.sub(ops.sub(iou_t, ops.div(rho2, c2)), ops.mul(alpha, v))


def detection_loss(raw: Tensor, truths: list[list[DetectionBox]], grid: Grid,
                   weights: LossWeights | None = None) -> Tensor:
    """box·(1 − CIoU) + obj·BCE(objectness) + cls·BCE(classes) + l1·|Δ log size|.

    Objectness is the mean BCE over negative cells plus ``obj_pos_weight``
    times the mean over positive cells, so an empty image with zero logits
    scores exactly ln 2. Box and class terms are summed over positives and
    divided by their count; without truths only the objectness term remains.

    The L1 term acts on the raw size logits. CIoU goes flat once a predicted
    box dwarfs its target; the L1 term keeps pulling it back.
    """
    weights = weights or LossWeights()
    n, c, P = raw.shape
    K = c - 5
    tg = assign(truths, grid, K)
    dtype = raw.dtype
    npos = int(tg.positive.sum())
    nneg = n * P - npos

    obj = ops.reshape(ops.slice_channels(raw, 4, 5), (n, P))
    cell_w = np.where(tg.positive, weights.obj_pos_weight / max(npos, 1),
                      1.0 / max(nneg, 1)).astype(dtype)
    obj_bce = ops.bce_with_logits(obj, tg.positive.astype(dtype))
    total = ops.scale(ops.sum(ops.mul(obj_bce, Tensor(cell_w))), weights.obj)

    if npos == 0:
        return total

    posf = tg.positive.astype(dtype)
    cls_bce = ops.bce_with_logits(ops.slice_channels(raw, 5, c), tg.classes.astype(dtype))
    cls_term = ops.sum(ops.scale(cls_bce, Tensor(posf[:, None, :])))

    stride = Tensor(grid.stride.astype(dtype)[None])
    def comp(i):
        return ops.reshape(ops.slice_channels(raw, i, i + 1), (n, P))
    px = ops.scale(ops.add(ops.sigmoid(comp(0)), _const(grid.gx, obj)), stride)
    py = ops.scale(ops.add(ops.sigmoid(comp(1)), _const(grid.gy, obj)), stride)
    pw = ops.scale(ops.exp(ops.clamp(comp(2), -MAX_LOG_SIZE, MAX_LOG_SIZE)), stride)
    ph = ops.scale(ops.exp(ops.clamp(comp(3), -MAX_LOG_SIZE, MAX_LOG_SIZE)), stride)
    target = [Tensor(tg.boxes[:, k].astype(dtype)) for k in range(4)]
    box_loss = ops.add_scalar(ops.neg(ciou([px, py, pw, ph], target)), 1.0)
    box_term = ops.sum(ops.mul(box_loss, Tensor(posf)))

    inv = 1.0 / npos
    total = ops.add(total, ops.scale(cls_term, weights.cls * inv))
    total = ops.add(total, ops.scale(box_term, weights.box * inv))
    if weights.l1 > 0:
        st = grid.stride[None]
        for k in (2, 3):
            size = np.where(tg.positive, tg.boxes[:, k], st)  # log(1) at negatives
            goal = Tensor(np.log(size / st).astype(dtype))
            l1 = ops.sum(ops.mul(ops.absolute(ops.sub(comp(k), goal)), Tensor(posf)))
            total = ops.add(total, ops.scale(l1, weights.l1 * inv))
    return total
