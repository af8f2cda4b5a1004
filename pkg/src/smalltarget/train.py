"""SGD with momentum, the training loop, evaluation and checkpoint round trips."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import checkpoint
from .data import Dataset, DetectionBox
from .detect import Grid, LossWeights, decode, detection_loss
from .fusion import MEPF
from .metrics import EvalReport, evaluate_map50
from .model import Detector, ModelConfig
from .tensor import Parameter, Tensor, backward, no_grad


class DivergenceError(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became non-finite ({loss}) at step {step}")
        self.step = step
        self.loss = loss


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.937
    weight_decay: float = 0.0005
    batch: int = 8
    epochs: int = 10
    seed: int = 0
    max_steps: int = 0          # 0 = no cap
    clip_norm: float = 10.0     # global gradient-norm cap, 0 = off
    warmup_steps: int = 0       # linear lr ramp from lr/warmup to lr
    final_lr_ratio: float = 1.0  # linear decay to lr·ratio at the last step, 1 = constant
    conf_thresh: float = 0.01   # evaluation score floor
    nms_iou: float = 0.5
    loss: LossWeights = field(default_factory=LossWeights)

    def validate(self) -> None:
        # lr = 0 is allowed so a run can be checked to leave parameters untouched
        if not self.lr >= 0:
            raise ValueError(f"lr={self.lr} must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum={self.momentum} must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not 0 < self.final_lr_ratio <= 1:
            raise ValueError(f"final_lr_ratio={self.final_lr_ratio} must lie in (0, 1]")
        if self.batch < 1 or self.epochs < 1:
            raise ValueError("batch and epochs must be >= 1")


class SGD:
    """v ← m·v + g;  p ← p − lr·(v + wd·p)."""

    def __init__(self, params: list[Parameter], lr: float, momentum: float = 0.0,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * (v + self.weight_decay * p.data)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def _clip(params: list[Parameter], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params))
    if max_norm > 0 and norm > max_norm:
        for p in params:
            p.grad *= max_norm / norm
    return norm


def total_steps(cfg: TrainConfig, num_samples: int) -> int:
    steps = cfg.epochs * math.ceil(num_samples / cfg.batch)
    return min(steps, cfg.max_steps) if cfg.max_steps else steps


def lr_at(cfg: TrainConfig, step: int, total: int = 0) -> float:
    """Warmup ramp, then linear decay from lr to lr·final_lr_ratio over ``total`` steps."""
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    if cfg.final_lr_ratio < 1 and total > 1:
        frac = min(step / (total - 1), 1.0)
        return cfg.lr * (1.0 - (1.0 - cfg.final_lr_ratio) * frac)
    return cfg.lr


@dataclass
class TrainResult:
    losses: list[float]
    steps: int
    seconds: float


def train(model: Detector, data: Dataset, cfg: TrainConfig, log_path=None,
          on_step=None) -> TrainResult:
    """Run SGD over shuffled mini-batches; one CSV row per step.

    Shuffling uses ``cfg.seed``, so two runs from the same initial model are
    bit-identical.
    """
    cfg.validate()
    if len(data) == 0:
        raise ValueError("training data is empty")
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    opt = SGD(params, cfg.lr, cfg.momentum, cfg.weight_decay)
    H, W = data.images.shape[2:]
    grid = Grid.for_image(H, W)
    total = total_steps(cfg, len(data))
    model.train()
    losses: list[float] = []
    step = 0
    t0 = time.perf_counter()
    log = open(log_path, "w", newline="") if log_path else None
    try:
        writer = csv.writer(log) if log else None
        if writer:
            writer.writerow(["epoch", "step", "loss", "lr"])
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(data))
            for start in range(0, len(order), cfg.batch):
                idx = order[start:start + cfg.batch]
                raw = model(Tensor(data.images[idx]))
                loss = detection_loss(raw, [data.boxes[i] for i in idx], grid, cfg.loss)
                value = loss.item()
                if not math.isfinite(value):
                    raise DivergenceError(step, value)
                opt.zero_grad()
                backward(loss)
                if cfg.clip_norm > 0:
                    _clip(params, cfg.clip_norm)
                opt.lr = lr_at(cfg, step, total)
                opt.step()
                losses.append(value)
                if writer:
                    writer.writerow([epoch, step, f"{value:.6g}", f"{opt.lr:.6g}"])
                if on_step:
                    on_step(step, value)
                step += 1
                if cfg.max_steps and step >= cfg.max_steps:
                    return TrainResult(losses, step, time.perf_counter() - t0)
    finally:
        if log:
            log.close()
    return TrainResult(losses, step, time.perf_counter() - t0)


def predict(model: Detector, images: np.ndarray, conf_thresh: float = 0.01,
            iou_thresh: float = 0.5, batch: int = 16) -> list[list[DetectionBox]]:
    model.eval()
    H, W = images.shape[2:]
    grid = Grid.for_image(H, W)
    out = []
    with no_grad():
        for s in range(0, len(images), batch):
            raw = model(Tensor(images[s:s + batch])).data
            out.extend(decode(raw, grid, (H, W), conf_thresh, iou_thresh))
    return out


def evaluate(model: Detector, data: Dataset, conf_thresh: float = 0.01,
             iou_thresh: float = 0.5) -> EvalReport:
    t0 = time.perf_counter()
    preds = predict(model, data.images, conf_thresh, iou_thresh)
    elapsed = time.perf_counter() - t0
    report = evaluate_map50(preds, data.boxes, param_bytes=4 * model.num_parameters(),
                            images_per_s=len(data) / max(elapsed, 1e-9))
    if isinstance(model.fusion, MEPF):
        report.extra["mepf_params"] = str(model.fusion.num_parameters())
    return report


# ---------------------------------------------------------------- checkpoints

def _sidecar(path) -> Path:
    return Path(str(path) + ".cfg")


def save_model(model: Detector, path) -> None:
    checkpoint.save(path, model.state_dict())
    lines = [f"{f.name}={getattr(model.cfg, f.name)}" for f in fields(ModelConfig)]
    _sidecar(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> Detector:
    side = _sidecar(path)
    if not side.is_file():
        raise FileNotFoundError(f"missing model config {side}")
    cfg = ModelConfig()
    types = {f.name: f.type for f in fields(ModelConfig)}
    for line in side.read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        if key not in types:
            raise ValueError(f"{side}: unknown key {key!r}")
        current = getattr(cfg, key)
        setattr(cfg, key, type(current)(value))
    model = Detector(cfg)
    model.load_state_dict(checkpoint.load(path))
    return model
