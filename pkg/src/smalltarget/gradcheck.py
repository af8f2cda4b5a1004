"""Finite-difference gradient checks for the trainable modules.

Checks run in float64. Each one compares the analytic directional derivative
⟨∇f, v⟩ against a central difference along random unit-norm directions ``v``
drawn over all parameters and the input, plus a few single coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .blocks import CARG, ESTD, ESTVSSBlock
from .data import DetectionBox
from .detect import Grid, detection_loss
from .fusion import MEPF
from .model import ModelConfig, Detector
from .scan import SS2D
from .tensor import Parameter, Tensor, backward, precision

TOLERANCE = 1e-3
COMPOSITE_TOLERANCE = 1e-2
MODULES = ("mepf", "estd", "carg", "ss2d", "block", "loss", "backbone")


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    checks: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{self.name:9s} max_rel_error={self.max_rel_error:.3e} "
                f"checks={self.checks} tol={self.tolerance:g} {verdict}")


def rel_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def check(loss_fn: Callable[[], Tensor], tensors: list[Tensor], rng: np.random.Generator,
          directions: int = 4, coordinates: int = 6, eps: float = 1e-6) -> tuple[float, int]:
    """Max relative error between analytic and central-difference derivatives."""
    for t in tensors:
        t.grad = np.zeros_like(t.data)
    backward(loss_fn())
    grads = [t.grad.copy() for t in tensors]

    def along(vs) -> tuple[float, float]:
        analytic = sum(float(np.sum(g * v)) for g, v in zip(grads, vs))
        base = [t.data.copy() for t in tensors]
        for t, b, v in zip(tensors, base, vs):
            t.data = b + eps * v
        up = loss_fn().item()
        for t, b, v in zip(tensors, base, vs):
            t.data = b - eps * v
        down = loss_fn().item()
        for t, b in zip(tensors, base):
            t.data = b
        return analytic, (up - down) / (2 * eps)

    worst, n = 0.0, 0
    for _ in range(directions):
        vs = [rng.standard_normal(t.shape) for t in tensors]
        norm = np.sqrt(sum(float(np.sum(v * v)) for v in vs))
        a, f = along([v / norm for v in vs])
        worst, n = max(worst, rel_error(a, f)), n + 1
    sizes = np.array([t.data.size for t in tensors], float)
    for _ in range(coordinates):
        k = int(rng.choice(len(tensors), p=sizes / sizes.sum()))
        vs = [np.zeros_like(t.data) for t in tensors]
        vs[k].flat[int(rng.integers(vs[k].size))] = 1.0
        a, f = along(vs)
        # single coordinates can have near-zero derivatives; judge them on an absolute floor
        worst, n = max(worst, rel_error(a, f, floor=1e-6)), n + 1
    return worst, n


def _weighted_sum(out: Tensor, w: np.ndarray) -> Tensor:
    return ops.sum(ops.mul(out, Tensor(w)))


def _module_case(name: str, rng: np.random.Generator):
    """(loss_fn, tensors, tolerance) for one named module."""
    if name == "loss":
        grid = Grid.for_image(64, 64)
        truths = [[DetectionBox(20.0, 30.0, 6.0, 5.0, 1), DetectionBox(41.0, 12.0, 30.0, 9.0, 0)]]
        raw = Parameter(0.5 * rng.standard_normal((1, 7, grid.size)))
        return (lambda: detection_loss(raw, truths, grid)), [raw], TOLERANCE
    if name == "backbone":
        model = Detector(ModelConfig(variant="full", width_scale=0.0625, num_classes=2,
                                     ssm_state_dim=4, seed=int(rng.integers(1 << 30))))
        x = Parameter(rng.uniform(0, 1, (2, 6, 64, 64)))
        grid = Grid.for_image(64, 64)
        truths = [[DetectionBox(20.0, 30.0, 6.0, 5.0, 1)], [DetectionBox(44.0, 12.0, 9.0, 7.0, 0)]]
        return ((lambda: detection_loss(model(x), truths, grid)),
                [x] + model.parameters(), COMPOSITE_TOLERANCE)
    c = 8
    if name == "mepf":
        module, x = MEPF(rng=rng), Parameter(rng.uniform(0, 1, (2, 6, 8, 8)))
    elif name == "estd":
        module, x = ESTD(c, rng=rng), Parameter(rng.standard_normal((2, c, 6, 6)))
    elif name == "carg":
        module, x = CARG(c, spatial_kernel=3, rng=rng), Parameter(rng.standard_normal((2, c, 6, 6)))
    elif name == "ss2d":
        module, x = SS2D(c, 4, rng=rng), Parameter(rng.standard_normal((2, c, 4, 5)))
    elif name == "block":
        module, x = ESTVSSBlock(c, 4, rng=rng), Parameter(rng.standard_normal((2, c, 4, 5)))
    else:
        raise ValueError(f"unknown module {name!r}; one of {', '.join(MODULES)}")
    w = rng.standard_normal(module(x).shape)
    return (lambda: _weighted_sum(module(x), w)), [x] + module.parameters(), TOLERANCE


def run(name: str, seed: int = 0) -> GradcheckResult:
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        loss_fn, tensors, tol = _module_case(name, rng)
        worst, n = check(loss_fn, tensors, rng)
    return GradcheckResult(name, worst, n, tol)


def run_all(names=MODULES, seed: int = 0) -> list[GradcheckResult]:
    return [run(n, seed) for n in names]
