"""Trainable layers and the module tree that names their parameters."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import ops
from .tensor import Parameter, Tensor, default_dtype


class Module:
    """Base class. Child modules and parameters are discovered from attributes.

    Lists/tuples of modules are walked too; their entries are named by index.
    """

    training: bool = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, (Module, Parameter)):
                yield key, value
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for i, item in enumerate(value):
                    yield f"{key}.{i}", item

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, Module]]:
        yield prefix, self
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}.{key}" if prefix else key)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        seen: set[int] = set()
        for mod_name, mod in self.named_modules(prefix):
            for key, value in mod._children():
                if isinstance(value, Parameter) and id(value) not in seen:
                    seen.add(id(value))
                    full = f"{mod_name}.{key}" if mod_name else key
                    value.name = full
                    yield full, value

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        """Non-trainable state that must survive a checkpoint (BN statistics)."""
        for mod_name, mod in self.named_modules():
            if isinstance(mod, BatchNorm2d):
                base = f"{mod_name}." if mod_name else ""
                yield base + "running_mean", mod.stats.mean
                yield base + "running_var", mod.stats.var
                yield base + "tracked", np.array([mod.stats.tracked], dtype=np.float32)

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True) -> Module:
        for _, m in self.named_modules():
            m.training = mode
        return self

    def eval(self) -> Module:
        return self.train(False)

    def astype(self, dtype) -> Module:
        """Convert parameters and buffers in place (used for float64 gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data)
        for _, m in self.named_modules():
            if isinstance(m, BatchNorm2d):
                m.stats.mean = m.stats.mean.astype(dtype)
                m.stats.var = m.stats.var.astype(dtype)
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: arr.copy() for name, arr in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = [k for k in params if k not in state]
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {missing[:5]}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {state[name].shape} vs {p.shape}")
            p.data = state[name].astype(p.data.dtype).copy()
        for mod_name, mod in self.named_modules():
            if isinstance(mod, BatchNorm2d):
                base = f"{mod_name}." if mod_name else ""
                if base + "running_mean" in state:
                    mod.stats.mean = state[base + "running_mean"].astype(np.float32).copy()
                    mod.stats.var = state[base + "running_var"].astype(np.float32).copy()
                    mod.stats.tracked = int(state[base + "tracked"][0])


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(default_dtype())


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int = 1, stride: int = 1,
                 padding: int | None = None, groups: int = 1, bias: bool = True,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.groups = groups
        fan_in = (c_in // groups) * kernel * kernel
        self.weight = Parameter(uniform_init(rng, (c_out, c_in // groups, kernel, kernel), fan_in))
        self.bias = Parameter(uniform_init(rng, (c_out,), fan_in)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Parameter(uniform_init(rng, (d_out, d_in), d_in))
        self.bias = Parameter(uniform_init(rng, (d_out,), d_in)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, channels: int):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.stats = ops.RunningStats.fresh(channels)

    def initialize_stats(self) -> None:
        """Mark the (zero-mean, unit-variance) running statistics as usable."""
        self.stats.tracked = max(self.stats.tracked, 1)

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, self.stats, self.training)


class LayerNorm2d(Module):
    """Channel-wise normalization per position; no running state."""

    def __init__(self, channels: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class ConvBNAct(Module):
    """conv (no bias) -> batch norm -> SiLU."""

    def __init__(self, c_in: int, c_out: int, kernel: int = 1, stride: int = 1,
                 rng: np.random.Generator | None = None):
        self.conv = Conv2d(c_in, c_out, kernel, stride, bias=False, rng=rng)
        self.bn = BatchNorm2d(c_out)

    def forward(self, x: Tensor) -> Tensor:
        return ops.silu(self.bn(self.conv(x)))


def initialize_all_stats(model: Module) -> None:
    for _, m in model.named_modules():
        if isinstance(m, BatchNorm2d):
            m.initialize_stats()
