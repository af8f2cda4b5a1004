"""Mask-enhanced pixel-level fusion of a registered RGB + IR image pair.

Pipeline for a stacked (n, 6, h, w) input::

    rgb, ir   = split(x_in)
    mask_m    = sigmoid(conv3(relu(conv3(m))))           per modality m
    out_m     = conv3(m + m * mask_m)
    M         = sigmoid(fc(relu(fc(avgpool(cat[out_rgb, out_ir])))))
    fused     = M * cat[out_rgb, out_ir]                 (n, 6, h, w)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .nn import Conv2d, Linear, Module
from .tensor import ShapeError, Tensor

REFERENCE_PARAM_COUNT = 1650


class AlignmentError(ValueError):
    """The RGB and IR frames are not known to be pixel-registered."""


@dataclass
class MultispectralPair:
    rgb: np.ndarray  # (n, 3, h, w), values in [0, 1]
    ir: np.ndarray
    registered: bool = True

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float32)
        self.ir = np.asarray(self.ir, dtype=np.float32)
        if self.rgb.ndim == 3:
            self.rgb = self.rgb[None]
        if self.ir.ndim == 3:
            self.ir = self.ir[None]
        if self.rgb.shape != self.ir.shape:
            raise ShapeError(f"rgb {self.rgb.shape} and ir {self.ir.shape} differ")
        for name, arr in (("rgb", self.rgb), ("ir", self.ir)):
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise ValueError(f"{name} values must lie in [0, 1]")

    def stacked(self) -> Tensor:
        return Tensor(np.concatenate([self.rgb, self.ir], axis=1))


def split(x_in: Tensor) -> tuple[Tensor, Tensor]:
    """(n, 6, h, w) -> (rgb channels 0-2, ir channels 3-5)."""
    if x_in.ndim != 4 or x_in.shape[1] != 6:
        raise ShapeError(f"split expects a 6-channel stack, got {x_in.shape}", axis=1)
    rgb, ir = ops.split(x_in, (3, 3))
    return rgb, ir


class MaskGenerator(Module):
    """Two 3x3 convs with a ReLU between, then sigmoid: mask in (0, 1)."""

    def __init__(self, channels: int = 3, hidden: int = 3, rng=None):
        self.conv1 = Conv2d(channels, hidden, 3, rng=rng)
        self.conv2 = Conv2d(hidden, channels, 3, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.conv1.weight.shape[1]:
            raise ShapeError(f"mask generator expects {self.conv1.weight.shape[1]} channels, "
                             f"got {x.shape[1]}", axis=1)
        return ops.sigmoid(self.conv2(ops.relu(self.conv1(x))))


def feature_fuse(x: Tensor, mask: Tensor, conv: Conv2d) -> Tensor:
    """conv3(x + x * mask): the mask boosts, never attenuates below x itself."""
    return conv(ops.add(x, ops.mul(x, mask)))


class ModalFactor(Module):
    """Channel weights M = sigmoid(fc(relu(fc(avgpool(z))))) for the 6-channel concat."""

    def __init__(self, channels: int = 6, hidden: int = 3, rng=None):
        self.fc1 = Linear(channels, hidden, rng=rng)
        self.fc2 = Linear(hidden, channels, rng=rng)

    def descriptor(self, z: Tensor) -> Tensor:
        n, c = z.shape[:2]
        return ops.reshape(ops.global_avg_pool(z), (n, c))

    def forward(self, z: Tensor) -> Tensor:
        n, c = z.shape[:2]
        m = ops.sigmoid(self.fc2(ops.relu(self.fc1(self.descriptor(z)))))
        return ops.reshape(m, (n, c, 1, 1))


class MEPF(Module):
    """Learned fusion producing a 6-channel image; ~550 parameters by default."""

    def __init__(self, mask_hidden: int = 3, fc_hidden: int = 3, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.maskgen_rgb = MaskGenerator(3, mask_hidden, rng)
        self.maskgen_ir = MaskGenerator(3, mask_hidden, rng)
        self.fuse_rgb = Conv2d(3, 3, 3, rng=rng)
        self.fuse_ir = Conv2d(3, 3, 3, rng=rng)
        self.modal = ModalFactor(6, fc_hidden, rng)
        self.force_factor: float | None = None
        self.last_masks: tuple[np.ndarray, np.ndarray] | None = None
        self.last_factor: np.ndarray | None = None

    def branches(self, x_in: Tensor):
        rgb, ir = split(x_in)
        mask_rgb = self.maskgen_rgb(rgb)
        mask_ir = self.maskgen_ir(ir)
        out_rgb = feature_fuse(rgb, mask_rgb, self.fuse_rgb)
        out_ir = feature_fuse(ir, mask_ir, self.fuse_ir)
        return mask_rgb, mask_ir, out_rgb, out_ir

    def forward(self, x_in: Tensor) -> Tensor:
        mask_rgb, mask_ir, out_rgb, out_ir = self.branches(x_in)
        z = ops.concat([out_rgb, out_ir], axis=1)
        if self.force_factor is not None:
            m = Tensor(np.full((z.shape[0], 6, 1, 1), self.force_factor, dtype=z.dtype))
        else:
            m = self.modal(z)
        self.last_masks = (mask_rgb.data, mask_ir.data)
        self.last_factor = m.data
        return ops.scale(z, m)

    def fuse(self, pair: MultispectralPair) -> Tensor:
        if not pair.registered:
            raise AlignmentError("refusing to fuse an unregistered RGB/IR pair")
        return self.forward(pair.stacked())


class ConcatFusion(Module):
    """Parameter-free baseline: the fused image is just cat[rgb, ir]."""

    def forward(self, x_in: Tensor) -> Tensor:
        if x_in.shape[1] != 6:
            raise ShapeError(f"expected a 6-channel stack, got {x_in.shape}", axis=1)
        return x_in

    def fuse(self, pair: MultispectralPair) -> Tensor:
        if not pair.registered:
            raise AlignmentError("refusing to fuse an unregistered RGB/IR pair")
        return pair.stacked()


def mepf_param_count(mask_hidden: int = 3, fc_hidden: int = 3) -> int:
    """Closed-form count: convs c_out·c_in·k² + c_out, FCs out·in + out."""
    def conv(ci, co, k=3):
        return co * ci * k * k + co

    def fc(i, o):
        return o * i + o

    masks = 2 * (conv(3, mask_hidden) + conv(mask_hidden, 3))
    fuses = 2 * conv(3, 3)
    return masks + fuses + fc(6, fc_hidden) + fc(fc_hidden, 6)


__all__ = ["AlignmentError", "ConcatFusion", "MEPF", "MaskGenerator", "ModalFactor",
           "MultispectralPair", "REFERENCE_PARAM_COUNT", "feature_fuse",
           "mepf_param_count", "split"]
