"""Fusion + backbone + head, with the ablation variants."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .blocks import Backbone, BlockConfig
from .detect import DetectionHead
from .fusion import MEPF, ConcatFusion
from .nn import Module
from .tensor import Tensor

# variant -> (learned fusion, ESTD branch, CARG gate)
VARIANTS = {
    "baseline": (False, False, False),
    "mepf": (True, False, False),
    "mepf-estd": (True, True, False),
    "mepf-carg": (True, False, True),
    "full": (True, True, True),
}


@dataclass
class ModelConfig:
    variant: str = "full"
    num_classes: int = 3
    width_scale: float = 0.25
    depth_scale: float = 0.33
    ssm_state_dim: int = 8
    spatial_kernel: int = 1
    seed: int = 0

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; one of {sorted(VARIANTS)}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        self.block_config().validate()

    def block_config(self) -> BlockConfig:
        _, estd, carg = VARIANTS[self.variant]
        return BlockConfig(depth_scale=self.depth_scale, width_scale=self.width_scale,
                           ssm_state_dim=self.ssm_state_dim, use_estd=estd, use_carg=carg,
                           spatial_kernel=self.spatial_kernel, seed=self.seed)

    def as_dict(self) -> dict:
        return asdict(self)


class Detector(Module):
    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        learned, _, _ = VARIANTS[cfg.variant]
        rng = np.random.default_rng(cfg.seed + 7919)
        self.fusion = MEPF(rng=rng) if learned else ConcatFusion()
        self.backbone = Backbone(cfg.block_config())
        self.head = DetectionHead(self.backbone.out_channels, cfg.num_classes, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.head(self.backbone(self.fusion(x)))


def build_model(cfg: ModelConfig | None = None, **overrides) -> Detector:
    cfg = cfg or ModelConfig()
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return Detector(cfg)
