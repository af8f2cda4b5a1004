"""Visual state-space blocks for small targets, downsampling, and backbone assembly.

Block dataflow (residual around the whole block)::

    p   = SiLU(BN(conv1x1(X)))                       input projection
    z   = LN(SS2D(p)) + ESTD(p)                      global + local branches
    z   = CARG(z)                                    channel/spatial gates + residual
    out = z + X
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .nn import BatchNorm2d, Conv2d, ConvBNAct, LayerNorm2d, Linear, Module
from .scan import SS2D
from .tensor import Tensor


class ConfigError(ValueError):
    pass


@dataclass
class BlockConfig:
    """Backbone shape. ``base_*`` are the unscaled plan; scales shrink them."""

    base_channels: tuple[int, ...] = (64, 128, 256, 512, 1024)  # stem, stage 1..4
    base_blocks: tuple[int, ...] = (3, 6, 6, 3)
    depth_scale: float = 0.33
    width_scale: float = 0.25
    ssm_state_dim: int = 8
    in_channels: int = 6
    use_estd: bool = True
    use_carg: bool = True
    spatial_kernel: int = 1
    shared_channel_branches: bool = False
    reduction: int = 4
    seed: int = 0

    def validate(self) -> None:
        for name in ("depth_scale", "width_scale"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ConfigError(f"{name}={v} must lie in (0, 1]")
        if len(self.base_channels) != len(self.base_blocks) + 1:
            raise ConfigError("base_channels needs one entry per stage plus the stem")
        for c in self.channels():
            if c < 4 or c % 2:
                raise ConfigError(f"scaled channel width {c} must be even and >= 4")
        if self.spatial_kernel not in (1, 3, 7):
            raise ConfigError(f"spatial_kernel={self.spatial_kernel}, expected 1, 3 or 7")
        if self.ssm_state_dim < 1:
            raise ConfigError("ssm_state_dim must be >= 1")

    def channels(self) -> list[int]:
        return [scale_width(c, self.width_scale) for c in self.base_channels]

    def blocks(self) -> list[int]:
        return [scale_depth(b, self.depth_scale) for b in self.base_blocks]

    def stage_plan(self) -> list[tuple[int, int, bool]]:
        """(num_blocks, channels, downsample-before?) per stage. Stage 1 follows the stem."""
        ch = self.channels()
        return [(nb, ch[i + 1], i > 0) for i, nb in enumerate(self.blocks())]


def scale_depth(blocks: int, scale: float) -> int:
    return max(1, round(scale * blocks))


def scale_width(channels: int, scale: float) -> int:
    return int(round(channels * scale))


class InputProjection(Module):
    """SiLU(BN(conv1x1(X))), channel count preserved."""

    def __init__(self, c: int, rng=None):
        self.conv = Conv2d(c, c, 1, bias=False, rng=rng)
        self.bn = BatchNorm2d(c)

    def forward(self, x: Tensor) -> Tensor:
        return ops.silu(self.bn(self.conv(x)))


class SqueezeExcite(Module):
    def __init__(self, c: int, reduction: int = 4, rng=None):
        hidden = max(c // reduction, 1)
        self.fc1 = Linear(c, hidden, rng=rng)
        self.fc2 = Linear(hidden, c, rng=rng)
        self.last_weights: np.ndarray | None = None

    def weights(self, x: Tensor) -> Tensor:
        n, c = x.shape[:2]
        s = ops.reshape(ops.global_avg_pool(x), (n, c))
        w = ops.sigmoid(self.fc2(ops.relu(self.fc1(s))))
        self.last_weights = w.data
        return ops.reshape(w, (n, c, 1, 1))

    def forward(self, x: Tensor) -> Tensor:
        return ops.scale(x, self.weights(x))


class ESTD(Module):
    """Local-detail branch: conv1 -> BN -> SE -> conv1 -> GELU -> conv1."""

    def __init__(self, c: int, reduction: int = 4, rng=None):
        self.conv1 = Conv2d(c, c, 1, bias=False, rng=rng)
        self.bn = BatchNorm2d(c)
        self.se = SqueezeExcite(c, reduction, rng)
        self.conv2 = Conv2d(c, c, 1, rng=rng)
        self.conv3 = Conv2d(c, c, 1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv3(ops.gelu(self.conv2(self.se(self.bn(self.conv1(x))))))


class DepthwiseSeparableConv(Module):
    def __init__(self, c: int, kernel: int = 3, rng=None):
        self.depthwise = Conv2d(c, c, kernel, groups=c, rng=rng)
        self.pointwise = Conv2d(c, c, 1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.pointwise(self.depthwise(x))


class _PooledMLP(Module):
    def __init__(self, c: int, reduction: int, rng=None):
        hidden = max(c // reduction, 1)
        self.conv1 = Conv2d(c, hidden, 1, rng=rng)
        self.conv2 = Conv2d(hidden, c, 1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv2(ops.relu(self.conv1(x)))


class CARG(Module):
    """Depthwise-separable conv, channel gate, spatial gate, then add the block input.

    Channel gate: sigmoid(mlp_avg(avgpool(x)) * mlp_max(maxpool(x))), (n, c, 1, 1).
    Spatial gate: sigmoid(conv_k(cat[mean_c(x), max_c(x)])), (n, 1, h, w).
    ``force_channel`` / ``force_spatial`` pin a gate to a constant (ablations, tests).
    """

    def __init__(self, c: int, reduction: int = 4, spatial_kernel: int = 1,
                 shared_branches: bool = False, rng=None):
        if spatial_kernel not in (1, 3, 7):
            raise ConfigError(f"spatial_kernel={spatial_kernel}, expected 1, 3 or 7")
        self.dwconv = DepthwiseSeparableConv(c, 3, rng)
        self.avg_mlp = _PooledMLP(c, reduction, rng)
        self.max_mlp = self.avg_mlp if shared_branches else _PooledMLP(c, reduction, rng)
        self.spatial = Conv2d(2, 1, spatial_kernel, rng=rng)
        self.force_channel: float | None = None
        self.force_spatial: float | None = None
        self.last: dict[str, np.ndarray] = {}

    def channel_attention(self, x_dw: Tensor) -> Tensor:
        a = self.avg_mlp(ops.adaptive_avg_pool(x_dw, 1))
        m = self.max_mlp(ops.adaptive_max_pool(x_dw, 1))
        att = ops.sigmoid(ops.mul(a, m))
        self.last.update(x_out_avgpool=a.data, x_out_maxpool=m.data, x_channelattention=att.data)
        return att

    def spatial_attention(self, x_ca: Tensor) -> Tensor:
        x_mean = ops.channel_mean(x_ca)
        x_max = ops.channel_max(x_ca)
        att = ops.sigmoid(self.spatial(ops.concat([x_mean, x_max], axis=1)))
        self.last.update(x_mean=x_mean.data, x_max=x_max.data, x_spatialattention=att.data)
        return att

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        x_dw = self.dwconv(x)
        if self.force_channel is None:
            ca = self.channel_attention(x_dw)
        else:
            ca = Tensor(np.full((n, c, 1, 1), self.force_channel, dtype=x.dtype))
        x_ca = ops.scale(x_dw, ca)
        if self.force_spatial is None:
            sa = self.spatial_attention(x_ca)
        else:
            sa = Tensor(np.full((n, 1, h, w), self.force_spatial, dtype=x.dtype))
        return ops.add(ops.scale(x_ca, sa), x)


class ESTVSSBlock(Module):
    """Projection, SS2D and ESTD in parallel, CARG, outer residual.

    The SS2D output passes through a channel LayerNorm before the merge. Δ, B
    and C all scale with the input, so the raw scan output grows roughly with
    the cube of the input scale; the norm keeps the branch scale-free.

    With ``use_estd`` and ``use_carg`` both off this is a plain VSS block:
    X + LN(SS2D(proj(X))).
    """

    def __init__(self, c: int, state_dim: int = 8, use_estd: bool = True, use_carg: bool = True,
                 reduction: int = 4, spatial_kernel: int = 1, shared_channel_branches: bool = False,
                 rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.proj = InputProjection(c, rng)
        self.ss2d = SS2D(c, state_dim, rng)
        self.ss2d_norm = LayerNorm2d(c)
        self.estd = ESTD(c, reduction, rng) if use_estd else None
        self.carg = CARG(c, reduction, spatial_kernel, shared_channel_branches, rng) if use_carg else None
        self.ss2d_enabled = True

    def forward(self, x: Tensor) -> Tensor:
        p = self.proj(x)
        parts = []
        if self.ss2d_enabled:
            parts.append(self.ss2d_norm(self.ss2d(p)))
        if self.estd is not None:
            parts.append(self.estd(p))
        if not parts:
            z = Tensor(np.zeros_like(x.data))
        else:
            z = parts[0]
            for extra in parts[1:]:
                z = ops.add(z, extra)
        if self.carg is not None:
            z = self.carg(z)
        return ops.add(z, x)


class VisionClueMerge(Module):
    """Space-to-depth (c -> 4c at half resolution) then a 1x1 conv to 2c."""

    def __init__(self, c: int, c_out: int | None = None, rng=None):
        self.conv = Conv2d(4 * c, c_out or 2 * c, 1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(ops.space_to_depth(x))


class Backbone(Module):
    """Two stride-2 stem convs, then ESTVSS stages separated by VisionClueMerge.

    Returns the outputs of the last three stages (strides 8, 16, 32).
    """

    strides = (8, 16, 32)

    def __init__(self, cfg: BlockConfig):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        ch = cfg.channels()
        self.stem1 = ConvBNAct(cfg.in_channels, ch[0], 3, 2, rng=rng)
        self.stem2 = ConvBNAct(ch[0], ch[1], 3, 2, rng=rng)
        self.merges = []
        self.stages = []
        prev = ch[1]
        for i, (nb, c, down) in enumerate(cfg.stage_plan()):
            if down:
                self.merges.append(VisionClueMerge(prev, c, rng))
            self.stages.append(_Stage([
                ESTVSSBlock(c, cfg.ssm_state_dim, cfg.use_estd, cfg.use_carg, cfg.reduction,
                            cfg.spatial_kernel, cfg.shared_channel_branches, rng)
                for _ in range(nb)]))
            prev = c

    @property
    def out_channels(self) -> list[int]:
        return [c for _, c, _ in self.cfg.stage_plan()][-3:]

    def forward(self, x: Tensor) -> list[Tensor]:
        x = self.stem2(self.stem1(x))
        feats = []
        for i, stage in enumerate(self.stages):
            if i > 0:
                x = self.merges[i - 1](x)
            x = stage(x)
            feats.append(x)
        return feats[-3:]


class _Stage(Module):
    def __init__(self, blocks: list[ESTVSSBlock]):
        self.blocks = blocks
        self.last_output: np.ndarray | None = None

    def forward(self, x: Tensor) -> Tensor:
        for b in self.blocks:
            x = b(x)
        self.last_output = x.data
        return x


def build_backbone(cfg: BlockConfig) -> Backbone:
    return Backbone(cfg)

