"""Desk-scale Inception-ResNet feature extractor.

Layout: stem conv + max-pool, block A, reduction, block B, block C, global
average pooling, dropout.  Every conv is bias-free and followed by a relu,
except the final 1x1 "up" conv of each residual branch and the shortcut
projection, which are linear.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class ConvSpec:
    kh: int
    kw: int
    out: int


@dataclass(frozen=True)
class Branch:
    convs: tuple[ConvSpec, ...]
    pool: bool = False  # 3x3 stride-1 max-pool before the first conv


@dataclass(frozen=True)
class BlockSpec:
    name: str
    in_channels: int
    branches: tuple[Branch, ...]
    out_channels: int
    project: bool

    def __post_init__(self):
        if not self.project and self.in_channels != self.out_channels:
            raise ConfigError(f"{self.name}: identity shortcut needs in_channels == out_channels "
                              f"({self.in_channels} != {self.out_channels})")
        for b in self.branches:
            if not b.convs:
                raise ConfigError(f"{self.name}: empty branch")

    @property
    def concat_channels(self) -> int:
        return int(np.sum([b.convs[-1].out for b in self.branches]))


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int = 1
    stem_channels: int = 16
    stem_kernel: int = 3
    stem_pool: int = 2
    branch_width: int = 8
    block_a_out: int = 32
    reduction_channels: int = 16
    feature_dim: int = 64
    drop_rate: float = 0.8
    zero_init_residual: bool = True

    @property
    def reduction_out(self) -> int:
        return self.block_a_out + self.reduction_channels

    @property
    def min_size(self) -> int:
        # stem pool, then the stride-2 reduction must still see a 2x2 map
        return 2 * self.stem_pool


def block_specs(cfg: BackboneConfig) -> list[BlockSpec]:
    w = cfg.branch_width

    def br(*shapes, pool=False):
        return Branch(tuple(ConvSpec(kh, kw, w) for kh, kw in shapes), pool)

    a = BlockSpec("block_a", cfg.stem_channels, (
        br((1, 1)),
        br((1, 1), (3, 3)),
        br((1, 1), (3, 3), (3, 3)),
        br((1, 1), pool=True),
    ), cfg.block_a_out, project=cfg.stem_channels != cfg.block_a_out)
    b = BlockSpec("block_b", cfg.reduction_out, (
        br((1, 1)),
        br((1, 1), (1, 3), (3, 1)),
        br((1, 1), (1, 3), (3, 1), (1, 3), (3, 1)),
        br((1, 1), pool=True),
    ), cfg.reduction_out, project=False)
    c = BlockSpec("block_c", cfg.reduction_out, (
        br((1, 1)),
        br((1, 1), (1, 1)),
        br((1, 1), (1, 3), (3, 1)),
        br((1, 1), pool=True),
    ), cfg.feature_dim, project=cfg.reduction_out != cfg.feature_dim)
    return [a, b, c]


def block_param_shapes(spec: BlockSpec) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for k, branch in enumerate(spec.branches):
        c_in = spec.in_channels
        for m, conv in enumerate(branch.convs):
            shapes[f"{spec.name}.b{k}.conv{m}"] = (conv.out, c_in, conv.kh, conv.kw)
            c_in = conv.out
    shapes[f"{spec.name}.up"] = (spec.out_channels, spec.concat_channels, 1, 1)
    if spec.project:
        shapes[f"{spec.name}.proj"] = (spec.out_channels, spec.in_channels, 1, 1)
    return shapes


def backbone_param_shapes(cfg: BackboneConfig) -> dict[str, tuple[int, ...]]:
    a, b, c = block_specs(cfg)
    shapes = {"stem.conv": (cfg.stem_channels, cfg.in_channels, cfg.stem_kernel, cfg.stem_kernel)}
    shapes.update(block_param_shapes(a))
    shapes["reduction.conv"] = (cfg.reduction_channels, cfg.block_a_out, 2, 2)
    shapes.update(block_param_shapes(b))
    shapes.update(block_param_shapes(c))
    return shapes


def check_input_size(cfg: BackboneConfig, height: int, width: int) -> None:
    if height < cfg.min_size or width < cfg.min_size:
        raise ConfigError(f"input {height}x{width} too small for the block stack; "
                          f"minimum is {cfg.min_size}x{cfg.min_size}")


def glorot_uniform(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def backbone_init(seed: int | np.random.Generator, input_shape: tuple[int, int, int],
                  feature_dim: int | None = None,
                  cfg: BackboneConfig | None = None) -> dict[str, np.ndarray]:
    """Random fallback initialisation; a checkpoint import replaces it."""
    if cfg is None:
        cfg = BackboneConfig(in_channels=input_shape[0], feature_dim=feature_dim or 64)
    elif feature_dim is not None and feature_dim != cfg.feature_dim:
        raise ConfigError(f"feature_dim {feature_dim} disagrees with config ({cfg.feature_dim})")
    if input_shape[0] != cfg.in_channels:
        raise ConfigError(f"input has {input_shape[0]} channels, config expects {cfg.in_channels}")
    check_input_size(cfg, input_shape[1], input_shape[2])
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = {}
    for name, shape in backbone_param_shapes(cfg).items():
        w = glorot_uniform(shape, rng)
        if cfg.zero_init_residual and name.endswith(".up"):
            w = np.zeros(shape)
        params[name] = w
    return params


def _conv_relu(x: Tensor, k: Tensor) -> Tensor:
    return ad.relu(ad.conv2d(x, k, stride=1, padding="same"))


def inception_block_forward(x: Tensor, spec: BlockSpec, params: Mapping[str, Tensor]) -> Tensor:
    x = ad.as_tensor(x)
    if x.ndim < 3 or x.shape[-3] != spec.in_channels:
        raise DimensionError(f"{spec.name}: input {x.shape} does not have {spec.in_channels} channels")
    outs = []
    for k, branch in enumerate(spec.branches):
        h = ad.max_pool2d(x, 3, stride=1, padding=1) if branch.pool else x
        for m in range(len(branch.convs)):
            h = _conv_relu(h, params[f"{spec.name}.b{k}.conv{m}"])
        outs.append(h)
    residual = ad.conv2d(ad.concat_channels(outs), params[f"{spec.name}.up"], padding="valid")
    shortcut = ad.conv2d(x, params[f"{spec.name}.proj"], padding="valid") if spec.project else x
    return ad.relu(ad.add(shortcut, residual))


def reduction_forward(x: Tensor, kernel: Tensor) -> Tensor:
    """Halve H and W (floor) with a 2x2 stride-2 conv beside a 2x2 stride-2 max-pool."""
    x = ad.as_tensor(x)
    if x.ndim < 3 or min(x.shape[-2:]) < 2:
        raise DimensionError(f"reduction: spatial dims of {x.shape} must be >= 2")
    conv = ad.relu(ad.conv2d(x, kernel, stride=2, padding="valid"))
    pooled = ad.max_pool2d(x, 2, stride=2)
    return ad.concat_channels([conv, pooled])


def backbone_forward(image: Tensor, params: Mapping[str, Tensor], cfg: BackboneConfig,
                     training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Image ``[B?, C, H, W]`` to feature vector ``[B?, feature_dim]``."""
    a, b, c = block_specs(cfg)
    stages = [
        ("stem", lambda h: ad.max_pool2d(_conv_relu(h, params["stem.conv"]), cfg.stem_pool)),
        (a.name, lambda h: inception_block_forward(h, a, params)),
        ("reduction", lambda h: reduction_forward(h, params["reduction.conv"])),
        (b.name, lambda h: inception_block_forward(h, b, params)),
        (c.name, lambda h: inception_block_forward(h, c, params)),
    ]
    h = ad.as_tensor(image)
    for name, stage in stages:
        try:
            h = stage(h)
        except DimensionError as e:
            if str(e).startswith(name):
                raise
            raise DimensionError(f"{name}: {e}") from e
    h = ad.avg_pool_global(h)
    return ad.dropout(h, cfg.drop_rate, training, rng)
