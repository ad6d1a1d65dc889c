"""The composed classifier: backbone -> capsules -> (self-attention) -> dense head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .attention import self_attention
from .autodiff import Graph, Tensor
from .backbone import BackboneConfig, backbone_forward, backbone_init, backbone_param_shapes
from .capsules import (
    CapsuleSpec,
    RoutingState,
    dynamic_routing,
    init_capsule_weights,
    predict_votes,
    primary_capsules,
)
from .errors import ConfigError
from .head import cross_entropy, head_forward, softmax_probs


@dataclass(frozen=True)
class ModelConfig:
    input_shape: tuple[int, int, int] = (1, 16, 16)
    n_classes: int = 3
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    primary_dim: int = 8
    class_dim: int = 16
    routing_iters: int = 3
    attention: bool = True
    softmax_sign: int = 1

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        if self.backbone.in_channels != self.input_shape[0]:
            object.__setattr__(self, "backbone", replace(self.backbone, in_channels=self.input_shape[0]))
        if self.n_classes < 2:
            raise ConfigError(f"need at least two classes, got {self.n_classes}")
        if self.routing_iters < 1:
            raise ConfigError(f"routing_iters must be >= 1, got {self.routing_iters}")
        if not 0.0 <= self.backbone.drop_rate < 1.0:
            raise ConfigError(f"drop_rate must be in [0, 1), got {self.backbone.drop_rate}")
        if self.backbone.feature_dim % self.primary_dim:
            raise ConfigError(f"feature_dim {self.backbone.feature_dim} not divisible by "
                              f"primary capsule dim {self.primary_dim}")

    @property
    def capsules(self) -> CapsuleSpec:
        return CapsuleSpec(n_primary=self.backbone.feature_dim // self.primary_dim,
                           primary_dim=self.primary_dim, n_classes=self.n_classes,
                           class_dim=self.class_dim)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> ModelConfig:
        d = dict(d)
        d["backbone"] = BackboneConfig(**d.get("backbone", {}))
        d["input_shape"] = tuple(d["input_shape"])
        return cls(**d)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes = dict(backbone_param_shapes(cfg.backbone))
    caps = cfg.capsules
    shapes["caps.w"] = caps.weight_shape
    shapes["head.w"] = (cfg.n_classes, cfg.n_classes * cfg.class_dim)
    return shapes


def init_params(cfg: ModelConfig, rng: np.random.Generator | int) -> dict[str, np.ndarray]:
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    params = backbone_init(rng, cfg.input_shape, cfg=cfg.backbone)
    params["caps.w"] = init_capsule_weights(cfg.capsules, rng)
    n, f = param_shapes(cfg)["head.w"]
    bound = np.sqrt(6.0 / (n + f))
    params["head.w"] = rng.uniform(-bound, bound, size=(n, f))
    return params


def check_params(params: Mapping[str, np.ndarray], cfg: ModelConfig) -> None:
    expected = param_shapes(cfg)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ConfigError(f"parameter names do not match model config (missing {missing}, unexpected {extra})")
    for name, shape in expected.items():
        if tuple(np.shape(params[name])) != shape:
            raise ConfigError(f"{name}: checkpoint shape {np.shape(params[name])} != model shape {shape}")


@dataclass
class ForwardOutput:
    features: Tensor
    routing: RoutingState
    attended: Tensor
    logits: Tensor
    probs: Tensor


def forward(params: Mapping[str, Tensor], images, cfg: ModelConfig, training: bool = False,
            rng: np.random.Generator | None = None) -> ForwardOutput:
    h = backbone_forward(images, params, cfg.backbone, training=training, rng=rng)
    u = primary_capsules(h, cfg.primary_dim)
    state = dynamic_routing(predict_votes(u, params["caps.w"]), cfg.routing_iters)
    attended = self_attention(state.outputs) if cfg.attention else state.outputs
    logits = head_forward(attended, params["head.w"])
    probs = softmax_probs(logits, sign=cfg.softmax_sign)
    return ForwardOutput(h, state, attended, logits, probs)


def loss_and_grads(params: Mapping[str, np.ndarray], images: np.ndarray, labels: np.ndarray,
                   cfg: ModelConfig, training: bool = True,
                   rng: np.random.Generator | None = None):
    """Mean cross-entropy over a batch, its parameter gradients and the batch probabilities."""
    graph = Graph()
    leaves = {name: graph.leaf(value) for name, value in params.items()}
    out = forward(leaves, Tensor._wrap(images), cfg, training=training, rng=rng)
    lv = cross_entropy(out.probs, labels)
    ad.backward(graph, lv.loss)
    grads = {name: t.grad if t.grad is not None else np.zeros(t.shape) for name, t in leaves.items()}
    return lv.value, grads, out.probs.data


def predict_probs(params: Mapping[str, np.ndarray], images: np.ndarray, cfg: ModelConfig,
                  batch_size: int = 256) -> np.ndarray:
    """Inference-mode class probabilities for ``images[B, C, H, W]``; no rng is consumed."""
    consts = {name: Tensor._wrap(np.asarray(v, dtype=np.float64)) for name, v in params.items()}
    rows = []
    for start in range(0, images.shape[0], batch_size):
        out = forward(consts, Tensor._wrap(images[start:start + batch_size]), cfg, training=False)
        rows.append(out.probs.data)
    if not rows:
        return np.zeros((0, cfg.n_classes))
    return np.concatenate(rows, axis=0)
