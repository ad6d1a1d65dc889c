"""Finite-difference suite over every differentiable operation and the full model."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .attention import self_attention
from .backbone import (
    BackboneConfig,
    backbone_forward,
    backbone_init,
    block_specs,
    inception_block_forward,
    reduction_forward,
)
from .capsules import dynamic_routing, predict_votes, primary_capsules, squash
from .head import cross_entropy, head_forward, softmax_probs
from .model import ModelConfig, forward, init_params

TOLERANCE = 1e-4
EPS = 1e-5

Case = Callable[[np.random.Generator], tuple[Callable, list, int | None]]


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.uniform(margin, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _weighted(shape, rng):
    r = ad.Tensor(rng.standard_normal(shape))
    return lambda t: ad.sum(ad.mul(t, r))


def _unary(op, shape_fn):
    def case(rng):
        shape = shape_fn()
        w = _weighted(op(ad.Tensor(np.zeros(shape))).shape, rng)
        return (lambda x: w(op(x))), [rng.standard_normal(shape)], None
    return case


def _case_matmul(rng):
    w = _weighted((3, 2), rng)
    return (lambda a, b: w(ad.matmul(a, b))), [rng.standard_normal((3, 4)), rng.standard_normal((4, 2))], None


def _case_matmul_batched(rng):
    w = _weighted((2, 3, 3), rng)
    return ((lambda a, b: w(ad.matmul(a, b))),
            [rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 3))], None)


def _case_linear(rng):
    w = _weighted((5, 3), rng)
    return (lambda x, m: w(ad.linear(x, m))), [rng.standard_normal((5, 4)), rng.standard_normal((3, 4))], None


def _conv_case(kshape, stride, padding, batched=False):
    def case(rng):
        xshape = (2, kshape[1], 6, 7) if batched else (kshape[1], 6, 7)
        probe = ad.conv2d(ad.Tensor(np.zeros(xshape)), ad.Tensor(np.zeros(kshape)), stride, padding)
        w = _weighted(probe.shape, rng)
        return ((lambda x, k: w(ad.conv2d(x, k, stride, padding))),
                [rng.standard_normal(xshape), rng.standard_normal(kshape)], None)
    return case


def _pool_case(window, stride, padding):
    def case(rng):
        xshape = (2, 6, 6)
        probe = ad.max_pool2d(ad.Tensor(np.zeros(xshape)), window, stride, padding)
        w = _weighted(probe.shape, rng)
        return (lambda x: w(ad.max_pool2d(x, window, stride, padding))), [rng.standard_normal(xshape)], None
    return case


def _case_concat(rng):
    w = _weighted((5, 3, 3), rng)
    return ((lambda a, b: w(ad.concat_channels([a, b]))),
            [rng.standard_normal((2, 3, 3)), rng.standard_normal((3, 3, 3))], None)


def _case_relu(rng):
    w = _weighted((4, 5), rng)
    return (lambda x: w(ad.relu(x))), [_away_from_zero(rng, (4, 5))], None


def _case_add(rng):
    w = _weighted((3, 4), rng)
    return (lambda a, b: w(ad.add(a, b))), [rng.standard_normal((3, 4)), rng.standard_normal((3, 4))], None


def _case_mul(rng):
    w = _weighted((3, 4), rng)
    return (lambda a, b: w(ad.mul(a, b))), [rng.standard_normal((3, 4)), rng.standard_normal((1, 4))], None


def _case_dot(rng):
    return (lambda a, b: ad.dot(a, b)), [rng.standard_normal(6), rng.standard_normal(6)], None


def _case_dropout(rng):
    seed = int(rng.integers(1 << 30))
    w = _weighted((4, 6), rng)
    return ((lambda x: w(ad.dropout(x, 0.5, True, np.random.default_rng(seed)))),
            [rng.standard_normal((4, 6))], None)


def _case_squash(rng):
    w = _weighted((4, 5), rng)
    return (lambda z: w(squash(z))), [rng.standard_normal((4, 5))], None


def _case_primary(rng):
    w = _weighted((3, 4), rng)
    return (lambda f: w(primary_capsules(f, 4))), [rng.standard_normal(12)], None


def _case_votes(rng):
    w = _weighted((3, 2, 5), rng)
    return ((lambda u, m: w(predict_votes(u, m))),
            [rng.standard_normal((3, 4)), rng.standard_normal((3, 2, 5, 4))], None)


def _routing_case(iterations):
    def case(rng):
        w = _weighted((3, 4), rng)
        return (lambda t: w(dynamic_routing(t, iterations).outputs)), [rng.standard_normal((4, 3, 4))], None
    return case


def _case_attention(rng):
    w = _weighted((3, 4), rng)
    return (lambda q: w(self_attention(q))), [rng.standard_normal((3, 4))], None


def _case_head(rng):
    label = int(rng.integers(3))

    def fn(x, m):
        return cross_entropy(softmax_probs(head_forward(x, m)), label).loss

    return fn, [rng.standard_normal((2, 4)), rng.standard_normal((3, 8))], None


def _small_backbone(rng, shape=(1, 8, 8)):
    cfg = BackboneConfig(in_channels=shape[0], drop_rate=0.0, zero_init_residual=False)
    params = backbone_init(rng, shape, cfg=cfg)
    return cfg, params


def _block_case(which):
    def case(rng):
        cfg, _ = _small_backbone(rng)
        spec = block_specs(cfg)[which]
        params = backbone_init(rng, (1, 8, 8), cfg=cfg)
        names = [n for n in params if n.startswith(spec.name + ".")]
        x = rng.uniform(0.0, 1.0, size=(spec.in_channels, 4, 4))
        w = _weighted((spec.out_channels, 4, 4), rng)

        def fn(xt, *ws):
            return w(inception_block_forward(xt, spec, dict(zip(names, ws))))

        return fn, [x, *(params[n] for n in names)], 6
    return case


def _case_reduction(rng):
    w = _weighted((5, 3, 3), rng)
    return ((lambda x, k: w(reduction_forward(x, k))),
            [rng.standard_normal((3, 7, 7)), rng.standard_normal((2, 3, 2, 2))], None)


def _case_backbone(rng):
    cfg, params = _small_backbone(rng)
    names = list(params)
    w = _weighted((cfg.feature_dim,), rng)

    def fn(x, *ws):
        return w(backbone_forward(x, dict(zip(names, ws)), cfg, training=False))

    return fn, [rng.uniform(0.0, 1.0, size=(1, 8, 8)), *params.values()], 3


def _model_case(attention):
    def case(rng):
        cfg = ModelConfig(input_shape=(1, 8, 8), n_classes=3, attention=attention,
                          backbone=BackboneConfig(drop_rate=0.0, zero_init_residual=False))
        params = init_params(cfg, rng)
        names = list(params)
        label = int(rng.integers(3))

        def fn(x, *ws):
            out = forward(dict(zip(names, ws)), x, cfg, training=False)
            return cross_entropy(out.probs, label).loss

        return fn, [rng.uniform(0.0, 1.0, size=(1, 8, 8)), *params.values()], 3
    return case


CASES: dict[str, Case] = {
    "matmul": _case_matmul,
    "matmul_batched": _case_matmul_batched,
    "linear": _case_linear,
    "conv2d_same_3x3": _conv_case((3, 2, 3, 3), 1, "same"),
    "conv2d_same_1x3": _conv_case((2, 2, 1, 3), 1, "same"),
    "conv2d_valid_stride2": _conv_case((2, 3, 2, 2), 2, "valid", batched=True),
    "max_pool2d": _pool_case(2, 2, 0),
    "max_pool2d_padded": _pool_case(3, 1, 1),
    "avg_pool_global": _unary(ad.avg_pool_global, lambda: (3, 4, 5)),
    "concat_channels": _case_concat,
    "slice_channels": _unary(lambda x: ad.slice_channels(x, 1, 3), lambda: (4, 2, 2)),
    "relu": _case_relu,
    "add": _case_add,
    "scale": _unary(lambda x: ad.scale(x, -0.7), lambda: (3, 3)),
    "mul_broadcast": _case_mul,
    "sum_axis": _unary(lambda x: ad.sum(x, axis=1), lambda: (3, 4, 2)),
    "dot": _case_dot,
    "reshape": _unary(lambda x: ad.reshape(x, (6, 2)), lambda: (3, 4)),
    "swapaxes": _unary(lambda x: ad.swapaxes(x, 0, 2), lambda: (2, 3, 4)),
    "softmax": _unary(lambda x: ad.softmax(x, axis=-1), lambda: (3, 5)),
    "dropout": _case_dropout,
    "squash": _case_squash,
    "primary_capsules": _case_primary,
    "predict_votes": _case_votes,
    "dynamic_routing_1": _routing_case(1),
    "dynamic_routing_3": _routing_case(3),
    "self_attention": _case_attention,
    "head_softmax_cross_entropy": _case_head,
    "reduction": _case_reduction,
    "inception_block_a": _block_case(0),
    "inception_block_b": _block_case(1),
    "inception_block_c": _block_case(2),
    "backbone": _case_backbone,
    "model_with_attention": _model_case(True),
    "model_without_attention": _model_case(False),
}


@dataclass
class CheckResult:
    name: str
    worst: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.worst < TOLERANCE


def run_case(name: str, seeds=range(10), eps: float = EPS) -> CheckResult:
    start = time.perf_counter()
    worst = 0.0
    for seed in seeds:
        rng = np.random.default_rng(1000 + seed)
        fn, inputs, max_coords = CASES[name](rng)
        worst = max(worst, ad.finite_difference_check(fn, inputs, eps=eps, max_coords=max_coords, seed=seed))
    return CheckResult(name, worst, time.perf_counter() - start)


def run_suite(seeds=range(10), names=None) -> list[CheckResult]:
    return [run_case(n, seeds) for n in (names or CASES)]
