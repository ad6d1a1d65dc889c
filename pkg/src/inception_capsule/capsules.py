"""Primary/class capsules, the squash nonlinearity and dynamic routing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError, NumericError

EPS_NORM = 1e-12


def squash(z: Tensor, axis: int = -1) -> Tensor:
    """``|z|^2 / (1 + |z|^2) * z / |z|`` along ``axis``; exactly zero for tiny norms."""
    z = ad.as_tensor(z)
    Z = z.data
    if not np.all(np.isfinite(Z)):
        raise NumericError("squash: non-finite input")
    n = np.sqrt((Z * Z).sum(axis=axis, keepdims=True))
    live = n > EPS_NORM
    safe_n = np.where(live, n, 1.0)
    s = np.where(live, n / (1.0 + n * n), 0.0)
    out = Z * s
    # d s / d n, divided by n so it multiplies z z^T directly
    ds = np.where(live, (1.0 - n * n) / ((1.0 + n * n) ** 2 * safe_n), 0.0)

    def backward(g):
        return (s * g + Z * ds * (Z * g).sum(axis=axis, keepdims=True),)

    return ad.emit("squash", (z,), out, backward, saved=(axis,))


@dataclass(frozen=True)
class CapsuleSpec:
    n_primary: int = 8
    primary_dim: int = 8
    n_classes: int = 3
    class_dim: int = 16

    @property
    def feature_dim(self) -> int:
        return self.n_primary * self.primary_dim

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.n_primary, self.n_classes, self.class_dim, self.primary_dim)


def primary_capsules(features: Tensor, d_in: int) -> Tensor:
    """Reshape ``features[..., F]`` into ``F // d_in`` squashed capsules."""
    features = ad.as_tensor(features)
    f = features.shape[-1]
    if d_in < 1 or f % d_in:
        raise ConfigError(f"primary_capsules: feature length {f} not divisible by capsule dim {d_in}")
    u = ad.reshape(features, (*features.shape[:-1], f // d_in, d_in))
    return squash(u)


def predict_votes(u: Tensor, w: Tensor) -> Tensor:
    """Votes ``t[..., i, j] = w[i, j] @ u[..., i]`` for ``u[..., N, d_in]``, ``w[N, J, d_out, d_in]``."""
    u, w = ad.as_tensor(u), ad.as_tensor(w)
    if w.ndim != 4 or u.ndim < 2 or u.shape[-2] != w.shape[0] or u.shape[-1] != w.shape[3]:
        raise DimensionError(f"predict_votes: capsules {u.shape} do not fit weights {w.shape}")
    U, W = u.data, w.data
    out = np.einsum("ijok,...ik->...ijo", W, U)

    def backward(g):
        gu = np.einsum("...ijo,ijok->...ik", g, W)
        n, j, o, k = W.shape
        gw = np.einsum("bijo,bik->ijok", g.reshape(-1, n, j, o), U.reshape(-1, n, k))
        return gu, gw

    return ad.emit("predict_votes", (u, w), out, backward)


@dataclass
class RoutingState:
    votes: Tensor          # [..., N, J, d_out]
    logits: Tensor         # [..., N, J], the logits behind the final couplings
    couplings: Tensor      # [..., N, J]
    pre_activations: Tensor  # [..., J, d_out]
    outputs: Tensor        # [..., J, d_out]


def dynamic_routing(votes: Tensor, iterations: int = 3) -> RoutingState:
    """Routing-by-agreement over input capsules (axis -3) and output capsules (axis -2).

    The loop is recorded on the tape so gradients flow through the couplings.
    """
    if iterations < 1:
        raise ConfigError(f"dynamic_routing: iterations must be >= 1, got {iterations}")
    votes = ad.as_tensor(votes)
    if votes.ndim < 3:
        raise DimensionError(f"dynamic_routing: votes must be [..., N, J, d], got {votes.shape}")
    b = Tensor._wrap(np.zeros(votes.shape[:-1]))
    for it in range(iterations):
        c = ad.softmax(b, axis=-1)
        weighted = ad.mul(ad.reshape(c, (*c.shape, 1)), votes)
        z = ad.sum(weighted, axis=-3)
        v = squash(z)
        if it == iterations - 1:
            break
        v_b = ad.reshape(v, (*v.shape[:-2], 1, *v.shape[-2:]))
        agreement = ad.sum(ad.mul(votes, v_b), axis=-1)
        b = ad.add(b, agreement)
    return RoutingState(votes=votes, logits=b, couplings=c, pre_activations=z, outputs=v)


def init_capsule_weights(spec: CapsuleSpec, rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / (spec.primary_dim + spec.class_dim))
    return rng.uniform(-bound, bound, size=spec.weight_shape)
