"""Parameter-free scaled dot-product self-attention over capsule outputs.

Queries, keys and values are the same matrix, so every output row is a convex
combination of the input rows.
"""

from __future__ import annotations

import math

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError


def attention_score(q: Tensor, k: Tensor) -> Tensor:
    q, k = ad.as_tensor(q), ad.as_tensor(k)
    if q.shape != k.shape or q.ndim != 1:
        raise DimensionError(f"attention_score: query {q.shape} and key {k.shape} must be equal-length vectors")
    return ad.scale(ad.dot(q, k), 1.0 / math.sqrt(q.shape[0]))


def attention_weights(q: Tensor, keys: Tensor) -> Tensor:
    """Softmax over the scores of ``q`` against each row of ``keys[J, d]``."""
    q, keys = ad.as_tensor(q), ad.as_tensor(keys)
    if keys.ndim != 2 or keys.shape[0] < 1 or q.shape != (keys.shape[1],):
        raise DimensionError(f"attention_weights: query {q.shape} does not fit keys {keys.shape}")
    scores = ad.scale(ad.linear(q, keys), 1.0 / math.sqrt(q.shape[0]))
    return ad.softmax(scores, axis=-1)


def self_attention(x: Tensor) -> Tensor:
    """Attention(X, X, X) for ``x[..., J, d]``."""
    x = ad.as_tensor(x)
    if x.ndim < 2 or x.shape[-2] < 1:
        raise DimensionError(f"self_attention: expected [..., J, d] input, got {x.shape}")
    d = x.shape[-1]
    scores = ad.scale(ad.matmul(x, ad.swapaxes(x, -1, -2)), 1.0 / math.sqrt(d))
    return ad.matmul(ad.softmax(scores, axis=-1), x)
