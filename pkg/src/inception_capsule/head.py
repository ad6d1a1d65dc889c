"""Dense classification head, softmax and cross-entropy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError, NumericError

PROB_FLOOR = 1e-12


def head_forward(attn_out: Tensor, w_dense: Tensor) -> Tensor:
    """Flatten ``attn_out[..., J, d]`` and apply ``w_dense[n, J*d]`` (no bias)."""
    attn_out, w_dense = ad.as_tensor(attn_out), ad.as_tensor(w_dense)
    if attn_out.ndim < 2:
        raise DimensionError(f"head_forward: expected [..., J, d] input, got {attn_out.shape}")
    j, d = attn_out.shape[-2:]
    if w_dense.ndim != 2 or w_dense.shape[1] != j * d:
        raise DimensionError(f"head_forward: flattened length {j * d} does not match weights {w_dense.shape}")
    flat = ad.reshape(attn_out, (*attn_out.shape[:-2], j * d))
    return ad.linear(flat, w_dense)


def softmax_probs(logits: Tensor, sign: int = 1) -> Tensor:
    """Class probabilities from logits.

    ``sign=-1`` evaluates ``exp(-f_i) / sum_j exp(-f_j)``, the form with negated
    exponents, for fidelity experiments.  Training uses ``sign=+1``.
    """
    logits = ad.as_tensor(logits)
    if logits.ndim < 1 or logits.shape[-1] < 1:
        raise DimensionError(f"softmax_probs: need at least one logit, got {logits.shape}")
    if not np.all(np.isfinite(logits.data)):
        raise NumericError("softmax_probs: non-finite logits")
    if sign not in (1, -1):
        raise ContractError(f"softmax_probs: sign must be +1 or -1, got {sign}")
    return ad.softmax(logits if sign == 1 else ad.scale(logits, -1.0), axis=-1)


@dataclass
class LossValue:
    loss: Tensor              # batch mean, differentiable
    per_sample: np.ndarray    # one loss per row

    @property
    def value(self) -> float:
        return self.loss.item()


def cross_entropy(probs: Tensor, labels) -> LossValue:
    """Mean of ``-log(max(P[label], 1e-12))`` over the rows of ``probs``."""
    probs = ad.as_tensor(probs)
    P = probs.data
    single = P.ndim == 1
    P2 = P[None] if single else P.reshape(-1, P.shape[-1])
    y = np.atleast_1d(np.asarray(labels)).astype(np.int64).reshape(-1)
    n = P2.shape[-1]
    if y.shape[0] != P2.shape[0]:
        raise DimensionError(f"cross_entropy: {y.shape[0]} labels for {P2.shape[0]} rows")
    if np.any(y < 0) or np.any(y >= n):
        raise ContractError(f"cross_entropy: labels must lie in [0, {n}), got {y.tolist()}")
    rows = np.arange(y.shape[0])
    picked = P2[rows, y]
    clipped = np.maximum(picked, PROB_FLOOR)
    per_sample = -np.log(clipped)
    m = y.shape[0]

    def backward(g):
        gp = np.zeros(P2.shape)
        gp[rows, y] = np.where(picked > PROB_FLOOR, -1.0 / clipped, 0.0) * (float(g) / m)
        return (gp.reshape(P.shape),)

    loss = ad.emit("cross_entropy", (probs,), np.array(per_sample.mean()), backward)
    return LossValue(loss=loss, per_sample=per_sample)
