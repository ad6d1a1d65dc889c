"""Dense float64 tensors with a tape-style reverse-mode graph.

Every differentiable operation appends one node to the :class:`Graph` its
inputs belong to.  Node ids are assigned in insertion order, so the tape is
already a topological order and :func:`backward` is a single reverse sweep.
Tensors that belong to no graph are constants: operations on them compute the
forward value only, which is what the finite-difference checker relies on.

Spatial operations accept either an unbatched ``C x H x W`` tensor or a
batched ``B x C x H x W`` tensor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ContractError, DimensionError, NumericError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "grad", "graph", "node_id")

    def __init__(self, data, *, graph: Graph | None = None, node_id: int | None = None):
        arr = np.array(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.graph = graph
        self.node_id = node_id

    @classmethod
    def _wrap(cls, arr: np.ndarray, graph: Graph | None = None, node_id: int | None = None) -> Tensor:
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        if arr.flags.writeable:
            arr.setflags(write=False)
        t.data = arr
        t.grad = None
        t.graph = graph
        t.node_id = node_id
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        where = "const" if self.graph is None else f"node={self.node_id}"
        return f"Tensor(shape={self.shape}, {where})"


@dataclass(frozen=True)
class Node:
    op: str
    # node ids of the inputs; None marks a constant input
    inputs: tuple[Optional[int], ...]
    saved: tuple = ()
    backward: Optional[BackwardFn] = None


@dataclass
class Graph:
    nodes: list[Node] = field(default_factory=list)
    tensors: list[Tensor] = field(default_factory=list)

    def leaf(self, value) -> Tensor:
        """Register ``value`` (array or Tensor) as a differentiable input."""
        data = value.data if isinstance(value, Tensor) else value
        t = Tensor(data, graph=self, node_id=len(self.nodes))
        self.nodes.append(Node("leaf", ()))
        self.tensors.append(t)
        return t

    def record(self, op: str, inputs: Sequence[Tensor], out: np.ndarray,
               backward: BackwardFn, saved: tuple = ()) -> Tensor:
        ids = tuple(x.node_id if x.graph is self else None for x in inputs)
        t = Tensor._wrap(out, self, len(self.nodes))
        self.nodes.append(Node(op, ids, saved, backward))
        self.tensors.append(t)
        return t

    def __len__(self) -> int:
        return len(self.nodes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _common_graph(inputs: Sequence[Tensor]) -> Graph | None:
    graph = None
    for x in inputs:
        if x.graph is not None:
            if graph is not None and x.graph is not graph:
                raise ContractError("operation mixes tensors from different graphs")
            graph = x.graph
    return graph


def emit(op: str, inputs: Sequence[Tensor], out: np.ndarray, backward: BackwardFn,
         saved: tuple = ()) -> Tensor:
    graph = _common_graph(inputs)
    if graph is None:
        return Tensor._wrap(out)
    return graph.record(op, inputs, out, backward, saved)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    A, B = a.data, b.data
    out = A @ B

    def backward(g):
        return (_unbroadcast(g @ np.swapaxes(B, -1, -2), A.shape),
                _unbroadcast(np.swapaxes(A, -1, -2) @ g, B.shape))

    return emit("matmul", (a, b), out, backward)


def linear(x: Tensor, w: Tensor) -> Tensor:
    """``x @ w.T`` for ``x[..., F]`` and ``w[n, F]``."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.ndim < 1 or x.shape[-1] != w.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {w.shape}")
    X, W = x.data, w.data
    out = X @ W.T

    def backward(g):
        gw = g.reshape(-1, W.shape[0]).T @ X.reshape(-1, W.shape[1])
        return g @ W, gw

    return emit("linear", (x, w), out, backward)


# ---------------------------------------------------------------------------
# spatial


def _as_batched(x: Tensor, op: str) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x.data[None], False
    if x.ndim == 4:
        return x.data, True
    raise DimensionError(f"{op}: expected C x H x W or B x C x H x W input, got {x.shape}")


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlation of ``x`` with ``kernels[C_out, C_in, kh, kw]`` (no bias)."""
    x, kernels = as_tensor(x), as_tensor(kernels)
    X, batched = _as_batched(x, "conv2d")
    K = kernels.data
    if K.ndim != 4:
        raise DimensionError(f"conv2d: kernels must be 4-D, got {K.shape}")
    if stride < 1:
        raise ConfigError(f"conv2d: stride must be >= 1, got {stride}")
    c_out, c_in, kh, kw = K.shape
    if X.shape[1] != c_in:
        raise DimensionError(f"conv2d: input has {X.shape[1]} channels, kernels expect {c_in}")
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ConfigError(f"conv2d: 'same' padding needs odd kernel sizes, got {kh}x{kw}")
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
    elif padding == "valid":
        ph = pw = 0
    else:
        raise ConfigError(f"conv2d: unknown padding {padding!r}")
    H, W = X.shape[2:]
    if kh > H + 2 * ph or kw > W + 2 * pw:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {H + 2 * ph}x{W + 2 * pw}")

    Xp = np.pad(X, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else X
    win = sliding_window_view(Xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    out = np.tensordot(win, K, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    def backward(g):
        g4 = g if batched else g[None]
        gk = np.tensordot(g4, win, axes=([0, 2, 3], [0, 2, 3]))
        gxp = np.zeros(Xp.shape)
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(g4, K[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                gxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += contrib
        gx = gxp[:, :, ph:ph + H, pw:pw + W]
        return (gx if batched else gx[0]), gk

    return emit("conv2d", (x, kernels), out if batched else out[0], backward,
                 saved=(stride, padding))


def max_pool2d(x: Tensor, window: int, stride: int | None = None, padding: int = 0) -> Tensor:
    """Square-window max pooling; padded cells never win.

    The gradient goes to the first maximal element of each window in
    row-major order.
    """
    x = as_tensor(x)
    X, batched = _as_batched(x, "max_pool2d")
    stride = window if stride is None else stride
    if window < 1 or stride < 1 or padding < 0 or padding >= window:
        raise ConfigError(f"max_pool2d: bad window/stride/padding {window}/{stride}/{padding}")
    B, C, H, W = X.shape
    if window > H + 2 * padding or window > W + 2 * padding:
        raise DimensionError(f"max_pool2d: window {window} larger than input {H}x{W}")
    Xp = X
    if padding:
        Xp = np.pad(X, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                    constant_values=-np.inf)
    Hp, Wp = Xp.shape[2:]
    win = sliding_window_view(Xp, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    flat = win.reshape(B, C, ho, wo, window * window)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    rows = np.arange(ho)[:, None] * stride + arg // window
    cols = np.arange(wo)[None, :] * stride + arg % window
    plane = (np.arange(B * C).reshape(B, C, 1, 1)) * (Hp * Wp)
    target = (plane + rows * Wp + cols).ravel()

    def backward(g):
        g4 = g if batched else g[None]
        gxp = np.bincount(target, weights=g4.ravel(), minlength=B * C * Hp * Wp)
        gx = gxp.reshape(B, C, Hp, Wp)[:, :, padding:padding + H, padding:padding + W]
        return (gx if batched else gx[0],)

    return emit("max_pool2d", (x,), out if batched else out[0], backward,
                 saved=(window, stride, padding))


def avg_pool_global(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.ndim < 3:
        raise DimensionError(f"avg_pool_global: expected C x H x W input, got {x.shape}")
    H, W = x.shape[-2:]
    out = x.data.mean(axis=(-2, -1))

    def backward(g):
        return (np.broadcast_to(g[..., None, None] / (H * W), x.shape),)

    return emit("avg_pool_global", (x,), out, backward)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat_channels: no parts")
    ref = parts[0].shape
    for p in parts:
        if p.ndim < 3 or p.ndim != len(ref) or p.shape[:-3] != ref[:-3] or p.shape[-2:] != ref[-2:]:
            raise DimensionError(f"concat_channels: incompatible shapes {[q.shape for q in parts]}")
    sizes = [p.shape[-3] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=-3)
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=-3))

    return emit("concat_channels", parts, out, backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    if not 0 <= start < stop <= x.shape[-3]:
        raise DimensionError(f"slice_channels: [{start}:{stop}] out of range for {x.shape}")
    out = x.data[..., start:stop, :, :]

    def backward(g):
        gx = np.zeros(x.shape)
        gx[..., start:stop, :, :] = g
        return (gx,)

    return emit("slice_channels", (x,), out, backward)


# ---------------------------------------------------------------------------
# elementwise and reductions


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    X = x.data
    out = np.maximum(X, 0.0)
    return emit("relu", (x,), out, lambda g: (g * (X > 0),))


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def scale(a: Tensor, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)
    return emit("scale", (a,), a.data * s, lambda g: (g * s,), saved=(s,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    A, B = a.data, b.data
    try:
        out = A * B
    except ValueError:
        raise DimensionError(f"mul: cannot broadcast {A.shape} with {B.shape}") from None

    def backward(g):
        return _unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)

    return emit("mul", (a, b), out, backward)


def sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return emit("sum", (x,), out, backward, saved=(axis, keepdims))


def dot(a: Tensor, b: Tensor) -> Tensor:
    return sum(mul(a, b))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return emit("reshape", (x,), out, lambda g: (g.reshape(x.shape),))


def swapaxes(x: Tensor, a1: int, a2: int) -> Tensor:
    x = as_tensor(x)
    out = np.swapaxes(x.data, a1, a2)
    return emit("swapaxes", (x,), out, lambda g: (np.swapaxes(g, a1, a2),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return emit("softmax", (x,), s, backward, saved=(axis,))


def dropout(x: Tensor, drop_prob: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1 / (1 - drop_prob)``."""
    if not 0.0 <= drop_prob < 1.0:
        raise ConfigError(f"dropout: drop_prob must be in [0, 1), got {drop_prob}")
    x = as_tensor(x)
    if not training or drop_prob == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout: training mode needs an rng")
    mask = (rng.random(x.shape) >= drop_prob) / (1.0 - drop_prob)
    return emit("dropout", (x,), x.data * mask, lambda g: (g * mask,), saved=(drop_prob,))


# ---------------------------------------------------------------------------
# reverse sweep and gradient checking


def backward(graph: Graph, loss: Tensor) -> None:
    """Fill ``grad`` on every tensor of ``graph`` that ``loss`` depends on."""
    if loss.graph is not graph or loss.node_id is None:
        raise ContractError("backward: loss does not belong to this graph")
    if loss.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    adjoint: dict[int, np.ndarray] = {loss.node_id: np.ones(loss.shape)}
    for k in range(loss.node_id, -1, -1):
        g = adjoint.pop(k, None)
        if g is None:
            continue
        graph.tensors[k].grad = np.array(g)
        node = graph.nodes[k]
        if node.backward is None:
            continue
        for src, gi in zip(node.inputs, node.backward(g)):
            if src is None or gi is None:
                continue
            prev = adjoint.get(src)
            adjoint[src] = gi if prev is None else prev + gi


def finite_difference_check(fn: Callable[..., Tensor], inputs: Sequence, eps: float = 1e-5,
                            max_coords: int | None = None, seed: int = 0) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    ``fn`` maps input tensors to a scalar tensor.  With ``max_coords`` set,
    only that many randomly chosen coordinates per input are probed.
    """
    if eps <= 0:
        raise ConfigError(f"finite_difference_check: eps must be positive, got {eps}")
    arrays = [np.array(as_tensor(x).data, dtype=np.float64) for x in inputs]
    graph = Graph()
    leaves = [graph.leaf(a) for a in arrays]
    out = fn(*leaves)
    if out.size != 1:
        raise ContractError(f"finite_difference_check: closure must return a scalar, got {out.shape}")
    backward(graph, out)
    rng = np.random.default_rng(seed)

    def value(args) -> float:
        return float(fn(*[Tensor._wrap(a) for a in args]).data.reshape(-1)[0])

    worst = 0.0
    for i, a in enumerate(arrays):
        analytic = leaves[i].grad if leaves[i].grad is not None else np.zeros(a.shape)
        analytic = analytic.reshape(-1)
        coords = np.arange(a.size)
        if max_coords is not None and a.size > max_coords:
            coords = np.sort(rng.choice(a.size, size=max_coords, replace=False))
        for c in coords:
            flat = a.reshape(-1)
            plus, minus = flat.copy(), flat.copy()
            plus[c] += eps
            minus[c] -= eps
            args_p = [*arrays[:i], plus.reshape(a.shape), *arrays[i + 1:]]
            args_m = [*arrays[:i], minus.reshape(a.shape), *arrays[i + 1:]]
            numeric = (value(args_p) - value(args_m)) / (2 * eps)
            an = float(analytic[c])
            if not (np.isfinite(numeric) and np.isfinite(an)):
                raise NumericError(f"non-finite gradient at input {i}, coordinate {int(c)} "
                                   f"(analytic={an}, numeric={numeric})")
            err = abs(an - numeric) / max(abs(an), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
