"""Differentiable kernels used by the span classifier and its encoder.

Each function takes :class:`~bsner.tensor.Tensor` inputs (plain arrays and
scalars are accepted as constants) and returns a new tensor. When a graph
is active and some input requires gradients the op is recorded together
with a closure mapping the output gradient to input gradients.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import IndexedGrad, Tensor, active_graph

CE_FLOOR = 1e-12


class ShapeError(ValueError):
    pass


class NonFiniteError(ValueError):
    pass


def _data(x):
    return x.data if isinstance(x, Tensor) else x


def _make(kind: str, inputs: Sequence, out: np.ndarray, backward) -> Tensor:
    tensors = [t for t in inputs if isinstance(t, Tensor)]
    requires = any(t.requires_grad for t in tensors)
    result = Tensor(out, requires_grad=requires)
    graph = active_graph()
    if graph is not None and requires:
        graph.record(kind, tensors, result, backward)
    return result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_check(kind: str, a, b) -> None:
    sa, sb = np.shape(a), np.shape(b)
    try:
        np.broadcast_shapes(sa, sb)
    except ValueError:
        raise ShapeError(f"{kind}: incompatible shapes {sa} and {sb}") from None


def _binary_grads(pairs):
    """Keep only gradients for tensor operands, in operand order."""
    return [g for x, g in pairs if isinstance(x, Tensor)]


def add(a, b) -> Tensor:
    da, db = _data(a), _data(b)
    _broadcast_check("add", da, db)
    sa, sb = np.shape(da), np.shape(db)

    def backward(g):
        return _binary_grads([(a, _unbroadcast(g, sa)), (b, _unbroadcast(g, sb))])

    return _make("add", [a, b], da + db, backward)


def sub(a, b) -> Tensor:
    da, db = _data(a), _data(b)
    _broadcast_check("sub", da, db)
    sa, sb = np.shape(da), np.shape(db)

    def backward(g):
        return _binary_grads([(a, _unbroadcast(g, sa)), (b, -_unbroadcast(g, sb))])

    return _make("sub", [a, b], da - db, backward)


def mul(a, b) -> Tensor:
    da, db = _data(a), _data(b)
    _broadcast_check("mul", da, db)
    sa, sb = np.shape(da), np.shape(db)

    def backward(g):
        return _binary_grads([(a, _unbroadcast(g * db, sa)), (b, _unbroadcast(g * da, sb))])

    return _make("mul", [a, b], da * db, backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` with ``a`` of shape (..., n, k) and ``b`` of shape (k, m) or (..., k, m)."""
    da, db = _data(a), _data(b)
    if da.ndim < 2 or db.ndim < 2 or da.shape[-1] != db.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {da.shape} and {db.shape}")

    def backward(g):
        ga = g @ np.swapaxes(db, -1, -2)
        if db.ndim == 2:
            gb = da.reshape(-1, da.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(da, -1, -2) @ g, db.shape)
        return _binary_grads([(a, _unbroadcast(ga, da.shape)), (b, gb)])

    return _make("matmul", [a, b], da @ db, backward)


def bilinear(x: Tensor, U: Tensor, y: Tensor) -> Tensor:
    """Per-class bilinear form ``x^T U[:, k, :] y`` for matching leading dims.

    ``x`` is (..., d), ``U`` is (d, c, e), ``y`` is (..., e); result (..., c).
    """
    dx, dU, dy = _data(x), _data(U), _data(y)
    if dU.ndim != 3 or dx.shape[-1] != dU.shape[0] or dy.shape[-1] != dU.shape[2]:
        raise ShapeError(f"bilinear: incompatible shapes {dx.shape} and {dU.shape} and {dy.shape}")
    if dx.shape[:-1] != dy.shape[:-1]:
        raise ShapeError(f"bilinear: leading dims differ, {dx.shape} and {dy.shape}")
    out = np.einsum("...d,dce,...e->...c", dx, dU, dy)

    def backward(g):
        g = np.reshape(g, out.shape)
        flat = (dx.reshape(-1, dx.shape[-1]), g.reshape(-1, g.shape[-1]), dy.reshape(-1, dy.shape[-1]))
        return _binary_grads([
            (x, np.einsum("...c,dce,...e->...d", g, dU, dy)),
            (U, np.einsum("nd,nc,ne->dce", *flat)),
            (y, np.einsum("...d,dce,...c->...e", dx, dU, g)),
        ])

    return _make("bilinear", [x, U, y], out, backward)


def pairwise_bilinear(x: Tensor, U: Tensor, y: Tensor) -> Tensor:
    """Bilinear scores for every (i, j) pair: (B, Ti, d) x (d, c, e) x (B, Tj, e) -> (B, Ti, Tj, c)."""
    dx, dU, dy = _data(x), _data(U), _data(y)
    if (
        dx.ndim != 3 or dy.ndim != 3 or dU.ndim != 3
        or dx.shape[0] != dy.shape[0]
        or dx.shape[2] != dU.shape[0] or dy.shape[2] != dU.shape[2]
    ):
        raise ShapeError(f"pairwise_bilinear: incompatible shapes {dx.shape} and {dU.shape} and {dy.shape}")
    B, Ti, d = dx.shape
    Tj = dy.shape[1]
    _, c, e = dU.shape
    U2 = dU.reshape(d, c * e)
    xu = (dx.reshape(-1, d) @ U2).reshape(B, Ti * c, e)
    out = (xu @ dy.transpose(0, 2, 1)).reshape(B, Ti, c, Tj).transpose(0, 1, 3, 2)

    def backward(g):
        gt = g.transpose(0, 1, 3, 2).reshape(B, Ti * c, Tj)
        gxu = gt @ dy
        gy = gt.transpose(0, 2, 1) @ xu
        gxu2 = gxu.reshape(-1, c * e)
        gx = (gxu2 @ U2.T).reshape(B, Ti, d)
        gU = (dx.reshape(-1, d).T @ gxu2).reshape(d, c, e)
        return _binary_grads([(x, gx), (U, gU), (y, gy)])

    return _make("pairwise_bilinear", [x, U, y], np.ascontiguousarray(out), backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(_data(x))

    def backward(g):
        return [g * (1.0 - out * out)]

    return _make("tanh", [x], out, backward)


def sigmoid(x: Tensor) -> Tensor:
    # tanh form avoids overflow in exp for large |x|
    out = 0.5 * (np.tanh(0.5 * _data(x)) + 1.0)

    def backward(g):
        return [g * out * (1.0 - out)]

    return _make("sigmoid", [x], out, backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    arrays = [_data(t) for t in tensors]
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[a.shape for a in arrays]}") from None
    bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]

    def backward(g):
        parts = np.split(g, bounds, axis=axis)
        return [p for t, p in zip(tensors, parts) if isinstance(t, Tensor)]

    return _make("concat", list(tensors), out, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    arrays = [_data(t) for t in tensors]
    try:
        out = np.stack(arrays, axis=axis)
    except ValueError:
        raise ShapeError(f"stack: incompatible shapes {[a.shape for a in arrays]}") from None

    def backward(g):
        return [np.take(g, k, axis=axis) for k, t in enumerate(tensors) if isinstance(t, Tensor)]

    return _make("stack", list(tensors), out, backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table`` (V, E) for an integer array ``ids``."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise TypeError(f"embedding: ids must be integers, got {ids.dtype}")
    V = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise IndexError(f"embedding: id out of range [0, {V}) (min {ids.min()}, max {ids.max()})")
    out = table.data[ids]

    def backward(g):
        return [IndexedGrad(ids.reshape(-1), g.reshape(-1, *table.shape[1:]))]

    return _make("embedding", [table], out, backward)


def getitem(x: Tensor, key) -> Tensor:
    """Basic (slice/int) indexing; the gradient is scattered back in place."""
    out = _data(x)[key]

    def backward(g):
        return [IndexedGrad(key, g)]

    return _make("getitem", [x], out, backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = _data(x).reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from None

    def backward(g):
        return [g.reshape(src)]

    return _make("reshape", [x], out, backward)


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    out = np.transpose(_data(x), axes)
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        return [np.transpose(g, inv)]

    return _make("transpose", [x], out, backward)


def softmax(x: Tensor) -> Tensor:
    dx = _data(x)
    if not np.all(np.isfinite(dx)):
        raise NonFiniteError("softmax: non-finite input")
    z = np.exp(dx - dx.max(axis=-1, keepdims=True))
    out = z / z.sum(axis=-1, keepdims=True)

    def backward(g):
        return [out * (g - (g * out).sum(axis=-1, keepdims=True))]

    return _make("softmax", [x], out, backward)


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout: kept units are scaled by 1/(1-rate); eval mode is the identity."""
    if not training or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    dx = _data(x)
    keep = 1.0 - rate
    mask = (rng.random(dx.shape) < keep).astype(dx.dtype) / dx.dtype.type(keep)

    def backward(g):
        return [g * mask]

    return _make("dropout", [x], dx * mask, backward)


def soft_cross_entropy(probs: Tensor, targets: np.ndarray) -> Tensor:
    """Row-wise ``-sum_k t_k log(p_k + floor)`` over the last axis.

    ``targets`` is a constant array of the same shape; all-zero rows
    contribute nothing, which is how padding and excluded spans are masked.
    """
    dp = _data(probs)
    if dp.shape != targets.shape:
        raise ShapeError(f"soft_cross_entropy: incompatible shapes {dp.shape} and {targets.shape}")
    if not np.all(np.isfinite(dp)):
        raise NonFiniteError("soft_cross_entropy: log of non-finite input")
    t = targets.astype(dp.dtype, copy=False)
    shifted = dp + dp.dtype.type(CE_FLOOR)
    out = -(t * np.log(shifted)).sum(axis=-1)

    def backward(g):
        g = np.reshape(g, out.shape)  # a single row comes back as shape (1,)
        return [-(g[..., None] * t) / shifted]

    return _make("soft_cross_entropy", [probs], out, backward)


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    dx = _data(x)
    out = np.sum(dx, axis=axis, dtype=np.float64).astype(dx.dtype)
    shape = dx.shape

    def backward(g):
        g = g.reshape(()) if axis is None else np.expand_dims(g, axis)
        return [np.broadcast_to(g, shape)]

    return _make("sum", [x], out, backward)


def mean(x: Tensor, axis=None) -> Tensor:
    dx = _data(x)
    n = dx.size if axis is None else np.prod([dx.shape[a] for a in np.atleast_1d(axis)])
    out = (np.sum(dx, axis=axis, dtype=np.float64) / n).astype(dx.dtype)
    shape = dx.shape

    def backward(g):
        g = g.reshape(()) if axis is None else np.expand_dims(g, axis)
        return [np.broadcast_to(g / dx.dtype.type(n), shape)]

    return _make("mean", [x], out, backward)
