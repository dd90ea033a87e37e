"""
Differentiable operations over :class:`~trsp_prune.core.tensor.Tensor`.

Each function computes its forward value with numpy and hands a closure computing the
input gradients to :func:`~trsp_prune.core.tensor.emit`.
"""

import math
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .enums import NormType
from .errors import DataError, ShapeError
from .tensor import Tensor, add_macs, emit

_GELU_C = math.sqrt(2.0 / math.pi)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from e


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Batched matrix product over the last two axes.

    Raises:
        ShapeError: If either operand has fewer than two axes or the inner extents differ
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as e:
        raise ShapeError(f"matmul: cannot broadcast {a.shape} @ {b.shape}") from e
    add_macs(int(out.size) * a.shape[-1])

    def backward(g: np.ndarray):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return emit("matmul", out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)

    def backward(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return emit("add", a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("sub", a, b)

    def backward(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return emit("sub", a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("mul", a, b)

    def backward(g: np.ndarray):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return emit("mul", a.data * b.data, (a, b), backward)


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a constant. ``scale(x, 1.0)`` returns the values of ``x`` exactly."""

    def backward(g: np.ndarray):
        return (g * factor,)

    return emit("scale", x.data * factor, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    v = x.data
    t = np.tanh(_GELU_C * (v + 0.044715 * v**3))
    out = 0.5 * v * (1.0 + t)

    def backward(g: np.ndarray):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * 0.044715 * v * v)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * dt),)

    return emit("gelu", out, (x,), backward)


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return emit("softmax", y, (x,), backward)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float) -> Tensor:
    """
    Layer normalisation over the last axis with affine parameters.

    Raises:
        ValueError: If ``eps`` is not positive
        ShapeError: If gamma/beta do not match the normalised extent
    """
    if not eps > 0:
        raise ValueError(f"layernorm epsilon must be positive, got {eps}")
    width = x.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise ShapeError(f"layernorm: affine shapes {gamma.shape}/{beta.shape} vs width {width}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    rstd = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * rstd
    out = xhat * gamma.data + beta.data

    def backward(g: np.ndarray):
        dxhat = g * gamma.data
        dx = (rstd / width) * (
            width * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return emit("layernorm", out, (x, gamma, beta), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as e:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from e

    def backward(g: np.ndarray):
        return (g.reshape(x.shape),)

    return emit("reshape", out, (x,), backward)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(int(i) for i in np.argsort(axes))

    def backward(g: np.ndarray):
        return (np.transpose(g, inverse),)

    return emit("transpose", np.transpose(x.data, axes).copy(order="C"), (x,), backward)


def gather(table: Tensor, ids) -> Tensor:
    """
    Index rows of ``table`` along axis 0 (embedding lookup, gate selection).

    Gradients are scatter-added back, so repeated ids accumulate.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"gather: ids outside [0, {table.shape[0]})")

    def backward(g: np.ndarray):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return emit("gather", table.data[ids], (table,), backward)


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by ``value``; those entries get no gradient."""

    def backward(g: np.ndarray):
        return (np.where(mask, 0.0, g),)

    return emit("masked_fill", np.where(mask, value, x.data), (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(g: np.ndarray):
        return (np.broadcast_to(g, x.shape).copy(),)

    return emit("sum", np.asarray(x.data.sum()), (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    n = x.size

    def backward(g: np.ndarray):
        return (np.full(x.shape, float(g) / n),)

    return emit("mean", np.asarray(x.data.sum() / n), (x,), backward)


def token_nll(logits: np.ndarray, tokens: np.ndarray) -> np.ndarray:
    """
    Per-position next-token negative log-likelihood, without recording anything.

    Args:
        logits: Array of shape batch x seq x vocab
        tokens: Integer array of shape batch x seq

    Returns:
        Array of shape batch x (seq - 1); entry ``[k, j]`` scores ``tokens[k, j + 1]``

    Raises:
        DataError: If a target id is outside the vocabulary
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    vocab = logits.shape[-1]
    targets = tokens[:, 1:]
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise DataError(f"target id outside vocabulary of size {vocab}")
    lg = logits[:, :-1, :]
    m = lg.max(axis=-1, keepdims=True)
    lse = m[..., 0] + np.log(np.exp(lg - m).sum(axis=-1))
    picked = np.take_along_axis(lg, targets[..., None], axis=-1)[..., 0]
    return lse - picked


def cross_entropy(logits: Tensor, tokens) -> Tensor:
    """
    Mean next-token negative log-likelihood over all (batch, position) pairs.

    Position ``j`` of ``logits`` predicts ``tokens[:, j + 1]``; the last position has no target.
    """
    if logits.ndim != 3:
        raise ShapeError(f"cross_entropy expects batch x seq x vocab logits, got {logits.shape}")
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.shape != logits.shape[:2]:
        raise ShapeError(f"cross_entropy: tokens {tokens.shape} vs logits {logits.shape}")
    nll = token_nll(logits.data, tokens)
    count = nll.size

    def backward(g: np.ndarray):
        lg = logits.data[:, :-1, :]
        probs = np.exp(lg - lg.max(axis=-1, keepdims=True))
        probs /= probs.sum(axis=-1, keepdims=True)
        np.put_along_axis(
            probs,
            tokens[:, 1:, None],
            np.take_along_axis(probs, tokens[:, 1:, None], axis=-1) - 1.0,
            axis=-1,
        )
        grad = np.zeros_like(logits.data)
        grad[:, :-1, :] = probs * (float(g) / count)
        return (grad,)

    return emit("cross_entropy", np.asarray(nll.sum() / count), (logits,), backward)


def l1_sum(v: Tensor) -> Tensor:
    """Sum of absolute values; the subgradient at zero is taken as zero."""

    def backward(g: np.ndarray):
        return (np.sign(v.data) * g,)

    return emit("l1_sum", np.asarray(np.abs(v.data).sum()), (v,), backward)


def norm_penalty(d: Tensor, flag: NormType, per_vector: bool = False) -> Tensor:
    """
    L1 or L2 norm of ``d``.

    With ``per_vector`` the norm is taken along the last axis and averaged over all leading
    positions, which makes the value independent of batch size and sequence length.
    The L2 gradient is zero wherever the norm is zero.
    """
    data = d.data
    if per_vector:
        vectors = data.reshape(-1, data.shape[-1]) if data.ndim else data.reshape(1, 1)
        count = vectors.shape[0]
    else:
        count = 1

    if flag is NormType.L1:
        value = np.abs(data).sum() / count

        def backward(g: np.ndarray):
            return (np.sign(data) * (float(g) / count),)

    elif flag is NormType.L2:
        if per_vector:
            norms = np.sqrt((data * data).sum(axis=-1, keepdims=True))
            value = norms.sum() / count
        else:
            norms = np.asarray(np.sqrt((data * data).sum()))
            value = norms

        def backward(g: np.ndarray):
            safe = np.where(norms > 0, norms, 1.0)
            unit = np.where(norms > 0, data / safe, 0.0)
            return (unit * (float(g) / count),)

    else:
        raise ValueError(f"Unknown norm flag: {flag!r}")

    return emit(f"norm_penalty_{flag.value}", np.asarray(value), (d,), backward)


_ELEMENTWISE: Dict[str, Callable[..., Tensor]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "gelu": gelu,
    "softmax-lastaxis": softmax,
    "layernorm": layernorm,
}


def elementwise(kind: str, *inputs, **kwargs) -> Tensor:
    """
    Dispatch to one of the elementwise building blocks by name.

    Args:
        kind: One of add, sub, mul, scale, gelu, softmax-lastaxis, layernorm
        inputs: Operands (and the factor for ``scale``, epsilon for ``layernorm``)
    """
    fn: Optional[Callable[..., Tensor]] = _ELEMENTWISE.get(kind)
    if fn is None:
        raise ValueError(f"Unknown elementwise kind {kind!r}; expected {sorted(_ELEMENTWISE)}")
    return fn(*inputs, **kwargs)
