"""Dense float32 tensors with a reverse-mode autodiff tape.

The op set is exactly what the CNN forward pass and the losses need:
elementwise arithmetic with trailing-dim broadcasting, matmul, conv2d,
batchnorm2d, relu, global average pooling, exp/log/sqrt, reductions and
row gathering. Every op checks its output for NaN/Inf and raises instead
of propagating garbage.

Tensors are immutable values once created. A graph is recorded only when
an input requires grad, so plain inference builds no tape. Each backward
pass assembles its own topologically ordered tape from the loss node, so
forwards over distinct inputs can run concurrently.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    InvalidStride,
    NegativeVariance,
    NonFiniteLoss,
    NonFiniteValue,
    NonScalarLoss,
    ShapeMismatch,
)

Array = np.ndarray


def _ensure_finite(data: Array, op: str) -> None:
    # min/max reductions detect NaN (poisons both) and +-Inf without a bool temp
    if data.size == 0:
        return
    lo = float(np.min(data))
    hi = float(np.max(data))
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise NonFiniteValue(f"op '{op}' produced a non-finite value")


def _as_f32(data) -> Array:
    arr = np.asarray(data, dtype=np.float32)
    return arr


class Node:
    """One tape record: op id, input refs and the gradient closure.

    ``backward_fn(grad_out)`` returns one gradient array (or None) per
    parent, aligned with ``parents``.
    """

    __slots__ = ("op", "parents", "backward_fn")

    def __init__(
        self,
        op: str,
        parents: tuple["Tensor", ...],
        backward_fn: Callable[[Array], list[Array | None]],
    ) -> None:
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn


class Tensor:
    """A float32 n-d array, optionally tracked on the autodiff tape."""

    __slots__ = ("data", "requires_grad", "name", "node")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_f32(data)
        _ensure_finite(self.data, "tensor")
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.node: Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def constant(self) -> "Tensor":
        """View of the same buffer, detached from any graph."""
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; scalars are wrapped as constants
    def __add__(self, other):
        return tensor_binop(self, _wrap(other), "add")

    def __radd__(self, other):
        return tensor_binop(_wrap(other), self, "add")

    def __sub__(self, other):
        return tensor_binop(self, _wrap(other), "sub")

    def __rsub__(self, other):
        return tensor_binop(_wrap(other), self, "sub")

    def __mul__(self, other):
        return tensor_binop(self, _wrap(other), "mul")

    def __rmul__(self, other):
        return tensor_binop(_wrap(other), self, "mul")

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __neg__(self):
        return self * -1.0

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _make(data: Array, op: str, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    _ensure_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = Node(op, parents, backward_fn)
    else:
        out.requires_grad = False
        out.node = None
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape``, inverting trailing-dim broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.astype(np.float32, copy=False)


# ---------------------------------------------------------------------------
# elementwise ops


def tensor_binop(a: Tensor, b: Tensor, kind: str) -> Tensor:
    """Broadcasting elementwise add / sub / mul."""
    try:
        if kind == "add":
            data = a.data + b.data
        elif kind == "sub":
            data = a.data - b.data
        elif kind == "mul":
            data = a.data * b.data
        else:
            raise ValueError(f"unknown binop kind {kind!r}")
    except ValueError as exc:
        if "broadcast" in str(exc):
            raise ShapeMismatch(f"{kind}: shapes {a.shape} and {b.shape}") from None
        raise

    a_shape, b_shape = a.shape, b.shape

    def backward(g: Array) -> list[Array | None]:
        ga = gb = None
        if a.requires_grad:
            if kind == "mul":
                ga = _unbroadcast(g * b.data, a_shape)
            else:
                ga = _unbroadcast(g, a_shape)
        if b.requires_grad:
            if kind == "mul":
                gb = _unbroadcast(g * a.data, b_shape)
            elif kind == "sub":
                gb = _unbroadcast(-g, b_shape)
            else:
                gb = _unbroadcast(g, b_shape)
        return [ga, gb]

    return _make(data, kind, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        data = a.data / b.data

    def backward(g: Array) -> list[Array | None]:
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g / b.data, a.shape)
        if b.requires_grad:
            gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return [ga, gb]

    return _make(data, "div", (a, b), backward)


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        data = np.exp(x.data)

    def backward(g: Array) -> list[Array | None]:
        return [g * data]

    return _make(data, "exp", (x,), backward)


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(x.data)

    def backward(g: Array) -> list[Array | None]:
        return [g / x.data]

    return _make(data, "log", (x,), backward)


def sqrt(x: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        data = np.sqrt(x.data)

    def backward(g: Array) -> list[Array | None]:
        return [g * (0.5 / data)]

    return _make(data, "sqrt", (x,), backward)


def _relu_mask(x: Array) -> Array:
    # split out so tests can sabotage the backward path
    return x > 0


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0.0)

    def backward(g: Array) -> list[Array | None]:
        return [g * _relu_mask(x.data)]

    return _make(data, "relu", (x,), backward)


# ---------------------------------------------------------------------------
# reductions and indexing


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims, dtype=np.float32)
    data = np.asarray(data, dtype=np.float32)

    def backward(g: Array) -> list[Array | None]:
        if axis is None:
            return [np.broadcast_to(np.float32(g), x.shape).astype(np.float32)]
        axes = axis if isinstance(axis, tuple) else (axis,)
        gx = g
        if not keepdims:
            gx = np.expand_dims(gx, axes)
        return [np.broadcast_to(gx, x.shape).astype(np.float32)]

    return _make(data, "sum", (x,), backward)


def tensor_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return tensor_sum(x, axis=axis, keepdims=keepdims) * np.float32(1.0 / count)


def take_rows(x: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather rows of a 2-D tensor; backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.int64)
    if x.data.ndim != 2:
        raise ShapeMismatch(f"take_rows expects a 2-D tensor, got {x.shape}")
    if idx.size == 0:
        raise ShapeMismatch("take_rows with empty index list")
    if idx.min() < 0 or idx.max() >= x.shape[0]:
        raise ShapeMismatch(f"row index out of range for {x.shape[0]} rows")
    data = x.data[idx]

    def backward(g: Array) -> list[Array | None]:
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return [gx]

    return _make(data, "take_rows", (x,), backward)


# ---------------------------------------------------------------------------
# matmul


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatch(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul inner dims: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g: Array) -> list[Array | None]:
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return [ga, gb]

    return _make(data, "matmul", (a, b), backward)


# ---------------------------------------------------------------------------
# convolution


def _conv_out_hw(h: int, w: int, kh: int, kw: int, stride: int, pad: int) -> tuple[int, int]:
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    return oh, ow


def _im2col(xp: Array, kh: int, kw: int, stride: int, oh: int, ow: int) -> Array:
    """(N,C,Hp,Wp) -> (N*oh*ow, C*kh*kw) patch matrix, row-major patches."""
    n, c = xp.shape[0], xp.shape[1]
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :]  # (N,C,oh,ow,kh,kw)
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    x: (N,C,H,W), kernel: (F,C,kh,kw) -> (N,F,H',W') with
    H' = (H + 2*pad - kh) // stride + 1.
    """
    if stride < 1:
        raise InvalidStride(f"stride must be >= 1, got {stride}")
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeMismatch(f"conv2d expects 4-D input/kernel, got {x.shape}, {kernel.shape}")
    n, c, h, w = x.shape
    f, ck, kh, kw = kernel.shape
    if ck != c:
        raise ShapeMismatch(f"conv2d channels: input {c} vs kernel {ck}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ShapeMismatch(f"kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    oh, ow = _conv_out_hw(h, w, kh, kw, stride, pad)

    if pad > 0:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    wmat = kernel.data.reshape(f, c * kh * kw)
    out = (cols @ wmat.T).reshape(n, oh, ow, f).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    # save the patch matrix only when the kernel gradient will be needed
    saved_cols = cols if kernel.requires_grad else None

    def backward(g: Array) -> list[Array | None]:
        gflat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, f)
        gx = gw = None
        if kernel.requires_grad:
            gw = (gflat.T @ saved_cols).reshape(f, c, kh, kw)
        if x.requires_grad:
            dcols = (gflat @ wmat).reshape(n, oh, ow, c, kh, kw)
            gxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float32)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad > 0 else gxp
        return [gx, gw]

    return _make(out, "conv2d", (x, kernel), backward)


def conv2d_direct(x: Array, kernel: Array, stride: int = 1, pad: int = 0) -> Array:
    """Loop-nest reference convolution; the oracle the fast path must match."""
    n, c, h, w = x.shape
    f, _, kh, kw = kernel.shape
    oh, ow = _conv_out_hw(h, w, kh, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))).astype(np.float64)
    k64 = kernel.astype(np.float64)
    out = np.zeros((n, f, oh, ow), dtype=np.float64)
    for ni in range(n):
        for fi in range(f):
            for oi in range(oh):
                for oj in range(ow):
                    acc = 0.0
                    for ci in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                acc += xp[ni, ci, oi * stride + i, oj * stride + j] * k64[fi, ci, i, j]
                    out[ni, fi, oi, oj] = acc
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# batch normalization


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    eps: float = 1e-5,
    mode: str = "eval",
    momentum: float = 0.1,
) -> Tensor:
    """Per-channel batch normalization over (N,C,H,W).

    eval mode normalizes with the running statistics and never writes
    them; train mode normalizes with batch statistics and updates the
    running buffers in place (biased variance for normalization,
    unbiased for the running update).
    """
    if eps <= 0:
        raise ShapeMismatch(f"batchnorm eps must be > 0, got {eps}")
    if x.data.ndim != 4:
        raise ShapeMismatch(f"batchnorm2d expects (N,C,H,W), got {x.shape}")
    c = x.shape[1]
    for t, label in ((gamma, "gamma"), (beta, "beta"), (running_mean, "running_mean"), (running_var, "running_var")):
        if t.shape != (c,):
            raise ShapeMismatch(f"batchnorm {label} shape {t.shape}, expected ({c},)")
    if float(running_var.data.min()) < 0:
        raise NegativeVariance("running_var has a negative entry")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown batchnorm mode {mode!r}")

    bc = (1, c, 1, 1)
    if mode == "eval":
        mu = running_mean.data.reshape(bc)
        var = running_var.data.reshape(bc)
    else:
        axes = (0, 2, 3)
        mu_c = x.data.mean(axis=axes, dtype=np.float64)
        var_c = x.data.var(axis=axes, dtype=np.float64)
        count = x.data.size // c
        if count > 1:
            var_unbiased = var_c * (count / (count - 1))
        else:
            var_unbiased = var_c
        # in-place running update; stats buffers are never graph nodes
        running_mean.data[...] = ((1 - momentum) * running_mean.data + momentum * mu_c).astype(np.float32)
        running_var.data[...] = ((1 - momentum) * running_var.data + momentum * var_unbiased).astype(np.float32)
        mu = mu_c.astype(np.float32).reshape(bc)
        var = var_c.astype(np.float32).reshape(bc)

    inv_std = 1.0 / np.sqrt(var + np.float32(eps))
    xhat = (x.data - mu) * inv_std
    out = gamma.data.reshape(bc) * xhat + beta.data.reshape(bc)

    def backward(g: Array) -> list[Array | None]:
        axes = (0, 2, 3)
        ggamma = (g * xhat).sum(axis=axes).astype(np.float32) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes).astype(np.float32) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gw = gamma.data.reshape(bc) * inv_std
            if mode == "eval":
                gx = g * gw
            else:
                m = x.data.size // c
                gsum = g.sum(axis=axes, keepdims=True)
                gxhat_sum = (g * xhat).sum(axis=axes, keepdims=True)
                gx = gw * (g - gsum / m - xhat * gxhat_sum / m)
        return [gx, ggamma, gbeta, None, None]

    return _make(out, "batchnorm2d", (x, gamma, beta, running_mean, running_var), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """(N,C,H,W) -> (N,C) mean over the spatial dims."""
    if x.data.ndim != 4:
        raise ShapeMismatch(f"global_avg_pool expects (N,C,H,W), got {x.shape}")
    n, c, h, w = x.shape
    data = x.data.mean(axis=(2, 3), dtype=np.float32)

    def backward(g: Array) -> list[Array | None]:
        gx = np.broadcast_to(g[:, :, None, None] / np.float32(h * w), x.shape).astype(np.float32)
        return [gx]

    return _make(data, "global_avg_pool", (x,), backward)


# ---------------------------------------------------------------------------
# backward pass


class Tape:
    """Topologically ordered node list reachable from one root tensor."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes  # tensors carrying Node records, inputs first

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen or t.node is None:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for p in t.node.parents:
                if p.node is not None and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)


def backward(loss: Tensor) -> dict[Tensor, Tensor]:
    """Run reverse-mode accumulation from a finite scalar loss.

    Returns gradients for every requires_grad leaf reachable from the
    loss, keyed by the leaf tensor itself. Leaves with requires_grad
    False get no entry.
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss has shape {loss.shape}")
    if not np.isfinite(loss.data.reshape(())):
        raise NonFiniteLoss("loss is not finite")

    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    leaf_grads: dict[Tensor, Tensor] = {}
    if loss.node is None:
        if loss.requires_grad:
            leaf_grads[loss] = Tensor(np.ones_like(loss.data))
        return leaf_grads

    tape = Tape.from_root(loss)
    for t in reversed(tape.nodes):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        parent_grads = t.node.backward_fn(g)
        for p, pg in zip(t.node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            _ensure_finite(pg, f"backward[{t.node.op}]")
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
            if p.node is None:
                leaf_grads[p] = Tensor(grads[key])
    return leaf_grads


def activations_and_pool(x: Tensor, kind: str) -> Tensor:
    """Dispatch helper: kind is 'relu' or 'global_avg_pool'."""
    if kind == "relu":
        return relu(x)
    if kind == "global_avg_pool":
        return global_avg_pool(x)
    raise ValueError(f"unknown kind {kind!r}")
