"""Dense tensors with reverse-mode automatic differentiation.

Just enough machinery to train the networks in this package: elementwise
arithmetic with limited broadcasting, matmul (2-d, batched 3-d, and
batched-by-weight), valid cross-correlation, row softmax, reductions, and
shape ops. Each operation records its parents and a local-gradient closure;
``backward`` replays the tape once in reverse topological order.

Everything is numpy underneath. float64 is used by the gradient-check
oracles, float32 by training.
"""

from contextlib import contextmanager

import numpy as np


class DimensionError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class GraphError(RuntimeError):
    """Misuse of the autodiff graph (e.g. backward from a non-scalar)."""


_GRAD_ENABLED = [True]


@contextmanager
def no_grad():
    """Disable tape recording inside the block (numeric-only evaluation)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def grad_enabled() -> bool:
    return _GRAD_ENABLED[-1]


class Tensor:
    """n-d array plus optional gradient bookkeeping.

    ``data`` is always a float numpy array. ``grad`` accumulates across
    backward passes until explicitly zeroed; trainers zero it before every
    backward.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._bwd = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def assert_finite(self, what: str = "tensor"):
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values in {what}")
        return self

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def swap_last_axes(self) -> "Tensor":
        return swap_last_axes(self)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def backward(self):
        backward(self)


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _make(data, parents, bwd) -> Tensor:
    """Node constructor: records the tape entry only when grads can flow."""
    rg = grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=rg)
    if rg:
        out._parents = tuple(parents)
        out._bwd = bwd
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum out axes that numpy broadcasting introduced or stretched."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# -- elementwise -----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), bwd)


def square(a: Tensor) -> Tensor:
    out = a.data * a.data

    def bwd(g):
        return (2.0 * a.data * g,)

    return _make(out, (a,), bwd)


def pow_scalar(a: Tensor, p: float) -> Tensor:
    out = a.data ** p

    def bwd(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make(out, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def bwd(g):
        return (g * (a.data > 0.0),)

    return _make(out, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), bwd)


# -- matmul ------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.

    Supported forms: (m,k)@(k,n); (B,m,k)@(B,k,n); (B,m,k)@(k,n) where the
    right operand is a shared weight matrix.
    """
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise DimensionError(f"matmul needs 2-d operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"inner dimensions disagree: {ad.shape} @ {bd.shape}")

    if ad.ndim == 2 and bd.ndim == 2:
        out = ad @ bd

        def bwd(g):
            return g @ bd.T, ad.T @ g

    elif ad.ndim == 3 and bd.ndim == 2:
        out = ad @ bd

        def bwd(g):
            ga = g @ bd.T
            k = ad.shape[-1]
            gb = ad.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            return ga, gb

    elif ad.ndim == 3 and bd.ndim == 3:
        if ad.shape[0] != bd.shape[0]:
            raise DimensionError(f"batch dimensions disagree: {ad.shape} @ {bd.shape}")
        out = ad @ bd

        def bwd(g):
            return g @ bd.swapaxes(-1, -2), ad.swapaxes(-1, -2) @ g

    else:
        raise DimensionError(f"unsupported matmul ranks: {ad.shape} @ {bd.shape}")

    return _make(out, (a, b), bwd)


# -- convolution -------------------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int):
    n, c, h, w = x.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    s0, s1, s2, s3 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, ho, wo, c, kh, kw),
        strides=(s0, s2 * stride, s3 * stride, s1, s2, s3),
        writeable=False,
    )
    return view.reshape(n * ho * wo, c * kh * kw), ho, wo


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int) -> Tensor:
    """Valid (no padding) cross-correlation with per-filter bias.

    ``x`` is (C,H,W) or (N,C,H,W); ``kernels`` is (F,C,kh,kw). Output spatial
    extents are floor((H-kh)/stride)+1 by floor((W-kw)/stride)+1.
    """
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernels.data.ndim != 4:
        raise DimensionError("conv2d expects (N,C,H,W) input and (F,C,kh,kw) kernels")
    n, c, h, w = xd.shape
    f, ck, kh, kw = kernels.data.shape
    if ck != c:
        raise DimensionError(f"channel mismatch: input {c}, kernels {ck}")
    if kh > h or kw > w:
        raise DimensionError(f"kernel {kh}x{kw} larger than input {h}x{w}")
    if stride < 1:
        raise DimensionError("stride must be positive")

    cols, ho, wo = _im2col(xd, kh, kw, stride)
    kmat = kernels.data.reshape(f, c * kh * kw)
    out = cols @ kmat.T
    out = out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2) + bias.data.reshape(1, f, 1, 1)
    if squeeze:
        out = out[0]

    def bwd(g):
        gd = g[None] if squeeze else g
        gmat = gd.transpose(0, 2, 3, 1).reshape(-1, f)
        gk = (gmat.T @ cols).reshape(f, c, kh, kw)
        gb = gd.sum(axis=(0, 2, 3))
        gcols = gmat @ kmat
        gcols = gcols.reshape(n, ho, wo, c, kh, kw)
        gx = np.zeros_like(xd)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        return gx[0] if squeeze else gx, gk, gb

    return _make(out, (x, kernels, bias), bwd)


# -- softmax and reductions --------------------------------------------------


def softmax_rows(x: Tensor) -> Tensor:
    """Row-stochastic softmax over the last axis, stabilized by max-subtraction."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return ((g - dot) * out,)

    return _make(out, (x,), bwd)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        gd = np.asarray(g)
        if axis is not None and not keepdims:
            gd = np.expand_dims(gd, axis)
        return (np.broadcast_to(gd, x.shape).copy(),)

    return _make(out, (x,), bwd)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else np.prod(
        [x.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def bwd(g):
        gd = np.asarray(g) / count
        if axis is not None and not keepdims:
            gd = np.expand_dims(gd, axis)
        return (np.broadcast_to(gd, x.shape).copy(),)

    return _make(out, (x,), bwd)


# -- shape ops ---------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def bwd(g):
        return (g.reshape(x.shape),)

    return _make(out, (x,), bwd)


def swap_last_axes(x: Tensor) -> Tensor:
    out = x.data.swapaxes(-1, -2)

    def bwd(g):
        return (g.swapaxes(-1, -2),)

    return _make(out, (x,), bwd)


def transpose(x: Tensor, axes) -> Tensor:
    out = x.data.transpose(axes)
    inverse = np.argsort(axes)

    def bwd(g):
        return (g.transpose(inverse),)

    return _make(out, (x,), bwd)


def concat(parts, axis: int = -1) -> Tensor:
    datas = [p.data for p in parts]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(parts), bwd)


# -- backward pass -----------------------------------------------------------


def backward(out: Tensor):
    """Accumulate d(out)/d(leaf) into every reachable leaf's ``grad``.

    ``out`` must be scalar. Fan-out sums contributions; leaves without
    requires_grad are skipped.
    """
    if out.data.size != 1:
        raise GraphError(f"backward requires a scalar output, got shape {out.shape}")
    if not out.requires_grad:
        raise GraphError("output does not require grad (no tape recorded)")

    order = []
    seen = set()
    stack = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(out): np.ones_like(out.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._bwd is None:
            # leaf: accumulate into persistent grad
            node.grad = g if node.grad is None else node.grad + g
            continue
        parent_grads = node._bwd(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


def zero_grads(params):
    for p in params:
        p.zero_grad()


# -- gradient checking --------------------------------------------------------


def finite_diff_check(loss_fn, params, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` must be deterministic and return a scalar Tensor. The numeric
    side never touches the tape, so it stays an independent oracle for the
    analytic side.
    """
    zero_grads(params)
    loss = loss_fn()
    backward(loss)
    analytic = [None if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    with no_grad():
        for p, an in zip(params, analytic):
            flat = p.data.reshape(-1)
            aflat = None if an is None else an.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                lp = float(loss_fn().data)
                flat[i] = orig - eps
                lm = float(loss_fn().data)
                flat[i] = orig
                numeric = (lp - lm) / (2.0 * eps)
                a = 0.0 if aflat is None else float(aflat[i])
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, rel)
    zero_grads(params)
    return worst
