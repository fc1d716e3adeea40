"""Reverse-mode automatic differentiation over float64 numpy arrays.

Small closure-based tape in the micrograd style: every operation returns a
fresh Tensor holding its value, its parents, and a backward closure that
maps the output gradient to parent gradients.  ``backward()`` runs the
closures in reverse topological order.

Design constraints the rest of the toolkit relies on:

* float64 and C-contiguous everywhere, so finite-difference checks can use
  tight tolerances and checkpoints roundtrip bit-exactly;
* no in-place mutation of any tensor that participates in a graph;
* deterministic forward values for identical inputs (fixed numpy reduction
  order);
* domain violations (log of a non-positive, division blow-up, exp overflow)
  raise DivergenceError instead of propagating inf/nan.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import ContractError, DivergenceError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    # ascontiguousarray would promote 0-d to shape (1,); keep 0-d intact
    if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_spent")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._spent = False

    # -- construction of op outputs -------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents, backward):
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- basic properties ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- backward --------------------------------------------------------

    def backward(self):
        """Backpropagate from this scalar through the recorded graph.

        Each graph may be consumed once; rerunning without a fresh forward
        pass raises ContractError.
        """
        if self.data.size != 1:
            raise ContractError("backward requires a scalar output")
        if not self.requires_grad:
            raise ContractError("output does not require grad")

        order = _toposort(self)
        for node in order:
            if node._backward is not None and node._spent:
                raise ContractError("backward called twice on the same graph")

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            node._spent = True
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                # accumulation allocates a fresh array, so aliasing g is safe
                parent.grad = g if parent.grad is None else parent.grad + g

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return pow_const(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if len(axes) != 1 else axes[0])

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def _toposort(root: Tensor):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_finite(arr: np.ndarray, op: str):
    if not np.isfinite(arr).all():
        raise DivergenceError(f"non-finite values produced by {op}")


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data + b.data
    except ValueError as e:
        raise ContractError(f"add: {e}") from None

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data - b.data
    except ValueError as e:
        raise ContractError(f"sub: {e}") from None

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._result(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data * b.data
    except ValueError as e:
        raise ContractError(f"mul: {e}") from None

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._result(data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        with np.errstate(divide="ignore", invalid="ignore"):
            data = a.data / b.data
    except ValueError as e:
        raise ContractError(f"div: {e}") from None
    _check_finite(data, "div")

    def backward(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._result(data, (a, b), backward)


def neg(a) -> Tensor:
    a = _wrap(a)
    return Tensor._result(-a.data, (a,), lambda g: (-g,))


def pow_const(a, exponent: float) -> Tensor:
    """Elementwise power with a constant real exponent."""
    a = _wrap(a)
    c = float(exponent)
    data = a.data**c
    _check_finite(data, "pow")

    def backward(g):
        return (g * c * a.data ** (c - 1.0),)

    return Tensor._result(data, (a,), backward)


def exp(a) -> Tensor:
    a = _wrap(a)
    with np.errstate(over="ignore"):
        data = np.exp(a.data)
    _check_finite(data, "exp")
    return Tensor._result(data, (a,), lambda g: (g * data,))


def log(a) -> Tensor:
    a = _wrap(a)
    if np.any(a.data <= 0.0):
        raise DivergenceError("log of a non-positive value")
    data = np.log(a.data)
    return Tensor._result(data, (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = _wrap(a)
    if np.any(a.data < 0.0):
        raise DivergenceError("sqrt of a negative value")
    data = np.sqrt(a.data)
    return Tensor._result(data, (a,), lambda g: (g * 0.5 / data,))


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0.0
    return Tensor._result(a.data * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = _wrap(a)
    factor = np.where(a.data > 0.0, 1.0, slope)
    return Tensor._result(a.data * factor, (a,), lambda g: (g * factor,))


def clamp_min(a, floor: float) -> Tensor:
    """max(x, floor); gradient passes where x >= floor (clamped region is flat)."""
    a = _wrap(a)
    mask = a.data >= floor
    return Tensor._result(np.maximum(a.data, floor), (a,), lambda g: (g * mask,))


def tanh(a) -> Tensor:
    a = _wrap(a)
    data = np.tanh(a.data)
    return Tensor._result(data, (a,), lambda g: (g * (1.0 - data * data),))


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    x = a.data
    # evaluate on the side that keeps exp() bounded
    data = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        return (g * data * (1.0 - data),)

    return Tensor._result(data, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra and shape
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul expects (n,k)@(k,m), got {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor._result(data, (a, b), backward)


def linear(x, weight, bias) -> Tensor:
    """x[B,F_in] @ weight[F_in,F_out] + bias[F_out]."""
    return add(matmul(x, weight), bias)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    data = np.ascontiguousarray(a.data.reshape(shape))
    return Tensor._result(data, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = _wrap(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    data = np.ascontiguousarray(a.data.transpose(axes))
    return Tensor._result(data, (a,), lambda g: (np.ascontiguousarray(g.transpose(inverse)),))


def getitem(a, index) -> Tensor:
    """Basic indexing (ints and slices); gradient scatters into zeros."""
    a = _wrap(a)
    data = a.data[index]
    if data.base is not None:
        data = np.ascontiguousarray(data)

    def backward(g):
        ga = np.zeros(a.shape)
        ga[index] += g
        return (ga,)

    return Tensor._result(data, (a,), backward)


def concatenate(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ContractError(f"concatenate: {e}") from None
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        pieces = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            pieces.append(np.ascontiguousarray(g[tuple(sl)]))
        return tuple(pieces)

    return Tensor._result(data, tensors, backward)


def stack(tensors, axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        t = _wrap(t)
        shape = list(t.shape)
        shape.insert(axis, 1)
        expanded.append(reshape(t, tuple(shape)))
    return concatenate(expanded, axis=axis)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    axes = tuple(a % ndim for a in axis)
    if len(set(axes)) != len(axes) or any(a >= ndim for a in axes):
        raise ContractError(f"invalid reduction axes {axis} for ndim {ndim}")
    return axes


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    axes = _norm_axes(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)
    kept = tuple(1 if i in axes else n for i, n in enumerate(a.shape))

    def backward(g):
        return (np.broadcast_to(g.reshape(kept), a.shape).copy(),)

    return Tensor._result(np.asarray(data), (a,), backward)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return mul(reduce_sum(a, axis, keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        return ((g - inner) * data,)

    return Tensor._result(data, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    """x - logsumexp(x); numerically safe source of log-probabilities."""
    a = _wrap(a)
    m = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True)) + m
    data = a.data - lse
    probs = np.exp(data)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return Tensor._result(data, (a,), backward)


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------


def conv2d(x, weight, bias, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x[B,C,H,W] with weight[O,C,kh,kw] plus bias[O].

    Implemented as one tensordot per kernel offset, which keeps memory flat
    and leaves all heavy lifting to BLAS.
    """
    x, weight, bias = _wrap(x), _wrap(weight), _wrap(bias)
    B, C, H, W = x.shape
    O, Cw, kh, kw = weight.shape
    if Cw != C:
        raise ContractError(f"conv2d channel mismatch: input {C}, kernel {Cw}")
    s, p = int(stride), int(padding)
    if (H + 2 * p - kh) % s or (W + 2 * p - kw) % s:
        raise ContractError("conv2d output extent is not integral")
    oh = (H + 2 * p - kh) // s + 1
    ow = (W + 2 * p - kw) // s + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    out = np.zeros((B, O, oh, ow))
    for u in range(kh):
        for v in range(kw):
            window = xp[:, :, u : u + s * oh : s, v : v + s * ow : s]
            # (O,B,oh,ow) <- w[:,:,u,v] (O,C) . window (B,C,oh,ow)
            out += np.tensordot(weight.data[:, :, u, v], window, axes=([1], [1])).transpose(1, 0, 2, 3)
    out += bias.data[None, :, None, None]

    def backward(g):
        gw = np.zeros(weight.shape)
        gxp = np.zeros(xp.shape)
        for u in range(kh):
            for v in range(kw):
                window = xp[:, :, u : u + s * oh : s, v : v + s * ow : s]
                gw[:, :, u, v] = np.tensordot(g, window, axes=([0, 2, 3], [0, 2, 3]))
                gxp[:, :, u : u + s * oh : s, v : v + s * ow : s] += np.tensordot(
                    g, weight.data[:, :, u, v], axes=([1], [0])
                ).transpose(0, 3, 1, 2)
        gx = gxp[:, :, p : p + H, p : p + W] if p else gxp
        gb = g.sum(axis=(0, 2, 3))
        return np.ascontiguousarray(gx), gw, gb

    return Tensor._result(out, (x, weight, bias), backward)


def maxpool2(x) -> Tensor:
    """2x2 max pooling with stride 2; ties take the first window position."""
    x = _wrap(x)
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ContractError(f"maxpool2 needs even extents, got {H}x{W}")
    h2, w2 = H // 2, W // 2
    windows = x.data.reshape(B, C, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, h2, w2, 4)
    idx = windows.argmax(axis=-1)
    data = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gwin = np.zeros((B, C, h2, w2, 4))
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        gx = gwin.reshape(B, C, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W)
        return (np.ascontiguousarray(gx),)

    return Tensor._result(np.ascontiguousarray(data), (x,), backward)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


def grad_check(f, inputs, h: float = 1e-6) -> float:
    """Max relative error between backward() and central differences.

    ``f`` maps the given tensors to a scalar Tensor and must be pure.  The
    error metric per coordinate is |analytic - numeric| / max(1, |numeric|);
    the step h must lie in [1e-7, 1e-5].
    """
    if not 1e-7 <= h <= 1e-5:
        raise ContractError(f"grad_check step {h} outside [1e-7, 1e-5]")
    inputs = list(inputs)
    zero_grads(inputs)
    out = f(*inputs)
    if out.size != 1:
        raise ContractError("grad_check target must be scalar")
    _check_finite(out.data, "grad_check forward")
    out.backward()
    analytic = [t.grad if t.grad is not None else np.zeros(t.shape) for t in inputs]

    worst = 0.0
    with no_grad():
        for t, a in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                hi = float(f(*inputs).data)
                flat[i] = orig - h
                lo = float(f(*inputs).data)
                flat[i] = orig
                numeric = (hi - lo) / (2.0 * h)
                if not np.isfinite(numeric):
                    raise DivergenceError("non-finite finite-difference probe")
                err = abs(a.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, err)
    return worst
