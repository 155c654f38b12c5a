"""A small reverse-mode automatic differentiation engine over numpy arrays.

Every operation records its parents and a closure mapping the output
gradient to one gradient per parent. :meth:`Tensor.backward` walks the
graph in reverse topological order. Leaf tensors accumulate into
``.grad`` until :meth:`Tensor.zero_grad` is called; intermediate
gradients live only for the duration of one backward pass.
"""

import contextlib
import math

import numpy as np

from .errors import ContractError, ParameterError, ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, finite differences)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad, shape):
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An n-dimensional array that can take part in a differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    # -- basic attributes -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    # -- graph ------------------------------------------------------------
    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Back-propagate from this scalar; see :func:`backward`."""
        return backward(self)

    # -- operators ----------------------------------------------------------
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
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    if dtype is None and isinstance(x, (int, float)):
        return Tensor(np.asarray(x, dtype=np.float64))
    return Tensor(x, dtype=dtype)


def _scalar_like(x, ref):
    """Wrap Python scalars in the dtype of the tensor they combine with."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=ref.dtype))


def _make(data, parents, backward_fn, op):
    out = Tensor(data)
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def backward(loss):
    """Reverse-mode sweep from a scalar ``loss``.

    Returns a dict mapping every reached ``requires_grad`` leaf to its
    accumulated gradient array.
    """
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
                leaves[node] = node.grad
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
    return leaves


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a = _scalar_like(a, b) if not isinstance(a, Tensor) else a
    b = _scalar_like(b, a)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a = _scalar_like(a, b) if not isinstance(a, Tensor) else a
    b = _scalar_like(b, a)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a = _scalar_like(a, b) if not isinstance(a, Tensor) else a
    b = _scalar_like(b, a)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a = _scalar_like(a, b) if not isinstance(a, Tensor) else a
    b = _scalar_like(b, a)

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data / b.data, (a, b), bw, "div")


def power(x, exponent):
    exponent = float(exponent)

    def bw(g):
        return (g * exponent * x.data ** (exponent - 1.0),)

    return _make(x.data**exponent, (x,), bw, "pow")


def exp(x):
    out_data = np.exp(x.data)

    def bw(g):
        return (g * out_data,)

    return _make(out_data, (x,), bw, "exp")


def tabs(x):
    def bw(g):
        return (g * np.sign(x.data),)

    return _make(np.abs(x.data), (x,), bw, "abs")


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(x.data.sum(axis=axes, keepdims=keepdims), (x,), bw, "sum")


def mean(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)
    n = 1
    for a in axes:
        n *= x.shape[a]
    return tsum(x, axis=axes, keepdims=keepdims) * (1.0 / n)


def reshape(x, shape):
    old = x.shape

    def bw(g):
        return (g.reshape(old),)

    return _make(x.data.reshape(shape), (x,), bw, "reshape")


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)

    def bw(g):
        return (g.transpose(inv),)

    return _make(x.data.transpose(axes), (x,), bw, "transpose")


def getitem(x, index):
    """Indexing with numpy semantics; repeated indices accumulate in backward."""
    advanced = _is_advanced(index)

    def bw(g):
        out = np.zeros_like(x.data)
        if advanced:
            np.add.at(out, index, g)
        else:
            out[index] = g
        return (out,)

    return _make(x.data[index], (x,), bw, "getitem")


def _is_advanced(index):
    parts = index if isinstance(index, tuple) else (index,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw, "concat")


def roll(x, shifts, axes):
    """Toroidal shift; the adjoint is the opposite roll."""
    shifts = tuple(int(s) for s in shifts)
    axes = tuple(axes)

    def bw(g):
        return (np.roll(g, tuple(-s for s in shifts), axis=axes),)

    return _make(np.roll(x.data, shifts, axis=axes), (x,), bw, "roll")


def _reflect_index(n, before, after):
    idx = np.arange(-before, n + after)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def pad_reflect(x, pad_h, pad_w):
    """Reflect-pad the two spatial axes (-3, -2) at the bottom/right."""
    if pad_h == 0 and pad_w == 0:
        return x
    h, w = x.shape[-3], x.shape[-2]
    rows = _reflect_index(h, 0, pad_h)
    cols = _reflect_index(w, 0, pad_w)
    lead = (slice(None),) * (x.ndim - 3)
    y = getitem(x, lead + (rows,))
    return getitem(y, lead + (slice(None), cols))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    """Batched matrix product over the trailing two axes with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def softmax(x, axis=-1):
    """Max-stabilised softmax along ``axis``."""
    if not -x.ndim <= axis < x.ndim:
        raise IndexError(f"softmax: axis {axis} out of range for rank {x.ndim}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), bw, "softmax")


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalise over the last axis, then apply ``gamma * x_hat + beta``."""
    if not eps > 0:
        raise ParameterError(f"layer_norm: eps must be positive, got {eps}")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm: gamma {gamma.shape} / beta {beta.shape} do not match channels {c}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g):
        gx = gg = gb = None
        if gamma.requires_grad:
            gg = (g * xhat).reshape(-1, c).sum(axis=0)
        if beta.requires_grad:
            gb = g.reshape(-1, c).sum(axis=0)
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), bw, "layer_norm")


_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def _gelu_derivative(x):
    u = _GELU_K * (x + _GELU_A * (x * x * x))
    t = np.tanh(u)
    du = _GELU_K * (1.0 + 3.0 * _GELU_A * x * x)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


def gelu(x):
    """GELU, tanh approximation."""
    d = x.data
    y = 0.5 * d * (1.0 + np.tanh(_GELU_K * (d + _GELU_A * (d * d * d))))

    def bw(g):
        return (g * _gelu_derivative(d),)

    return _make(y, (x,), bw, "gelu")


def _im2col3(xp, h, w):
    # xp: (..., h+2, w+2, c) -> (..., h, w, 9*c), taps in (dy, dx) row-major order
    taps = [xp[..., dy:dy + h, dx:dx + w, :] for dy in range(3) for dx in range(3)]
    return np.concatenate(taps, axis=-1)


def conv2d_3x3(x, w, bias):
    """Zero-padded ("same") 3x3 cross-correlation on channel-last input.

    ``x`` is ``H x W x Cin`` or ``N x H x W x Cin``; ``w`` is
    ``3 x 3 x Cin x Cout``; ``bias`` has length ``Cout``.
    """
    if w.ndim != 4 or w.shape[:2] != (3, 3):
        raise ShapeError(f"conv2d_3x3: kernel must be 3x3xCinxCout, got {w.shape}")
    cin, cout = w.shape[2], w.shape[3]
    if x.shape[-1] != cin:
        raise ShapeError(f"conv2d_3x3: input channels {x.shape[-1]} (shape {x.shape}) != kernel Cin {cin} (shape {w.shape})")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d_3x3: bias shape {bias.shape} != ({cout},)")
    h, wd = x.shape[-3], x.shape[-2]
    pad = [(0, 0)] * (x.ndim - 3) + [(1, 1), (1, 1), (0, 0)]
    cols = _im2col3(np.pad(x.data, pad), h, wd)
    wmat = w.data.reshape(9 * cin, cout)
    out = cols @ wmat + bias.data

    def bw(g):
        gx = gw = gb = None
        if w.requires_grad:
            gw = (cols.reshape(-1, 9 * cin).T @ g.reshape(-1, cout)).reshape(w.shape)
        if bias.requires_grad:
            gb = g.reshape(-1, cout).sum(axis=0)
        if x.requires_grad:
            gcols = g @ wmat.T
            gxp = np.zeros(x.shape[:-3] + (h + 2, wd + 2, cin), dtype=g.dtype)
            k = 0
            for dy in range(3):
                for dx in range(3):
                    gxp[..., dy:dy + h, dx:dx + wd, :] += gcols[..., k * cin:(k + 1) * cin]
                    k += 1
            gx = gxp[..., 1:h + 1, 1:wd + 1, :]
        return gx, gw, gb

    return _make(out, (x, w, bias), bw, "conv2d_3x3")


def linear(x, weight, bias=None):
    """``x @ weight (+ bias)`` over the last axis."""
    y = matmul(x, weight)
    return y if bias is None else y + bias


# ---------------------------------------------------------------------------
# losses


def mse_loss(pred, target):
    d = pred - target
    return mean(d * d)


def l1_loss(pred, target):
    return mean(tabs(pred - target))


# ---------------------------------------------------------------------------
# verification


def grad_check(f, x, eps=1e-5, coords=None):
    """Largest relative gap between the analytic and central-difference gradient.

    ``f`` maps ``x`` (any leaf tensor, possibly captured by ``f`` through a
    closure) to a scalar tensor. The error for each coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``. ``coords`` optionally
    restricts the check to a list of flat indices.
    """
    if not x.data.flags.c_contiguous:
        x.data = np.ascontiguousarray(x.data)
    saved = x.grad
    x.grad = None
    was = x.requires_grad
    x.requires_grad = True
    try:
        loss = f(x)
        if not loss.requires_grad:
            analytic = np.zeros_like(x.data)
        else:
            backward(loss)
            analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        analytic = np.asarray(analytic, dtype=np.float64).ravel()
        flat = x.data.reshape(-1)
        idx = range(flat.size) if coords is None else coords
        worst = 0.0
        with no_grad():
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                fp = float(f(x).data)
                flat[i] = orig - eps
                fm = float(f(x).data)
                flat[i] = orig
                numeric = (fp - fm) / (2.0 * eps)
                err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
                worst = max(worst, err)
        return worst
    finally:
        x.grad = saved
        x.requires_grad = was
