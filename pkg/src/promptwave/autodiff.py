"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and remembers how it was produced; the chain of
parent links is the tape. Calling backward() on a scalar loss topologically
sorts that tape and accumulates gradients into every tensor created with
requires_grad=True. Gradients add up across backward calls until cleared.

Arrays are float32 by default; every op preserves the dtype of its inputs,
so tests can run the same graph in float64 against finite differences.
"""

from __future__ import annotations

import numpy as np


class GradientError(RuntimeError):
    """Non-finite gradient, or backward called on a detached tensor."""


_grad_enabled = True


class no_grad:
    """Context manager that disables tape recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        if isinstance(data, np.ndarray):
            self.data = data
        elif isinstance(data, np.generic):  # numpy scalar: keep its dtype
            self.data = np.asarray(data)
        else:
            self.data = np.asarray(data, dtype=np.float32)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # -- graph plumbing ------------------------------------------------

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -as_tensor(other))

    def __rsub__(self, other):
        return add(as_tensor(other), -self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    """Wrap an op result; skips tape recording when grads are off."""
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out = Tensor(data, requires_grad=False)
        out._parents = tuple(parents)
        out._backward = backward_fn
        return out
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ops ----------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out_data, (a, b), bwd)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out_data, (a, b), bwd)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * out_data / b.data, b.shape)
        return ga, gb

    return _make(out_data, (a, b), bwd)


def power(a, p):
    a = as_tensor(a)
    p = float(p)
    out_data = a.data ** p

    def bwd(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make(out_data, (a,), bwd)


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        return (g * out_data,)

    return _make(out_data, (a,), bwd)


def tanh(a):
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def bwd(g):
        return (g * (1.0 - out_data * out_data),)

    return _make(out_data, (a,), bwd)


def sigmoid(a):
    a = as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        return (g * out_data * (1.0 - out_data),)

    return _make(out_data, (a,), bwd)


def silu(a):
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out_data = a.data * s

    def bwd(g):
        return (g * (s + out_data * (1.0 - s)),)

    return _make(out_data, (a,), bwd)


def sqrt(a):
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def bwd(g):
        return (g * 0.5 / out_data,)

    return _make(out_data, (a,), bwd)


# -- reductions and shape ops --------------------------------------------


def reduce_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.shape).astype(a.dtype, copy=True),)

    return _make(out_data, (a,), bwd)


def reduce_mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])

    def bwd(g):
        if axis is None:
            g2 = g
        else:
            g2 = g if keepdims else np.expand_dims(g, axis)
        scaled = np.asarray(g2, dtype=a.dtype) / a.dtype.type(count)
        return (np.broadcast_to(scaled, a.shape).astype(a.dtype, copy=True),)

    return _make(out_data, (a,), bwd)


def reshape(a, shape):
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(a.shape),)

    return _make(out_data, (a,), bwd)


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    out_data = np.transpose(a.data, axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return (np.transpose(g, inv),)

    return _make(out_data, (a,), bwd)


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def bwd(g):
        out, start = [], 0
        for n in sizes:
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, start + n)
            out.append(g[tuple(idx)])
            start += n
        return tuple(out)

    return _make(out_data, tuple(tensors), bwd)


def repeat(a, factor, axis):
    """Nearest-neighbour repeat along an axis (upsampling)."""
    a = as_tensor(a)
    if factor == 1:
        return a
    out_data = np.repeat(a.data, factor, axis=axis)

    def bwd(g):
        shp = list(a.shape)
        shp[axis:axis + 1] = [a.shape[axis], factor]
        return (g.reshape(shp).sum(axis=axis + 1),)

    return _make(out_data, (a,), bwd)


# -- matmul ---------------------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out_data, (a, b), bwd)


# -- fused neural-net ops --------------------------------------------------


def conv1d(x, w, b=None, stride=1, padding=0):
    """1D cross-correlation over [batch, channels, length].

    w has shape [out_ch, in_ch, k]; output length is
    floor((length + 2*padding - k) / stride) + 1.

    Lowered to a single gemm per direction: a strided window view of the
    padded input is flattened to [in_ch*k, batch*out_len] columns. numpy's
    stacked (3D) matmul is far slower than one large 2D product here.
    """
    x, w = as_tensor(x), as_tensor(w)
    if b is not None:
        b = as_tensor(b)
    B, Ci, L = x.shape
    Co, Ciw, k = w.shape
    if Ci != Ciw:
        raise ValueError(f"conv1d channel mismatch: input has {Ci}, weight expects {Ciw}")
    if stride < 1:
        raise ValueError(f"conv1d stride must be positive, got {stride}")
    L_out = (L + 2 * padding - k) // stride + 1
    if L_out < 1:
        raise ValueError(f"conv1d output would be empty (length {L}, k {k}, pad {padding})")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    sB, sC, s1 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, shape=(Ci, k, B, L_out), strides=(sC, s1, sB, stride * s1))
    cols = windows.reshape(Ci * k, B * L_out)  # copy
    y2 = np.matmul(w.data.reshape(Co, Ci * k), cols)
    y = np.ascontiguousarray(y2.reshape(Co, B, L_out).transpose(1, 0, 2))
    if b is not None:
        y += b.data[:, None]

    parents = (x, w) if b is None else (x, w, b)
    span = stride * (L_out - 1) + 1

    def bwd(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(Co, B * L_out)
        dw = np.matmul(g2, cols.T).reshape(Co, Ci, k)
        dcols = np.matmul(w.data.reshape(Co, Ci * k).T, g2).reshape(Ci, k, B, L_out)
        dxp = np.zeros_like(xp)
        for j in range(k):
            dxp[:, :, j:j + span:stride] += dcols[:, j].transpose(1, 0, 2)
        dx = dxp[:, :, padding:padding + L] if padding else dxp
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2))

    return _make(y, parents, bwd)


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - dot),)

    return _make(out_data, (a,), bwd)


def group_norm(x, gamma, beta, groups, eps=1e-5):
    """Normalize [batch, channels, length] per group of channels, then affine."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    B, C, L = x.shape
    if C % groups:
        raise ValueError(f"group_norm: {C} channels not divisible by {groups} groups")
    xv = x.data.reshape(B, groups, -1)
    mu = xv.mean(axis=2, keepdims=True)
    var = xv.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = ((xv - mu) * inv).reshape(B, C, L)
    out_data = xhat * gamma.data[:, None] + beta.data[:, None]
    m = xv.shape[2]

    def bwd(g):
        dgamma = (g * xhat).sum(axis=(0, 2))
        dbeta = g.sum(axis=(0, 2))
        dxhat = (g * gamma.data[:, None]).reshape(B, groups, m)
        xh = xhat.reshape(B, groups, m)
        t1 = dxhat.sum(axis=2, keepdims=True)
        t2 = (dxhat * xh).sum(axis=2, keepdims=True)
        dx = (inv / m) * (m * dxhat - t1 - xh * t2)
        return dx.reshape(B, C, L), dgamma, dbeta

    return _make(out_data, (x, gamma, beta), bwd)


# -- backward pass ---------------------------------------------------------


def backward(loss: Tensor):
    """Accumulate d(loss)/d(t) into every requires_grad tensor under loss.

    loss must be a scalar recorded on the tape; raises GradientError for a
    detached scalar or when a named parameter ends up with NaN/Inf gradient.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    if loss._backward is None and not loss.requires_grad:
        raise GradientError("loss is not connected to the tape (built under no_grad or from constants)")

    topo: list[Tensor] = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node._accumulate(g)
            if node.name is not None and not np.all(np.isfinite(node.grad)):
                raise GradientError(f"non-finite gradient for parameter '{node.name}'")
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg


# -- parameter store --------------------------------------------------------


class ParamStore:
    """Ordered name → trainable Tensor map with deterministic initialization.

    Initializer draws come from the store's rng in add() call order, so a
    fixed seed and a fixed construction order give identical parameters.
    """

    def __init__(self, rng=None, dtype=np.float32):
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def add(self, name, shape, init="zeros", fan_in=None):
        if name in self._params:
            raise ValueError(f"duplicate parameter name '{name}'")
        data = self._init_array(shape, init, fan_in)
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def _init_array(self, shape, init, fan_in):
        if isinstance(init, np.ndarray):
            return init.astype(self.dtype)
        if init == "zeros":
            return np.zeros(shape, dtype=self.dtype)
        if init == "ones":
            return np.ones(shape, dtype=self.dtype)
        if init == "fan_in_uniform":
            bound = 1.0 / np.sqrt(fan_in)
            return self.rng.uniform(-bound, bound, size=shape).astype(self.dtype)
        if init == "normal":
            return self.rng.standard_normal(size=shape).astype(self.dtype)
        raise ValueError(f"unknown init '{init}'")

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params.keys())

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def count(self) -> int:
        return sum(int(np.prod(t.shape)) for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def state_dict(self):
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state(self, state):
        for name, t in self._params.items():
            if name not in state:
                raise KeyError(f"missing parameter '{name}' in state")
            if state[name].shape != t.data.shape:
                raise ValueError(
                    f"shape mismatch for '{name}': have {t.data.shape}, loading {state[name].shape}")
            t.data = state[name].astype(t.data.dtype).copy()


class ShapeStore(ParamStore):
    """Counts parameter shapes without allocating arrays (dry-run builds)."""

    def __init__(self):
        super().__init__(rng=np.random.default_rng(0))
        self.shapes: dict[str, tuple] = {}

    def add(self, name, shape, init="zeros", fan_in=None):
        if name in self.shapes:
            raise ValueError(f"duplicate parameter name '{name}'")
        self.shapes[name] = tuple(shape)
        return None

    def count(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes.values())
