"""Tape-based reverse-mode differentiation over whole numpy arrays.

Every operation returns a :class:`Tensor` that remembers its parents and a
vector-Jacobian product. :func:`backward` walks the recorded graph in
reverse topological order and accumulates into :attr:`Parameter.grad`.

Complex quantities never enter the graph directly. They travel as a real
pair stacked on the leading axis (``[2, ...]`` = real, imaginary), and
every loss is real, so all cotangents are real arrays.
"""

import numpy as np

from . import kernels


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class Tensor:
    """A dense array node in the computation graph.

    Parameters
    ----------
    data : array_like
        Value of the node (converted to a float64 or complex128 array).
    parents : tuple of Tensor
        Inputs the value was computed from.
    vjp : callable, optional
        Maps the output cotangent to a tuple with one cotangent per parent
        (``None`` for parents that need no gradient).
    """

    def __init__(self, data, parents=(), vjp=None):
        arr = np.asarray(data)
        if arr.dtype.kind == "c":
            arr = arr.astype(np.complex128, copy=False)
        else:
            arr = arr.astype(np.float64, copy=False)
        self.data = arr
        self._parents = tuple(parents)
        self._vjp = vjp
        self.requires_grad = any(p.requires_grad for p in self._parents)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.shape}, dtype={self.dtype})"

    # arithmetic sugar used by the model code
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


class Parameter(Tensor):
    """Leaf tensor that owns a gradient accumulator."""

    def __init__(self, data, requires_grad=True, name=None):
        super().__init__(np.array(data, dtype=np.float64))
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data)
        self.name = name

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name or ''}, shape={self.shape})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def complex_to_pair(z):
    """Stack real and imaginary parts on a new leading axis."""
    z = np.asarray(z)
    return np.stack([z.real, z.imag]).astype(np.float64)


def pair_to_complex(p):
    p = np.asarray(p)
    if p.shape[0] != 2:
        raise DimensionError(f"real pair needs leading axis 2, got {p.shape}")
    return p[0] + 1j * p[1]


def _toposort(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(value) into every participating Parameter."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1 or loss.data.dtype.kind == "c":
        raise ValueError(f"backward needs a real scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss was not computed from any Parameter")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad += g
            continue
        pg = node._vjp(g)
        for parent, gp in zip(node._parents, pg):
            if gp is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + gp
            else:
                grads[key] = gp


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --- elementwise -----------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data * b.data, (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.shape),
                             _unbroadcast(g * a.data, b.shape)))


def scale(a, c):
    """Multiply by a constant scalar."""
    return Tensor(a.data * c, (a,), lambda g: (g * c,))


def tanh(x):
    y = np.tanh(x.data)
    return Tensor(y, (x,), lambda g: (g * (1.0 - y * y),))


def leaky_relu(x, slope=0.01):
    pos = x.data >= 0
    return Tensor(np.where(pos, x.data, slope * x.data), (x,),
                  lambda g: (np.where(pos, g, slope * g),))


def activation(x, kind, slope=0.01):
    """Apply ``'tanh'``, ``'leaky_relu'`` or ``'none'`` elementwise."""
    if kind == "tanh":
        return tanh(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind in (None, "none", "linear"):
        return x
    raise ValueError(f"unknown activation {kind!r}")


# --- reductions and indexing ------------------------------------------------

def sum_all(x):
    return Tensor(np.sum(x.data), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def sqnorm(x):
    """Sum of squares of all entries."""
    return Tensor(np.vdot(x.data, x.data).real, (x,), lambda g: (2.0 * g * x.data,))


def take(x, idx):
    def vjp(g):
        out = np.zeros_like(x.data)
        if _fancy(idx):
            np.add.at(out, idx, g)
        else:
            out[idx] = g
        return (out,)

    return Tensor(x.data[idx], (x,), vjp)


def _fancy(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def reshape(x, shape):
    return Tensor(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                  lambda g: tuple(np.split(g, splits, axis=axis)))


# --- layers -----------------------------------------------------------------

def conv2d(x, kernels_, bias):
    """Same-size zero-padded 2D cross-correlation.

    ``x`` is ``[C_in, H, W]``, ``kernels_`` is ``[C_out, C_in, k, k]`` with
    odd ``k`` and ``bias`` is ``[C_out]``.
    """
    x, kernels_, bias = as_tensor(x), as_tensor(kernels_), as_tensor(bias)
    if x.ndim != 3 or kernels_.ndim != 4:
        raise DimensionError(f"conv2d expects [C,H,W] and [O,C,k,k], got {x.shape}, {kernels_.shape}")
    o, c, k, k2 = kernels_.shape
    if c != x.shape[0]:
        raise DimensionError(f"conv2d: input has {x.shape[0]} channels, kernel expects {c}")
    if k != k2 or k % 2 == 0:
        raise DimensionError(f"conv2d needs square odd kernels, got {k}x{k2}")
    if bias.shape != (o,):
        raise DimensionError(f"conv2d bias shape {bias.shape} != ({o},)")
    # constant inputs (the gridded stack) keep their column matrix across steps
    memo = None if x.requires_grad else x.__dict__.setdefault("_cols", {})
    out, cols = kernels.conv2d_forward(x.data, kernels_.data, bias.data,
                                       memo.get(k) if memo is not None else None)
    if memo is not None and cols is not None:
        memo[k] = cols

    def vjp(g):
        return kernels.conv2d_backward(x.data, kernels_.data, g, x.requires_grad, cols)

    return Tensor(out, (x, kernels_, bias), vjp)


def channel_modulate(features, factors):
    """Scale channel ``c`` of ``[C, H, W]`` features by ``factors[c]``."""
    features, factors = as_tensor(features), as_tensor(factors)
    if factors.ndim != 1 or factors.shape[0] != features.shape[0]:
        raise DimensionError(
            f"{factors.shape} factors for {features.shape[0]} channels")
    f = factors.data[:, None, None]
    return Tensor(features.data * f, (features, factors),
                  lambda g: (g * f, np.einsum("chw,chw->c", g, features.data)))


def dense(x, weights, bias):
    """Affine map ``weights @ x + bias`` for a vector ``x``."""
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    if x.ndim != 1 or weights.ndim != 2 or weights.shape[1] != x.shape[0]:
        raise DimensionError(f"dense: weights {weights.shape} vs input {x.shape}")
    if bias.shape != (weights.shape[0],):
        raise DimensionError(f"dense: bias {bias.shape} vs weights {weights.shape}")
    return Tensor(weights.data @ x.data + bias.data, (x, weights, bias),
                  lambda g: (weights.data.T @ g, np.outer(g, x.data), g))


def complex_matmul(a, b):
    """Product of complex matrices stored as real pairs ``[2, m, n]``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[0] != 2 or b.shape[0] != 2 or a.shape[-1] != b.shape[1]:
        raise DimensionError(f"complex_matmul: {a.shape} @ {b.shape}")
    za = a.data[0] + 1j * a.data[1]
    zb = b.data[0] + 1j * b.data[1]

    def vjp(g):
        gz = g[0] + 1j * g[1]
        ga = gz @ zb.conj().swapaxes(-1, -2)
        gb = za.conj().swapaxes(-1, -2) @ gz
        return complex_to_pair(ga), complex_to_pair(gb)

    return Tensor(complex_to_pair(za @ zb), (a, b), vjp)
