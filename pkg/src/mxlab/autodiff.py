"""Reverse-mode automatic differentiation over dense numpy arrays.

Every operation returns a :class:`Tensor` that remembers its parents and a
closure pushing the output gradient back to them. ``loss.backward()`` walks the
tape in reverse topological order. Leading axes broadcast like numpy.
"""

from __future__ import annotations

import contextlib
import math
from collections import OrderedDict

import numpy as np


class ShapeError(ValueError):
    pass


class MissingGradError(RuntimeError):
    pass


_mac_counter: list[int] = []


@contextlib.contextmanager
def count_macs():
    """Tally the multiply-accumulates performed by :func:`matmul` and :func:`conv2d`."""
    box = [0]
    _mac_counter.append(box)
    try:
        yield box
    finally:
        _mac_counter.remove(box)


def _record_macs(n: int):
    for box in _mac_counter:
        box[0] += int(n)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None,
                 _parents=(), _backward=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else np.float64
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    shape = property(lambda self: self.data.shape)
    ndim = property(lambda self: self.data.ndim)
    dtype = property(lambda self: self.data.dtype)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        order, seen = [], set()
        stack = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node._accum(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # operator sugar
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __neg__(self): return scale(self, -1.0)
    def __matmul__(self, o): return matmul(self, o)
    def __getitem__(self, idx): return slice_(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _make(data, parents, backward) -> Tensor:
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return _make(a.data * b.data, (a, b), backward)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    return _make(x.data * c, (x,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    """Batched ``a @ b`` over the last two axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >= 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    flat_b = b.ndim == 2 and a.ndim > 2           # stacked inputs times one weight matrix
    if flat_b:                                      # one BLAS call instead of a stacked loop
        out = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(*a.shape[:-1], b.shape[-1])
    else:
        out = np.matmul(a.data, b.data)
    _record_macs(out.size * a.shape[-1])

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            if flat_b:
                ga = (g.reshape(-1, g.shape[-1]) @ b.data.T).reshape(a.shape)
            else:
                ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if flat_b:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb
    return _make(out, (a, b), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def softmax_lastdim(x, mask=None) -> Tensor:
    """Softmax over the last axis; ``mask`` is added to the logits first."""
    x = as_tensor(x)
    z = x.data if mask is None else x.data + mask
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)
    return _make(s, (x,), backward)


def layer_norm_lastdim(x, gain=None, bias=None, eps=1e-12) -> Tensor:
    """``(x - mean) / std * gain + bias`` over the last axis, population std."""
    x = as_tensor(x)
    n = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        return (inv / n * (n * g - g.sum(-1, keepdims=True)
                           - xhat * (g * xhat).sum(-1, keepdims=True)),)
    y = _make(xhat, (x,), backward)
    if gain is not None:
        y = mul(y, gain)
    if bias is not None:
        y = add(y, bias)
    return y


def dropout(x, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity when ``train`` is false or ``p == 0``."""
    x = as_tensor(x)
    if not train or p <= 0:
        return x
    if p >= 1:
        raise ValueError("dropout probability must be < 1")
    rng = rng if rng is not None else np.random.default_rng()
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


def embedding_lookup(table, idx) -> Tensor:
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"embedding index out of range for table of {table.shape[0]} rows")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)
    return _make(table.data[idx], (table,), backward)


def conv2d(x, w) -> Tensor:
    """Same-padded stride-1 cross-correlation.

    x : [B, C_in, H, W], w : [C_out, C_in, k, k] with k odd.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    k = w.shape[-1]
    if w.shape[-2] != k or k % 2 == 0:
        raise ShapeError(f"conv2d needs an odd square kernel, got {w.shape[-2:]}")
    p = k // 2
    B, C, H, W = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))  # B,C,H,W,k,k
    out = np.einsum("bchwij,ocij->bohw", cols, w.data, optimize=True)
    _record_macs(out.size * C * k * k)

    def backward(g):
        gw = np.einsum("bohw,bchwij->ocij", g, cols, optimize=True) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + H, j:j + W] += np.einsum("bohw,oc->bchw", g, w.data[:, :, i, j])
            gx = gxp[:, :, p:p + H, p:p + W]
        return gx, gw
    return _make(out, (x, w), backward)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} to {tuple(shape)}") from None
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(a % x.ndim for a in axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def swapaxes(x, a, b) -> Tensor:
    axes = list(range(as_tensor(x).ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, axes)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} differ off axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors)))
    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward)


def slice_(x, idx) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g) if _is_fancy(idx) else gx.__setitem__(idx, g)
        return (gx,)
    return _make(x.data[idx], (x,), backward)


def _is_fancy(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def split(x, sections, axis=-1) -> list[Tensor]:
    """Split into equal ``sections`` (int) or at the given sizes (list)."""
    x = as_tensor(x)
    ax = axis % x.ndim
    n = x.shape[ax]
    if isinstance(sections, int):
        if n % sections:
            raise ShapeError(f"split: axis of length {n} not divisible by {sections}")
        sizes = [n // sections] * sections
    else:
        sizes = list(sections)
        if sum(sizes) != n:
            raise ShapeError(f"split sizes {sizes} do not sum to {n}")
    out, start = [], 0
    for s in sizes:
        idx = [slice(None)] * x.ndim
        idx[ax] = slice(start, start + s)
        out.append(slice_(x, tuple(idx)))
        start += s
    return out


def sum_(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)
    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum_(x, axis, keepdims), 1.0 / n)


def square(x) -> Tensor:
    x = as_tensor(x)
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


# ---------------------------------------------------------------------------
# parameters and optimisation


class ParamStore:
    """Named trainable tensors plus adaptive-moment optimizer state."""

    def __init__(self, dtype=np.float64):
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        self.dtype = dtype
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def n_parameters(self, prefix: str = "") -> int:
        return sum(t.data.size for n, t in self.params.items() if n.startswith(prefix))

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def state_dict(self) -> dict:
        return {n: t.data.copy() for n, t in self.params.items()}

    def load_state_dict(self, state: dict, strict: bool = True):
        if strict and set(state) != set(self.params):
            missing = set(self.params) - set(state)
            extra = set(state) - set(self.params)
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for n, v in state.items():
            if n in self.params:
                if np.shape(v) != self.params[n].shape:
                    raise ShapeError(f"{n}: shape {np.shape(v)} != {self.params[n].shape}")
                self.params[n].data = np.array(v, dtype=self.dtype)

    def astype(self, dtype) -> "ParamStore":
        """Copy of the weights at another float width (e.g. float32 inference)."""
        out = ParamStore(dtype)
        for n, t in self.params.items():
            out.add(n, t.data)
        return out


def adam_step(store: ParamStore, lr: float, betas=(0.9, 0.999), eps=1e-8, names=None):
    """One bias-corrected adaptive-moment update; gradients are cleared afterwards."""
    names = list(store.params) if names is None else list(names)
    missing = [n for n in names if store[n].grad is None]
    if missing:
        raise MissingGradError(f"no gradient for: {', '.join(missing)}")
    b1, b2 = betas
    store.step += 1
    c1 = 1.0 - b1 ** store.step
    c2 = 1.0 - b2 ** store.step
    for n in names:
        t = store[n]
        g = t.grad
        m = store.m.get(n)
        if m is None:
            m = store.m[n] = np.zeros_like(t.data)
            store.v[n] = np.zeros_like(t.data)
        v = store.v[n]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        t.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        t.grad = None


def cosine_lr(lr0: float, step: int, total: int, floor: float = 0.1) -> float:
    """Cosine decay from ``lr0`` to ``floor * lr0`` over ``total`` steps."""
    frac = min(step / max(total, 1), 1.0)
    return lr0 * (floor + (1 - floor) * 0.5 * (1 + math.cos(math.pi * frac)))


def grad_check(f, inputs, eps=1e-5, n_samples: int | None = 50, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps the list ``inputs`` (Tensors with ``requires_grad``) to a scalar
    Tensor. Up to ``n_samples`` coordinates per input are probed.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.grad = None
    f(inputs).backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if n_samples is not None and flat.size > n_samples:
            coords = rng.choice(flat.size, n_samples, replace=False)
        for c in coords:
            old = flat[c]
            flat[c] = old + eps
            fp = float(f(inputs).data)
            flat[c] = old - eps
            fm = float(f(inputs).data)
            flat[c] = old
            gn = (fp - fm) / (2 * eps)
            a = ga.reshape(-1)[c]
            worst = max(worst, abs(a - gn) / max(abs(a), abs(gn), 1e-8))
    for t in inputs:
        t.grad = None
    return worst
