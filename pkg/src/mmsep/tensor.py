"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Every network layer in this package is built from the primitives below.
A tensor records its parents and a backward closure when (and only when)
gradients are required; calling :func:`backward` on a scalar loss walks
the recorded tape once in reverse topological order and then frees it.

Only the broadcasting cases the models need are supported (bias over
time, encoding vectors over tokens); everything else must shape-match
exactly, which keeps gradients auditable.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

# When True, every op asserts that its output is finite.
CHECK_FINITE = False


def _as_array(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """A dense array plus optional gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # Convenience arithmetic; the heavy lifting lives in module functions.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data, parents, backward_fn):
    """Create an op output, recording the tape edge only if needed."""
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        from .errors import NumericsError

        raise NumericsError("non-finite values in op output")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(t, g):
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad += g


def backward(loss):
    """Populate ``grad`` for every reachable tensor feeding ``loss``.

    ``loss`` must be scalar.  Accumulation is additive across calls;
    callers are responsible for zeroing parameter grads between steps.
    The tape is freed afterwards.
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    topo = []
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
    loss.grad = np.ones((), dtype=loss.data.dtype)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    # free the tape; grads on leaves survive
    for node in topo:
        node._parents = ()
        node._backward = None
        if not node.requires_grad:
            node.grad = None


# ---------------------------------------------------------------------------
# elementwise / reduction primitives
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.data + b.data, (a, b), bwd)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: shape mismatch {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(a.data - b.data, (a, b), bwd)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: shape mismatch {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), bwd)


def scale(x, s):
    x = _wrap(x)
    s = float(s)

    def bwd(g):
        _accum(x, g * s)

    return _make(x.data * s, (x,), bwd)


def add_bias(x, b, axis):
    """Add 1-D ``b`` along ``axis`` of 2-D ``x`` (the only broadcast we allow)."""
    x, b = _wrap(x), _wrap(b)
    if x.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeError("add_bias expects a 2-D tensor and a 1-D bias")
    if x.data.shape[axis] != b.data.shape[0]:
        raise ShapeError(
            f"add_bias: axis {axis} of {x.data.shape} vs bias {b.data.shape}"
        )
    bview = b.data[:, None] if axis == 0 else b.data[None, :]

    def bwd(g):
        _accum(x, g)
        _accum(b, g.sum(axis=1 - axis))

    return _make(x.data + bview, (x, b), bwd)


def relu(x):
    x = _wrap(x)
    mask = x.data > 0

    def bwd(g):
        _accum(x, g * mask)

    return _make(np.where(mask, x.data, 0.0), (x,), bwd)


def sigmoid(x):
    x = _wrap(x)
    y = 1.0 / (1.0 + np.exp(-x.data))

    def bwd(g):
        _accum(x, g * y * (1.0 - y))

    return _make(y, (x,), bwd)


def tanh(x):
    x = _wrap(x)
    y = np.tanh(x.data)

    def bwd(g):
        _accum(x, g * (1.0 - y * y))

    return _make(y, (x,), bwd)


def glu(x, axis=0):
    """Gated linear unit: split ``axis`` in half, value * sigmoid(gate)."""
    x = _wrap(x)
    n = x.data.shape[axis]
    if n % 2 != 0:
        raise ShapeError(f"glu: axis {axis} size {n} is odd")
    h = n // 2
    val = np.take(x.data, range(h), axis=axis)
    gate = 1.0 / (1.0 + np.exp(-np.take(x.data, range(h, n), axis=axis)))

    def bwd(g):
        gx = np.empty_like(x.data)
        sl_v = [slice(None)] * x.data.ndim
        sl_g = [slice(None)] * x.data.ndim
        sl_v[axis] = slice(0, h)
        sl_g[axis] = slice(h, n)
        gx[tuple(sl_v)] = g * gate
        gx[tuple(sl_g)] = g * val * gate * (1.0 - gate)
        _accum(x, gx)

    return _make(val * gate, (x,), bwd)


def abs_(x):
    x = _wrap(x)
    s = np.sign(x.data)  # subgradient 0 at exact ties

    def bwd(g):
        _accum(x, g * s)

    return _make(np.abs(x.data), (x,), bwd)


def sum_(x):
    x = _wrap(x)

    def bwd(g):
        _accum(x, np.broadcast_to(g, x.data.shape))

    return _make(x.data.sum(), (x,), bwd)


def mean(x):
    x = _wrap(x)
    n = x.data.size

    def bwd(g):
        _accum(x, np.broadcast_to(g / n, x.data.shape))

    return _make(x.data.mean(), (x,), bwd)


# ---------------------------------------------------------------------------
# linear algebra / structural primitives
# ---------------------------------------------------------------------------

def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), bwd)


def transpose(x):
    x = _wrap(x)

    def bwd(g):
        _accum(x, g.T)

    return _make(x.data.T.copy(), (x,), bwd)


def reshape(x, shape):
    x = _wrap(x)
    old = x.data.shape

    def bwd(g):
        _accum(x, g.reshape(old))

    return _make(x.data.reshape(shape).copy(), (x,), bwd)


def slice_rows(x, start, stop):
    x = _wrap(x)

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[start:stop] = g
        _accum(x, gx)

    return _make(x.data[start:stop].copy(), (x,), bwd)


def slice_cols(x, start, stop):
    x = _wrap(x)

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        _accum(x, gx)

    return _make(x.data[:, start:stop].copy(), (x,), bwd)


def concat_rows(tensors):
    tensors = [_wrap(t) for t in tensors]
    widths = {t.data.shape[1:] for t in tensors}
    if len(widths) > 1:
        raise ShapeError(f"concat_rows: trailing shapes differ: {sorted(map(str, widths))}")
    sizes = [t.data.shape[0] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, o, n in zip(tensors, offsets, sizes):
            _accum(t, g[o : o + n])

    return _make(np.concatenate([t.data for t in tensors], axis=0), tensors, bwd)


def embedding_lookup(table, ids):
    """Row gather from ``table``; backward scatter-adds into the table."""
    table = _wrap(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError("embedding_lookup expects a flat id list")
    vocab = table.data.shape[0]
    bad = ids[(ids < 0) | (ids >= vocab)]
    if bad.size:
        raise IndexError(f"embedding id {int(bad[0])} out of range [0, {vocab})")

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        _accum(table, gt)

    return _make(table.data[ids].copy(), (table,), bwd)


def softmax(x, axis=-1):
    x = _wrap(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        _accum(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (x,), bwd)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    if eps <= 0:
        raise ValueError("layer_norm: eps must be > 0")
    c = x.data.shape[-1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError("layer_norm: gamma/beta must match the last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bwd(g):
        _accum(gamma, (g * xhat).reshape(-1, c).sum(axis=0))
        _accum(beta, g.reshape(-1, c).sum(axis=0))
        gh = g * gamma.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        _accum(x, gx)

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), bwd)


def dropout(x, p, rng):
    """Inverted dropout; identity when p == 0."""
    x = _wrap(x)
    if p <= 0:
        return x
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype) / (1.0 - p)

    def bwd(g):
        _accum(x, g * keep)

    return _make(x.data * keep, (x,), bwd)


# ---------------------------------------------------------------------------
# 1-D convolutions
# ---------------------------------------------------------------------------

def _im2col(xp, kernel, stride, t_out):
    # xp: (C, T_pad) -> (C, K, T') without copying the input
    win = np.lib.stride_tricks.sliding_window_view(xp, kernel, axis=1)
    return np.ascontiguousarray(win[:, ::stride].transpose(0, 2, 1)[:, :, :t_out])


def conv1d(x, w, bias=None, stride=1, padding=0):
    """1-D convolution: x (C_in, T), w (C_out, C_in, K) -> (C_out, T')."""
    x, w = _wrap(x), _wrap(w)
    c_out, c_in, k = w.data.shape
    if x.data.ndim != 2 or x.data.shape[0] != c_in:
        raise ShapeError(f"conv1d: input {x.data.shape} vs weight {w.data.shape}")
    t = x.data.shape[1]
    if t + 2 * padding < k:
        raise ShapeError(f"conv1d: input length {t} + 2*{padding} < kernel {k}")
    t_out = (t + 2 * padding - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (padding, padding))) if padding else x.data
    col = _im2col(xp, k, stride, t_out)  # (C_in, K, T')
    w2 = w.data.reshape(c_out, c_in * k)
    y = w2 @ col.reshape(c_in * k, t_out)
    parents = [x, w]
    if bias is not None:
        bias = _wrap(bias)
        if bias.data.shape != (c_out,):
            raise ShapeError(f"conv1d: bias shape {bias.data.shape} != ({c_out},)")
        y = y + bias.data[:, None]
        parents.append(bias)

    def bwd(g):
        _accum(w, (g @ col.reshape(c_in * k, t_out).T).reshape(c_out, c_in, k))
        if bias is not None:
            _accum(bias, g.sum(axis=1))
        gcol = (w2.T @ g).reshape(c_in, k, t_out)
        gxp = np.zeros((c_in, t + 2 * padding), dtype=x.data.dtype)
        for kk in range(k):
            gxp[:, kk : kk + stride * t_out : stride] += gcol[:, kk]
        _accum(x, gxp[:, padding : padding + t] if padding else gxp)

    return _make(y, parents, bwd)


def conv_transpose1d(x, w, bias=None, stride=1, padding=0):
    """Transposed 1-D convolution: x (C_in, T), w (C_in, C_out, K).

    With zero bias this is the exact linear adjoint of ``conv1d`` sharing
    the same weight array (conv1d weight (C_out, C_in, K) viewed here as
    (C_in, C_out, K)).
    """
    x, w = _wrap(x), _wrap(w)
    c_in, c_out, k = w.data.shape
    if x.data.ndim != 2 or x.data.shape[0] != c_in:
        raise ShapeError(f"conv_transpose1d: input {x.data.shape} vs weight {w.data.shape}")
    t = x.data.shape[1]
    t_out = (t - 1) * stride - 2 * padding + k
    if t_out <= 0:
        raise ShapeError(f"conv_transpose1d: computed output length {t_out} <= 0")
    # u[o, kk, t] = sum_i x[i, t] * w[i, o, kk]
    u = np.einsum("it,iok->okt", x.data, w.data, optimize=True)
    ypad = np.zeros((c_out, (t - 1) * stride + k), dtype=x.data.dtype)
    for kk in range(k):
        ypad[:, kk : kk + stride * t : stride] += u[:, kk]
    y = ypad[:, padding : padding + t_out].copy()
    parents = [x, w]
    if bias is not None:
        bias = _wrap(bias)
        if bias.data.shape != (c_out,):
            raise ShapeError(f"conv_transpose1d: bias shape {bias.data.shape} != ({c_out},)")
        y = y + bias.data[:, None]
        parents.append(bias)

    def bwd(g):
        gpad = np.zeros((c_out, (t - 1) * stride + k), dtype=x.data.dtype)
        gpad[:, padding : padding + t_out] = g
        gcol = np.stack(
            [gpad[:, kk : kk + stride * t : stride] for kk in range(k)], axis=1
        )  # (C_out, K, T)
        _accum(x, np.einsum("iok,okt->it", w.data, gcol, optimize=True))
        _accum(w, np.einsum("it,okt->iok", x.data, gcol, optimize=True))
        if bias is not None:
            _accum(bias, g.sum(axis=1))

    return _make(y, parents, bwd)
