"""Reverse-mode differentiation over numpy arrays.

Operations record themselves on the active :class:`Tape` when any input
requires a gradient. The tape is a Wengert list rebuilt for every training
step; :func:`backward` walks it in reverse and accumulates ``.grad`` on the
leaves.

All data is float64.
"""

from contextlib import contextmanager

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A documented precondition of an operation was violated."""


_TAPES = []


class Tape:
    """Records differentiable operations executed inside its context."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def backward(self, loss):
        backward(loss, self)


def _active():
    return _TAPES[-1] if _TAPES else None


@contextmanager
def no_grad():
    """Suspend recording for values that will be used as constants."""
    _TAPES.append(None)
    try:
        yield
    finally:
        _TAPES.pop()


class Tensor:
    """A float64 array that may participate in gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x):
    """Detached copy of a tensor's value: gradients stop here."""
    return Tensor(x.data if isinstance(x, Tensor) else x)


def _record(data, parents, grad_fn):
    out = Tensor(data)
    tape = _active()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = grad_fn
        tape.nodes.append(out)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss, tape=None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every tracked leaf.

    Leaves not on any path from ``loss`` keep whatever ``.grad`` they had;
    call :meth:`ParamStore.zero_grad` first to get zeros there.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {loss.shape}")
    tape = tape if tape is not None else _active()
    if tape is None:
        raise ContractError("backward called with no tape")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        pgrads = node._backward(g)
        for parent, pg in zip(node._parents, pgrads):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                if parent.grad is None:
                    parent.grad = np.array(pg, dtype=np.float64, copy=True)
                else:
                    parent.grad = parent.grad + pg
            else:
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    if loss._backward is None and loss.requires_grad:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0


# elementwise arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g / bd, ad.shape),
                              _unbroadcast(-g * out / bd, bd.shape)))


def neg(a):
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,))


def matmul(a, b):
    """Matrix product of 2-D tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")
    ad, bd = a.data, b.data
    return _record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def spmm(m, x):
    """Product of a constant scipy sparse matrix with a 2-D tensor."""
    x = as_tensor(x)
    if m.shape[1] != x.shape[0]:
        raise ShapeError(f"spmm shapes {m.shape} and {x.shape} do not align")
    m = sp.csr_matrix(m)
    mt = m.T.tocsr()
    return _record(np.asarray(m @ x.data), (x,), lambda g: (np.asarray(mt @ g),))


# nonlinearities


def _check_finite(x, op):
    if not np.all(np.isfinite(x)):
        raise ContractError(f"{op}: non-finite input")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _record(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x):
    x = as_tensor(x)
    d = x.data
    # split by sign to avoid overflow in exp
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record(y, (x,), lambda g: (g * y * (1.0 - y),))


_ACTIVATIONS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}


def apply_activation(kind, x):
    """Elementwise ``relu``, ``tanh`` or ``sigmoid``."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ContractError(f"unknown activation {kind!r}") from None
    x = as_tensor(x)
    _check_finite(x.data, kind)
    return fn(x)


def exp(x):
    x = as_tensor(x)
    y = np.exp(x.data)
    return _record(y, (x,), lambda g: (g * y,))


def log(x):
    x = as_tensor(x)
    d = x.data
    return _record(np.log(d), (x,), lambda g: (g / d,))


def square(x):
    x = as_tensor(x)
    d = x.data
    return _record(d * d, (x,), lambda g: (2.0 * g * d,))


def norm(x, axis=-1):
    """Euclidean norm along ``axis``; the subgradient at zero is zero."""
    x = as_tensor(x)
    d = x.data
    n = np.sqrt(np.sum(d * d, axis=axis))

    def grad_fn(g):
        safe = np.where(n > 0, n, 1.0)
        return (np.expand_dims(np.where(n > 0, g / safe, 0.0), axis) * d,)

    return _record(n, (x,), grad_fn)


# reductions and layout


def sum(x, axis=None, keepdims=False):  # noqa: A001
    x = as_tensor(x)
    shape = x.shape

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _record(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), grad_fn)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return sum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


def softmax(x, axis=-1):
    """Softmax with max-subtraction."""
    x = as_tensor(x)
    if x.size == 0 or x.shape[axis] == 0:
        raise ShapeError("softmax of an empty tensor")
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def grad_fn(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _record(y, (x,), grad_fn)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    if x.size == 0 or x.shape[axis] == 0:
        raise ShapeError("log_softmax of an empty tensor")
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def grad_fn(g):
        return (g - p * np.sum(g, axis=axis, keepdims=True),)

    return _record(y, (x,), grad_fn)


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x):
    x = as_tensor(x)
    return _record(x.data.T, (x,), lambda g: (g.T,))


def getitem(x, index):
    x = as_tensor(x)
    shape = x.shape
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (slice, int)) or i is Ellipsis or i is None for i in parts)

    def grad_fn(g):
        out = np.zeros(shape)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return _record(x.data[index], (x,), grad_fn)


def concat(xs, axis=-1):
    xs = [as_tensor(x) for x in xs]
    data = np.concatenate([x.data for x in xs], axis=axis)
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _record(data, tuple(xs), grad_fn)


def stack(xs, axis=0):
    xs = [as_tensor(x) for x in xs]
    data = np.stack([x.data for x in xs], axis=axis)

    def grad_fn(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _record(data, tuple(xs), grad_fn)


def cumsum(x, axis=0):
    x = as_tensor(x)

    def grad_fn(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _record(np.cumsum(x.data, axis=axis), (x,), grad_fn)


def repeat_rows(x, k):
    """Repeat each row of a 2-D tensor ``k`` times consecutively."""
    x = as_tensor(x)
    n, d = x.shape
    return _record(np.repeat(x.data, k, axis=0), (x,),
                   lambda g: (g.reshape(n, k, d).sum(axis=1),))


def gather_rows(x, idx):
    """Rows ``x[idx]`` of a 2-D tensor, zero rows where ``idx < 0``."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    ok = idx >= 0
    safe = np.where(ok, idx, 0)
    data = x.data[safe] * ok[:, None]
    shape = x.shape

    def grad_fn(g):
        out = np.zeros(shape)
        np.add.at(out, safe[ok], g[ok])
        return (out,)

    return _record(data, (x,), grad_fn)


# convolutions


def temporal_conv(seq, kernel):
    """Valid stride-1 convolution along time.

    ``seq`` is (T, d) or (B, T, d); ``kernel`` is (w, d, d_out).
    """
    seq, kernel = as_tensor(seq), as_tensor(kernel)
    squeeze = seq.ndim == 2
    s = seq.data[None] if squeeze else seq.data
    w, d, d_out = kernel.shape
    b, t, d_in = s.shape
    if d_in != d:
        raise ShapeError(f"temporal_conv input dim {d_in} != kernel dim {d}")
    if t < w:
        raise ShapeError(f"temporal_conv needs T >= w, got T={t}, w={w}")
    n = t - w + 1
    kd = kernel.data
    out = np.zeros((b, n, d_out))
    for i in range(w):
        out += s[:, i:i + n, :] @ kd[i]

    def grad_fn(g):
        gg = g[None] if squeeze else g
        gs = np.zeros_like(s)
        gk = np.zeros_like(kd)
        for i in range(w):
            gs[:, i:i + n, :] += gg @ kd[i].T
            gk[i] = np.einsum("btd,bte->de", s[:, i:i + n, :], gg)
        return (gs[0] if squeeze else gs, gk)

    return _record(out[0] if squeeze else out, (seq, kernel), grad_fn)


def conv2d(x, w, stride=1):
    """2-D convolution over (B, H, W, C) with a (k, k, C, F) kernel.

    Zero padding of ``k // 2`` on each side; output spatial size is
    ``ceil(H / stride)`` by ``ceil(W / stride)``. Output cell (i, j) is
    centered on input cell (i * stride, j * stride).
    """
    x, w = as_tensor(x), as_tensor(w)
    xd, wd = x.data, w.data
    b, h, wid, c = xd.shape
    k, k2, c2, f = wd.shape
    if c != c2 or k != k2:
        raise ShapeError(f"conv2d input {xd.shape} incompatible with kernel {wd.shape}")
    pad = k // 2
    ho = -(-h // stride)
    wo = -(-wid // stride)
    xp = np.pad(xd, ((0, 0), (pad, pad + stride), (pad, pad + stride), (0, 0)))
    out = np.zeros((b, ho, wo, f))
    taps = []
    for di in range(k):
        for dj in range(k):
            patch = xp[:, di:di + stride * ho:stride, dj:dj + stride * wo:stride, :]
            taps.append(patch)
            out += patch @ wd[di, dj]

    def grad_fn(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wd)
        t = 0
        g2 = g.reshape(-1, f)
        for di in range(k):
            for dj in range(k):
                gw[di, dj] = taps[t].reshape(-1, c).T @ g2
                gxp[:, di:di + stride * ho:stride, dj:dj + stride * wo:stride, :] += g @ wd[di, dj].T
                t += 1
        return (gxp[:, pad:pad + h, pad:pad + wid, :], gw)

    return _record(out, (x, w), grad_fn)


# gradient checking


def finite_diff_check(f, params, eps=1e-5, names=None, detail=False, max_entries=None, rng=None):
    """Compare tape gradients against central differences.

    ``f`` maps the current parameter values to a scalar Tensor and must be
    deterministic. Returns the max over checked entries of
    ``|analytic - numeric| / max(1, |numeric|)``; with ``detail=True`` also
    returns a dict of the per-parameter maxima. ``max_entries`` caps the
    entries probed per parameter, chosen with ``rng`` (all when None).
    """
    if not eps > 0:
        raise ContractError(f"eps must be positive, got {eps}")
    names = list(params.names() if names is None else names)
    v1 = f().data.copy()
    v2 = f().data.copy()
    if v1.shape != () and v1.size != 1:
        raise ContractError("finite_diff_check needs a scalar function")
    if not np.array_equal(v1, v2):
        raise ContractError("function is not deterministic across evaluations")
    params.zero_grad()
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    worst = 0.0
    per_param = {}
    for name in names:
        p = params[name]
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        ga = analytic.reshape(-1)
        err = 0.0
        entries = range(flat.size)
        if max_entries is not None and flat.size > max_entries:
            rng = np.random.default_rng(0) if rng is None else rng
            entries = np.sort(rng.choice(flat.size, max_entries, replace=False))
        for i in entries:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f().data)
            flat[i] = orig - eps
            fm = float(f().data)
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            err = max(err, abs(ga[i] - num) / max(1.0, abs(num)))
        per_param[name] = err
        worst = max(worst, err)
    if detail:
        return worst, per_param
    return worst
