"""Parameter storage, initialisation and the small layers every network uses."""

from collections import OrderedDict

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, ShapeError, Tensor


class ParamStore:
    """Named parameter tensors, each trainable or frozen."""

    def __init__(self):
        self._entries = OrderedDict()
        self._trainable = {}

    def add(self, name, value, trainable=True):
        if name in self._entries:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=trainable, name=name)
        self._entries[name] = t
        self._trainable[name] = trainable
        return t

    def __getitem__(self, name):
        return self._entries[name]

    def __contains__(self, name):
        return name in self._entries

    def __len__(self):
        return len(self._entries)

    def names(self, trainable_only=False):
        return [n for n in self._entries if self._trainable[n] or not trainable_only]

    def items(self):
        return self._entries.items()

    def is_trainable(self, name):
        return self._trainable[name]

    def freeze(self, prefix=""):
        for n, t in self._entries.items():
            if n.startswith(prefix):
                self._trainable[n] = False
                t.requires_grad = False

    def zero_grad(self):
        for t in self._entries.values():
            t.grad = None

    def grads(self):
        """Gradient per trainable parameter; zeros where none reached it."""
        out = OrderedDict()
        for n, t in self._entries.items():
            if not self._trainable[n]:
                continue
            g = t.grad
            if g is None:
                g = np.zeros_like(t.data)
            elif g.shape != t.shape:
                raise ShapeError(f"gradient for {n} has shape {g.shape}, expected {t.shape}")
            out[n] = g
        return out

    def num_values(self):
        return int(sum(t.size for t in self._entries.values()))

    def state(self):
        """Deep copy of all values, keyed by name."""
        return OrderedDict((n, t.data.copy()) for n, t in self._entries.items())

    def load_state(self, state):
        missing = set(self._entries) - set(state)
        if missing:
            raise ContractError(f"state is missing parameters: {sorted(missing)}")
        for n, t in self._entries.items():
            v = np.asarray(state[n], dtype=np.float64)
            if v.shape != t.shape:
                raise ShapeError(f"{n}: stored shape {v.shape} != {t.shape}")
            t.data = v.copy()


def glorot(rng, shape, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def add_linear(store, name, n_in, n_out, rng, zero=False):
    """Register ``name.W`` (n_in, n_out) and ``name.b`` (n_out,)."""
    w = np.zeros((n_in, n_out)) if zero else glorot(rng, (n_in, n_out), n_in, n_out)
    store.add(f"{name}.W", w)
    store.add(f"{name}.b", np.zeros(n_out))


def linear(store, name, x):
    return ad.matmul(x, store[f"{name}.W"]) + store[f"{name}.b"]


def add_gru(store, name, n_in, n_hidden, rng):
    """Register a GRU: ``W`` (n_in, 3h), ``U`` (h, 3h), ``b`` (3h).

    Column blocks are ordered update gate, reset gate, candidate.
    """
    h = n_hidden
    w = np.concatenate([glorot(rng, (n_in, h), n_in, h) for _ in range(3)], axis=1)
    u = np.concatenate([glorot(rng, (h, h), h, h) for _ in range(3)], axis=1)
    store.add(f"{name}.W", w)
    store.add(f"{name}.U", u)
    store.add(f"{name}.b", np.zeros(3 * h))


def gru_step(h, x, store, name):
    """One GRU update for a batch of states ``h`` (B, h) and inputs ``x`` (B, d).

    z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br),
    h~ = tanh(x Wh + (r * h) Uh + bh), h' = (1 - z) * h + z * h~.
    """
    w, u, b = store[f"{name}.W"], store[f"{name}.U"], store[f"{name}.b"]
    n_hidden = u.shape[0]
    if h.shape[-1] != n_hidden or x.shape[-1] != w.shape[0]:
        raise ShapeError(
            f"gru {name}: state {h.shape} / input {x.shape} do not match W {w.shape}, U {u.shape}")
    hd = n_hidden
    gx = ad.matmul(x, w) + b
    gzr = ad.matmul(h, u[:, :2 * hd])
    z = ad.sigmoid(gx[:, :hd] + gzr[:, :hd])
    r = ad.sigmoid(gx[:, hd:2 * hd] + gzr[:, hd:])
    cand = ad.tanh(gx[:, 2 * hd:] + ad.matmul(r * h, u[:, 2 * hd:]))
    return h + z * (cand - h)


def add_temporal_conv(store, name, width, n_in, n_out, rng):
    store.add(f"{name}.K", glorot(rng, (width, n_in, n_out), width * n_in, width * n_out))
    store.add(f"{name}.b", np.zeros(n_out))


def add_conv2d(store, name, k, n_in, n_out, rng):
    store.add(f"{name}.K", glorot(rng, (k, k, n_in, n_out), k * k * n_in, k * k * n_out))
    store.add(f"{name}.b", np.zeros(n_out))
