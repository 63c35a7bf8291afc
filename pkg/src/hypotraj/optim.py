"""Adam with global-norm gradient clipping."""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def global_norm(grads):
    return float(np.sqrt(np.sum([np.sum(g * g) for g in grads.values()])))


def adam_step(store, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=1.0):
    """Clip ``grads`` to a global L2 norm of ``clip_norm`` then take one Adam step.

    Updates ``store`` values and ``state`` in place and returns the global
    gradient norm measured before clipping. Raises ``ContractError`` naming
    the first parameter with a non-finite gradient; nothing is updated then.
    """
    if not clip_norm > 0:
        raise ContractError("clip_norm must be positive")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ContractError(f"non-finite gradient for parameter {name!r}")
        if g.shape != store[name].shape:
            raise ContractError(f"gradient shape {g.shape} != parameter {name!r} {store[name].shape}")
    norm = global_norm(grads)
    scale = clip_norm / norm if norm > clip_norm else 1.0
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        g = g * scale
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        p = store[name]
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return norm


def lr_at_epoch(base_lr, epoch, n_epochs):
    """Learning rate halved at epochs ceil(E/4), ceil(E/2) and ceil(3E/4)."""
    marks = [-(-n_epochs // 4), -(-n_epochs // 2), -(-3 * n_epochs // 4)]
    return base_lr * 0.5 ** sum(epoch >= m for m in marks)
