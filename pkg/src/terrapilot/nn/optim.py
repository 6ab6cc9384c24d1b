"""Adam with bias correction over a ParamStore.

Moments live in ``store.opt_state`` keyed by parameter name, so repeated
calls continue the same trajectory and checkpoint/restore keeps training
reproducible.  Frozen parameters are skipped entirely; a trainable
parameter with no gradient is an error (the caller forgot backward or the
parameter is disconnected and should have been frozen).
"""

from __future__ import annotations

import numpy as np

from ..errors import InvariantViolation
from .layers import ParamStore


def adam_step(store: ParamStore, lr: float, betas: tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8) -> None:
    b1, b2 = betas
    store.opt_step += 1
    t = store.opt_step
    scale1 = 1.0 / (1.0 - b1 ** t)
    scale2 = 1.0 / (1.0 - b2 ** t)
    for name in store.names():
        if not store.is_trainable(name):
            continue
        p = store[name]
        if p.grad is None:
            raise InvariantViolation(f"missing gradient for trainable parameter {name!r}")
        g = p.grad
        state = store.opt_state.get(name)
        if state is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            m, v = state
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        store.opt_state[name] = (m, v)
        m_hat = m * scale1
        v_hat = v * scale2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
