"""Adam with bias correction and a constant learning rate."""
import numpy as np

from ..errors import ConfigError, ShapeError
from .params import ParamStore


def adam_step(store: ParamStore, grads: dict, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> ParamStore:
    """Update ``store`` in place (and return it)."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    store.step += 1
    t = store.step
    c1 = 1 - beta1 ** t
    c2 = 1 - beta2 ** t
    for name in store.names():
        g = grads[name]
        p = store.params[name]
        if g.shape != p.shape:
            raise ShapeError(f"adam {name}", p.shape, g.shape)
        m, v = store.m[name], store.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
    return store
