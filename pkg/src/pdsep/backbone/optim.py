"""RMSProp and critic weight clipping."""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

from .tensor import Tensor


class RMSProp:
    """RMSProp over a named parameter set.

    Per parameter::

        acc   <- rho * acc + (1 - rho) * g**2
        param <- param - lr * g / (sqrt(acc) + eps)
    """

    def __init__(self, params: Mapping[str, Tensor], lr: float = 5e-5, rho: float = 0.9, eps: float = 1e-8):
        if lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        if not 0 < rho < 1:
            raise ValueError(f"decay rate must lie in (0, 1), got {rho}")
        if eps <= 0:
            raise ValueError(f"eps must be positive, got {eps}")
        self.params = dict(params)
        self.lr, self.rho, self.eps = lr, rho, eps
        self.acc = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            rmsprop_step(p, self.acc[name], self.lr, self.rho, self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def rmsprop_step(param: Tensor, acc: np.ndarray, lr: float, rho: float, eps: float) -> None:
    """Apply one update in place; ``acc`` is the squared-gradient accumulator."""
    g = param.grad
    if g is None:
        raise ValueError("rmsprop_step: parameter has no gradient")
    if acc.shape != param.shape:
        raise ValueError(f"rmsprop_step: state shape {acc.shape} does not match parameter {param.shape}")
    dt = param.data.dtype.type
    acc *= dt(rho)
    acc += dt(1 - rho) * g * g
    if lr:
        param.data -= dt(lr) * g / (np.sqrt(acc) + dt(eps))


def clip_weights(params: Iterable[Tensor], c: float) -> None:
    """Clamp every entry of every parameter to [-c, c] in place."""
    if not c > 0:
        raise ValueError(f"clipping bound must be positive, got {c}")
    for p in params:
        np.clip(p.data, -c, c, out=p.data)
