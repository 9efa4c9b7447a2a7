"""Generator and critic objectives for one dual pair.

Networks are passed as callables so the same code serves the trainer (which
binds parameters and dropout streams) and tests (which pass toy functions).
A generator maps a Tensor to a same-shape Tensor; a critic maps a Tensor to
a scalar Tensor and, for gradient-penalty mode, also accepts ``tangent=``
and then returns ``(score, directional_derivative)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .backbone import Tensor, frozen, grad, no_grad, ops
from .backbone.tensor import ShapeError

Generator = Callable[[Tensor], Tensor]
Critic = Callable[..., object]

MODES = ("clip", "gp")


@dataclass
class LossConfig:
    lambda_u: float = 1000.0
    lambda_v: float = 1000.0
    mode: str = "clip"
    clip: float = 0.05
    lambda_gp: float = 10.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"critic mode must be one of {MODES}, got {self.mode!r}")
        for name in ("lambda_u", "lambda_v"):
            value = getattr(self, name)
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
            if not 100.0 <= value <= 1000.0:
                warnings.warn(f"{name}={value} lies outside the usual range [100, 1000]", stacklevel=3)
        if self.clip <= 0:
            raise ValueError(f"clip must be positive, got {self.clip}")
        if self.lambda_gp <= 0:
            raise ValueError(f"lambda_gp must be positive, got {self.lambda_gp}")


def _same_shape(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"mixture shape {a.shape} and source shape {b.shape} differ")


def generator_loss(u: Tensor, v: Tensor, ga: Generator, gb: Generator, da: Critic, db: Critic, cfg: LossConfig):
    """Cycle-reconstruction plus adversarial objective for G_A and G_B.

    Returns ``(loss, parts)`` where ``parts`` holds the float values of the two
    mean-L1 reconstruction errors and both critic scores.
    """
    _same_shape(u, v)
    fake_v = ga(u)
    recon_u = gb(fake_v)
    fake_u = gb(v)
    recon_v = ga(fake_u)
    err_u = ops.mean_abs(ops.sub(u, recon_u))
    err_v = ops.mean_abs(ops.sub(v, recon_v))
    score_b = db(fake_u)
    score_a = da(fake_v)
    loss = ops.add(ops.scale(err_u, cfg.lambda_u), ops.scale(err_v, cfg.lambda_v))
    loss = ops.sub(ops.sub(loss, score_b), score_a)
    parts = {
        "recon_u": float(err_u.data),
        "recon_v": float(err_v.data),
        "score_a": float(score_a.data),
        "score_b": float(score_b.data),
    }
    return loss, parts


def wasserstein_critic_loss(critic: Critic, real: Tensor, fake: Tensor) -> Tensor:
    """critic(fake) - critic(real)."""
    return ops.sub(critic(fake), critic(real))


def gradient_penalty(critic: Critic, real: Tensor, fake: Tensor, lambda_gp: float, rng: np.random.Generator) -> Tensor:
    """lambda_gp * (||grad_x critic(x_hat)||_2 - 1)**2 at a random interpolate.

    The returned tensor carries the penalty's value, and its tape yields the
    exact parameter gradient: with g = grad_x critic(x_hat) held fixed, the
    parameter gradient of ||g|| equals that of (g / ||g||) . (dcritic/dx)[g],
    and the directional derivative along g is available from the critic as a
    taped forward-mode product.
    """
    eps = float(rng.random())
    x_hat = eps * real.data + (1.0 - eps) * fake.data
    probe = Tensor(x_hat, requires_grad=True)
    with frozen(_leaves_of(critic)):
        (g,) = grad(critic(probe), [probe])
    norm = float(np.sqrt(np.sum(np.asarray(g, dtype=np.float64) ** 2)))
    value = lambda_gp * (norm - 1.0) ** 2
    if norm == 0:
        return Tensor(np.asarray(value))
    _, directional = critic(Tensor(x_hat), tangent=g)
    coef = lambda_gp * 2.0 * (norm - 1.0) / norm
    surrogate = ops.scale(directional, coef)
    # keep the surrogate's gradient, report the penalty's value
    return ops.add_scalar(surrogate, value - float(surrogate.data))


def _leaves_of(critic) -> list:
    # parameter gradients are not needed for the input gradient
    return list(getattr(critic, "params", {}).values())


def critic_loss_a(u: Tensor, v: Tensor, ga: Generator, da: Critic, cfg: LossConfig, rng=None) -> Tensor:
    """D_A(G_A(u)) - D_A(v), plus the gradient penalty in ``gp`` mode."""
    _same_shape(u, v)
    with no_grad():
        fake = ga(u)
    loss = wasserstein_critic_loss(da, v, fake)
    if cfg.mode == "gp":
        loss = ops.add(loss, gradient_penalty(da, v, fake, cfg.lambda_gp, rng))
    return loss


def critic_loss_b(u: Tensor, v: Tensor, gb: Generator, db: Critic, cfg: LossConfig, rng=None) -> Tensor:
    """D_B(G_B(v)) - D_B(u), plus the gradient penalty in ``gp`` mode."""
    _same_shape(u, v)
    with no_grad():
        fake = gb(v)
    loss = wasserstein_critic_loss(db, u, fake)
    if cfg.mode == "gp":
        loss = ops.add(loss, gradient_penalty(db, u, fake, cfg.lambda_gp, rng))
    return loss
