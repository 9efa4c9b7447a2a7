"""Central finite-difference verification of every backward rule."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .tensor import Tensor, backward, precision64


def _away_from_zero(rng, shape, margin=1e-2):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def _dims(rng, lo=1, hi=4):
    return int(rng.integers(lo, hi + 1))


def _case_add(rng):
    n, m = _dims(rng), _dims(rng)
    if rng.random() < 0.5:
        return [rng.standard_normal((n, m)), rng.standard_normal((n, m))], ops.add
    return [rng.standard_normal((n, m)), rng.standard_normal((m,))], ops.add


def _case_sub(rng):
    n, m = _dims(rng), _dims(rng)
    return [rng.standard_normal((n, m)), rng.standard_normal((1, m))], ops.sub


def _case_mul(rng):
    n, m = _dims(rng), _dims(rng)
    return [rng.standard_normal((n, m)), rng.standard_normal((n, m))], ops.mul


def _case_neg(rng):
    return [rng.standard_normal((_dims(rng), _dims(rng)))], ops.neg


def _case_scale(rng):
    c = float(rng.uniform(-3, 3))
    return [rng.standard_normal((_dims(rng), _dims(rng)))], lambda x: ops.scale(x, c)


def _case_add_scalar(rng):
    c = float(rng.uniform(-3, 3))
    return [rng.standard_normal((_dims(rng), _dims(rng)))], lambda x: ops.add_scalar(x, c)


def _case_matmul(rng):
    n, k, m = _dims(rng), _dims(rng), _dims(rng)
    return [rng.standard_normal((n, k)), rng.standard_normal((k, m))], ops.matmul


def _case_conv1d(rng):
    b, cin, cout, k = _dims(rng, 1, 2), _dims(rng, 1, 3), _dims(rng, 1, 3), _dims(rng, 1, 4)
    stride = int(rng.integers(1, 3))
    pad = (int(rng.integers(0, k)), int(rng.integers(0, k)))
    t = k + stride * _dims(rng, 1, 4)
    inputs = [rng.standard_normal((b, cin, t)), rng.standard_normal((cout, cin, k)), rng.standard_normal(cout)]
    return inputs, lambda x, w, bias: ops.conv1d(x, w, bias, stride=stride, padding=pad)


def _case_conv2d(rng):
    b, cin, cout = _dims(rng, 1, 2), _dims(rng, 1, 2), _dims(rng, 1, 3)
    kh, kw = _dims(rng, 1, 3), _dims(rng, 1, 3)
    stride = int(rng.integers(1, 3))
    pads = ((int(rng.integers(0, kh)),) * 2, (int(rng.integers(0, kw)),) * 2)
    h, w = kh + stride * _dims(rng, 1, 3), kw + stride * _dims(rng, 1, 3)
    inputs = [rng.standard_normal((b, cin, h, w)), rng.standard_normal((cout, cin, kh, kw)), rng.standard_normal(cout)]
    return inputs, lambda x, wt, bias: ops.conv2d(x, wt, bias, stride=stride, padding=pads)


def _case_upsample1d(rng):
    return [rng.standard_normal((_dims(rng, 1, 2), _dims(rng), _dims(rng, 1, 6)))], ops.upsample


def _case_upsample2d(rng):
    shape = (_dims(rng, 1, 2), _dims(rng, 1, 2), _dims(rng), _dims(rng))
    return [rng.standard_normal(shape)], ops.upsample


def _case_leaky_relu(rng):
    slope = float(rng.uniform(0, 0.5))
    return [_away_from_zero(rng, (_dims(rng), _dims(rng)))], lambda x: ops.leaky_relu(x, slope)


def _case_tanh(rng):
    return [rng.standard_normal((_dims(rng), _dims(rng)))], ops.tanh


def _case_sigmoid(rng):
    return [3 * rng.standard_normal((_dims(rng), _dims(rng)))], ops.sigmoid


def _case_dropout(rng):
    rate = float(rng.uniform(0.05, 0.9))
    seed = int(rng.integers(2**32))
    # same seed on every evaluation so the mask is fixed across perturbations
    return [rng.standard_normal((_dims(rng), _dims(rng, 2, 8)))], lambda x: ops.dropout(
        x, rate, np.random.default_rng(seed)
    )


def _case_sum(rng):
    return [rng.standard_normal((_dims(rng), _dims(rng)))], ops.sum


def _case_mean(rng):
    return [rng.standard_normal((_dims(rng), _dims(rng)))], ops.mean


def _case_abs_sum(rng):
    return [_away_from_zero(rng, (_dims(rng), _dims(rng)))], ops.abs_sum


def _case_mean_abs(rng):
    return [_away_from_zero(rng, (_dims(rng), _dims(rng)))], ops.mean_abs


def _case_concat(rng):
    b, t = _dims(rng, 1, 2), _dims(rng)
    return [rng.standard_normal((b, _dims(rng), t)), rng.standard_normal((b, _dims(rng), t))], (
        lambda x, y: ops.concat([x, y], axis=1)
    )


CATALOGUE: dict[str, Callable] = {
    "add": _case_add,
    "sub": _case_sub,
    "mul": _case_mul,
    "neg": _case_neg,
    "scale": _case_scale,
    "add_scalar": _case_add_scalar,
    "matmul": _case_matmul,
    "conv1d": _case_conv1d,
    "conv2d": _case_conv2d,
    "upsample1d": _case_upsample1d,
    "upsample2d": _case_upsample2d,
    "leaky_relu": _case_leaky_relu,
    "tanh": _case_tanh,
    "sigmoid": _case_sigmoid,
    "dropout": _case_dropout,
    "sum": _case_sum,
    "mean": _case_mean,
    "abs_sum": _case_abs_sum,
    "mean_abs": _case_mean_abs,
    "concat": _case_concat,
}


@dataclass
class OpResult:
    op: str
    cases: int
    max_rel_error: float
    passed: bool


def numeric_gradient(f: Callable[[list[np.ndarray]], float], arrays: list[np.ndarray], h: float = 1e-5):
    """Central differences of scalar ``f`` with respect to every array entry."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f(arrays)
            flat[i] = orig - h
            down = f(arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_case(fn, inputs: list[np.ndarray], weights_seed: int, h: float = 1e-5) -> float:
    """Max relative error between taped and finite-difference gradients.

    The op output is contracted with fixed random weights so every output
    entry contributes to the scalar being differentiated.
    """
    with precision64():
        probe = fn(*[Tensor(a) for a in inputs])
        weights = np.random.default_rng(weights_seed).standard_normal(probe.shape)

        def scalar(arrays):
            out = fn(*[Tensor(a) for a in arrays])
            return float((out.data * weights).sum())

        leaves = [Tensor(a.copy(), requires_grad=True) for a in inputs]
        loss = ops.sum(ops.mul(fn(*leaves), Tensor(weights)))
        backward(loss)
        numeric = numeric_gradient(scalar, [a.astype(np.float64).copy() for a in inputs], h)
    return max(relative_error(leaf.grad, n) for leaf, n in zip(leaves, numeric))


def run_suite(cases: int = 100, tol: float = 1e-3, seed: int = 0, only: list[str] | None = None, h: float = 1e-5):
    results = []
    for idx, (name, make) in enumerate(CATALOGUE.items()):
        if only and name not in only:
            continue
        rng = np.random.default_rng([seed, idx])
        worst = 0.0
        for _ in range(cases):
            inputs, fn = make(rng)
            worst = max(worst, check_case(fn, inputs, int(rng.integers(2**32)), h))
        results.append(OpResult(name, cases, worst, worst <= tol))
    return results
