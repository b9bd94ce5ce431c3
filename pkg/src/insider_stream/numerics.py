"""Dense float64 building blocks: activations, Adam, and a finite-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    pass


def _arr(a):
    return np.asarray(a, dtype=np.float64)


def matmul(a, b):
    a, b = _arr(a), _arr(b)
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return a @ b


def add_bias(a, b):
    a, b = _arr(a), _arr(b)
    if b.ndim != 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"bias of shape {b.shape} does not fit {a.shape}")
    return a + b


def elementwise_mul(a, b):
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ShapeError(f"elementwise shape mismatch {a.shape} vs {b.shape}")
    return a * b


def tanh(x):
    return np.tanh(x)


def sigmoid(x):
    # tanh form is overflow-free and gives exactly 0.5 at 0
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


@dataclass
class AdamState:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState):
    """Bias-corrected Adam update of ``params`` in place; returns ``params``.

    Blocks missing from ``grads`` are left alone. Raises NonFiniteGradient
    before touching anything if a gradient has NaN or inf.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient {name!r} shape {g.shape} != {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in parameter block {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


@dataclass
class GradCheckReport:
    per_block: dict
    tolerance: float
    checked: int

    @property
    def max_error(self):
        return max(self.per_block.values(), default=0.0)

    @property
    def passed(self):
        return self.max_error < self.tolerance

    def worst_block(self):
        return max(self.per_block, key=self.per_block.get) if self.per_block else None


def gradient_check(loss_fn, params: dict, tolerance=1e-4, h=1e-5, abs_floor=None,
                   max_coords=None, seed=0, value_fn=None) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    ``loss_fn(params) -> (loss, grads)``. The step for coordinate ``i`` is
    ``h * max(1, |theta_i|)``. Error per coordinate is
    ``|a - n| / max(|a|, |n|, abs_floor)``; the report keeps the max per block.
    The default floor is ``1e-6 * max(1, |loss|)``: central differences carry
    roundoff of order ``eps * |loss| / h``, so smaller gradients are compared
    in absolute terms.
    ``max_coords`` limits checking to a random subset per block; ``value_fn``
    is an optional loss-only callable used for the perturbed evaluations.
    """
    loss, analytic = loss_fn(params)
    if abs_floor is None:
        abs_floor = 1e-6 * max(1.0, abs(loss))
    if value_fn is None:
        def value_fn(p):
            return loss_fn(p)[0]
    rng = np.random.default_rng(seed)
    per_block = {}
    checked = 0
    for name in sorted(params):
        p = params[name]
        g = analytic.get(name)
        if g is None:
            g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        worst = 0.0
        for i in coords:
            orig = flat[i]
            step = h * max(1.0, abs(orig))
            flat[i] = orig + step
            lp = value_fn(params)
            flat[i] = orig - step
            lm = value_fn(params)
            flat[i] = orig
            num = (lp - lm) / (2.0 * step)
            a = gflat[i]
            err = abs(a - num) / max(abs(a), abs(num), abs_floor)
            worst = max(worst, err)
            checked += 1
        per_block[name] = worst
    return GradCheckReport(per_block, tolerance, checked)
