"""Central finite-difference gradient checks."""

from __future__ import annotations

import numpy as np


def numerical_grad(f, p, eps=1e-5):
    """Central differences of scalar ``f()`` with respect to ``p.data``."""
    grad = np.zeros_like(p.data)
    flat = p.data.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = float(f().data)
        flat[i] = orig - eps
        down = float(f().data)
        flat[i] = orig
        g[i] = (up - down) / (2 * eps)
    return grad


def relative_error(analytic, numeric):
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return num / den


def check_gradients(f, params, eps=1e-5):
    """Max relative error between backprop and finite differences over ``params``.

    ``f`` must rebuild the graph from the current param values on each call.
    """
    for p in params:
        p.grad = None
    f().backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        numeric = numerical_grad(f, p, eps)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
