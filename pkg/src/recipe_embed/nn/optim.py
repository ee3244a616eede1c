"""SGD and Adam over lists of :class:`Param`. Frozen params never move."""

from __future__ import annotations

import numpy as np

from recipe_embed.errors import ConfigError, TrainingDivergence


def _check_finite(params):
    for p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise TrainingDivergence(f"non-finite gradient in {p.name or 'param'}")


def zero_grad(params):
    for p in params:
        p.grad = None


class SGD:
    def __init__(self, params, lr=0.01):
        if lr <= 0:
            raise ConfigError("learning rate must be > 0")
        self.params = list(params)
        self.lr = lr

    def zero_grad(self):
        zero_grad(self.params)

    def step(self):
        _check_finite(self.params)
        for p in self.params:
            if p.frozen or p.grad is None:
                continue
            p.data -= self.lr * p.grad


class Adam:
    """Adam with bias correction; defaults beta1=0.9, beta2=0.999, eps=1e-8."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ConfigError("learning rate must be > 0")
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = [0] * len(self.params)

    def zero_grad(self):
        zero_grad(self.params)

    def step(self):
        _check_finite(self.params)
        b1, b2 = self.beta1, self.beta2
        for k, p in enumerate(self.params):
            if p.frozen or p.grad is None:
                continue
            self.t[k] += 1
            t = self.t[k]
            g = p.grad
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            m_hat = self.m[k] / (1 - b1 ** t)
            v_hat = self.v[k] / (1 - b2 ** t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(params, name="adam", lr=1e-3, **kw):
    if name == "adam":
        return Adam(params, lr=lr, **kw)
    if name == "sgd":
        return SGD(params, lr=lr)
    raise ConfigError(f"unknown optimizer {name!r}")
