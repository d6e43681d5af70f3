"""SGD-with-momentum and Adam over named parameter dicts."""
from __future__ import annotations

import numpy as np

from ..common import ConfigurationError, ContractError, TrainingDivergenceError
from .network import Network


def _check_finite(grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError(f"nonfinite gradient in {name}")


class SgdMomentum:
    def __init__(self, lr: float = 0.01, momentum: float = 0.0):
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocity: dict[str, np.ndarray] = {}
        self.step_count = 0

    def step(self, net: Network, grads: dict[str, np.ndarray] | None = None) -> Network:
        params = net.named_parameters()
        if grads is None:
            grads = net.gradients()
        if set(grads) - set(params):
            raise ContractError("gradient keys do not match parameters")
        _check_finite(grads)
        for name, g in grads.items():
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(g)
            v = self.momentum * v - self.lr * g
            self.velocity[name] = v
            params[name] += v
        self.step_count += 1
        return net

    def state_dict(self) -> dict:
        return {
            "method": "sgd",
            "lr": self.lr,
            "momentum": self.momentum,
            "step_count": self.step_count,
            "velocity": {k: v.tolist() for k, v in self.velocity.items()},
        }


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def step(self, net: Network, grads: dict[str, np.ndarray] | None = None) -> Network:
        params = net.named_parameters()
        if grads is None:
            grads = net.gradients()
        if set(grads) - set(params):
            raise ContractError("gradient keys do not match parameters")
        _check_finite(grads)
        t = self.step_count + 1
        for name, g in grads.items():
            m = self.m.get(name)
            v = self.v.get(name)
            if m is None:
                m = np.zeros_like(g)
                v = np.zeros_like(g)
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g**2
            self.m[name] = m
            self.v[name] = v
            mhat = m / (1.0 - self.beta1**t)
            vhat = v / (1.0 - self.beta2**t)
            params[name] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
        self.step_count = t
        return net

    def state_dict(self) -> dict:
        return {
            "method": "adam",
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "step_count": self.step_count,
            "m": {k: v.tolist() for k, v in self.m.items()},
            "v": {k: v.tolist() for k, v in self.v.items()},
        }


def make_optimizer(method: str, lr: float, momentum: float = 0.9):
    if method == "adam":
        return Adam(lr=lr)
    if method == "sgd":
        return SgdMomentum(lr=lr, momentum=momentum)
    raise ConfigurationError(f"unknown optimizer {method!r}")
