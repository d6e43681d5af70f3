"""Dense layers, activations, and batch normalization with two stat sets.

The batch-norm layer keeps one running (mean, var) pair per sample origin
and a single shared affine (gamma, beta).  Train-mode forwards normalize
with the current batch's statistics and update only the running pair that
matches the batch tag; eval-mode forwards always normalize with the
real-origin running statistics.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..common import ConfigurationError, ContractError, DegenerateBatchError, Origin

DomainTag = Origin  # every batch carries exactly one origin tag


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


class Layer:
    """Minimal layer protocol; forward caches whatever backward needs."""

    def forward(self, x: np.ndarray, *, mode: Mode, tag: DomainTag) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def grads(self) -> dict[str, np.ndarray]:
        return {}

    def state(self) -> dict[str, np.ndarray]:
        return {}

    def descriptor(self) -> dict:
        raise NotImplementedError

    @property
    def in_dim(self) -> int | None:
        return None

    @property
    def out_dim(self) -> int | None:
        return None


class DenseLayer(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        if rng is None:
            self.weights = np.zeros((self.n_out, self.n_in))
            self.bias = np.zeros(self.n_out)
        else:
            bound = 1.0 / np.sqrt(self.n_in)
            self.weights = rng.uniform(-bound, bound, size=(self.n_out, self.n_in))
            self.bias = rng.uniform(-bound, bound, size=self.n_out)
        self._x = None
        self._grads: dict[str, np.ndarray] = {}

    def forward(self, x, *, mode, tag):
        self._x = x
        return x @ self.weights.T + self.bias

    def backward(self, grad_out):
        if self._x is None:
            raise ContractError("backward before forward")
        self._grads = {"weights": grad_out.T @ self._x, "bias": grad_out.sum(axis=0)}
        return grad_out @ self.weights

    def params(self):
        return {"weights": self.weights, "bias": self.bias}

    def grads(self):
        return self._grads

    def descriptor(self):
        return {"type": "dense", "in": self.n_in, "out": self.n_out}

    @property
    def in_dim(self):
        return self.n_in

    @property
    def out_dim(self):
        return self.n_out


class Tanh(Layer):
    def forward(self, x, *, mode, tag):
        self._y = np.tanh(x)
        return self._y

    def backward(self, grad_out):
        return grad_out * (1.0 - self._y**2)

    def descriptor(self):
        return {"type": "tanh"}


class Relu(Layer):
    def forward(self, x, *, mode, tag):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad_out):
        return grad_out * self._mask

    def descriptor(self):
        return {"type": "relu"}


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def initial(cls, dim: int) -> "RunningStats":
        return cls(mean=np.zeros(dim), var=np.ones(dim))

    def update(self, batch_mean: np.ndarray, batch_var_unbiased: np.ndarray, momentum: float) -> None:
        self.mean = (1.0 - momentum) * self.mean + momentum * batch_mean
        self.var = (1.0 - momentum) * self.var + momentum * batch_var_unbiased


class DualBatchNorm(Layer):
    """Batch norm with per-origin running statistics and shared affine."""

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        if not 0.0 < momentum < 1.0:
            raise ConfigurationError("momentum must lie in (0, 1)")
        if not eps > 0.0:
            raise ConfigurationError("eps must be positive")
        self.dim = int(dim)
        self.momentum = float(momentum)
        self.eps = float(eps)
        self.gamma = np.ones(self.dim)
        self.beta = np.zeros(self.dim)
        self.running_real = RunningStats.initial(self.dim)
        self.running_synt = RunningStats.initial(self.dim)
        self._cache = None
        self._grads: dict[str, np.ndarray] = {}
        # Introspection hooks: which statistics the last forward used, and an
        # optional log of (tag, batch_mean, unbiased_var) train updates.
        self.last_stats_source: str | None = None
        self.stats_log: list | None = None

    def forward(self, x, *, mode, tag):
        if mode == Mode.TRAIN:
            n = x.shape[0]
            if n < 2:
                raise DegenerateBatchError("train-mode batch norm needs batch size >= 2")
            mu = x.mean(axis=0)
            var = x.var(axis=0)  # biased; used for normalization
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mu) * inv
            unbiased = var * n / (n - 1)
            stats = self.running_real if tag == DomainTag.REAL else self.running_synt
            stats.update(mu, unbiased, self.momentum)
            if self.stats_log is not None:
                self.stats_log.append((tag, mu.copy(), unbiased.copy()))
            self._cache = ("train", xhat, inv, n)
            self.last_stats_source = f"batch-{tag.value}"
        else:
            inv = 1.0 / np.sqrt(self.running_real.var + self.eps)
            xhat = (x - self.running_real.mean) * inv
            self._cache = ("eval", xhat, inv, x.shape[0])
            self.last_stats_source = "running-real"
        return self.gamma * xhat + self.beta

    def backward(self, grad_out):
        if self._cache is None:
            raise ContractError("backward before forward")
        kind, xhat, inv, n = self._cache
        self._grads = {"gamma": (grad_out * xhat).sum(axis=0), "beta": grad_out.sum(axis=0)}
        dxhat = grad_out * self.gamma
        if kind == "eval":
            return dxhat * inv
        # Train mode: differentiate through the batch mean and variance.
        return (inv / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return self._grads

    def state(self):
        return {
            "real_mean": self.running_real.mean,
            "real_var": self.running_real.var,
            "synt_mean": self.running_synt.mean,
            "synt_var": self.running_synt.var,
        }

    def set_state(self, state: dict[str, np.ndarray]) -> None:
        self.running_real = RunningStats(np.array(state["real_mean"], dtype=float),
                                         np.array(state["real_var"], dtype=float))
        self.running_synt = RunningStats(np.array(state["synt_mean"], dtype=float),
                                         np.array(state["synt_var"], dtype=float))

    def descriptor(self):
        return {"type": "dual_batch_norm", "dim": self.dim,
                "momentum": self.momentum, "eps": self.eps}

    @property
    def in_dim(self):
        return self.dim

    @property
    def out_dim(self):
        return self.dim


def replay_running_stats(stats_log: list, dim: int, momentum: float,
                         tag: DomainTag = DomainTag.REAL) -> RunningStats:
    """Re-run the running-statistic update over one tag's logged batches."""
    out = RunningStats.initial(dim)
    for entry_tag, mu, unbiased in stats_log:
        if entry_tag == tag:
            out.update(mu, unbiased, momentum)
    return out
