"""Layer stack with exact backprop and parameter averaging."""
from __future__ import annotations

import copy
from typing import Sequence

import numpy as np

from ..common import ConfigurationError, ContractError
from .layers import DomainTag, Layer, Mode


class Network:
    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)
        if not self.layers:
            raise ConfigurationError("network needs at least one layer")
        width = None
        for i, layer in enumerate(self.layers):
            if layer.in_dim is not None:
                if width is not None and layer.in_dim != width:
                    raise ConfigurationError(
                        f"layer {i} expects input dim {layer.in_dim}, previous produces {width}")
                width = layer.out_dim
        self._has_cache = False

    def forward(self, x, tag: DomainTag = DomainTag.REAL, mode: Mode = Mode.EVAL) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2:
            raise ContractError(f"expected a (batch, features) matrix, got shape {x.shape}")
        if x.shape[0] == 0:
            raise ContractError("batch must be nonempty")
        for layer in self.layers:
            x = layer.forward(x, mode=mode, tag=tag)
        self._has_cache = True
        return x

    def backward(self, loss_grad: np.ndarray) -> dict[str, np.ndarray]:
        if not self._has_cache:
            raise ContractError("backward requires a cached forward pass")
        g = np.asarray(loss_grad, dtype=float)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        self._has_cache = False
        return self.gradients()

    def named_parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                out[f"{i}.{name}"] = arr
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.grads().items():
                out[f"{i}.{name}"] = arr
        return out

    def named_state(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.state().items():
                out[f"{i}.{name}"] = arr
        return out

    def set_parameter(self, key: str, value: np.ndarray) -> None:
        idx, name = key.split(".", 1)
        layer = self.layers[int(idx)]
        current = layer.params()[name]
        if current.shape != value.shape:
            raise ContractError(f"shape mismatch for {key}: {current.shape} vs {value.shape}")
        setattr(layer, name, np.array(value, dtype=float))

    @property
    def num_parameters(self) -> int:
        return sum(arr.size for arr in self.named_parameters().values())

    def descriptors(self) -> list[dict]:
        return [layer.descriptor() for layer in self.layers]

    def copy(self) -> "Network":
        return copy.deepcopy(self)


def average_parameters(nets: Sequence[Network]) -> Network:
    """Arithmetic mean of every parameter tensor and running statistic."""
    nets = list(nets)
    if not nets:
        raise ContractError("average_parameters needs at least one network")
    ref = nets[0].descriptors()
    for net in nets[1:]:
        if net.descriptors() != ref:
            raise ContractError("cannot average networks with different architectures")
    out = nets[0].copy()
    for key in list(out.named_parameters()):
        stacked = np.stack([net.named_parameters()[key] for net in nets])
        out.set_parameter(key, stacked.mean(axis=0))
    # Running statistics are averaged too, so eval-mode behavior is the mean
    # of the source models' normalizers.
    for i, layer in enumerate(out.layers):
        state = layer.state()
        if not state:
            continue
        averaged = {}
        for name in state:
            stacked = np.stack([net.layers[i].state()[name] for net in nets])
            averaged[name] = stacked.mean(axis=0)
        layer.set_state(averaged)
    return out
