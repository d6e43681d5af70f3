"""Versioned JSON checkpoints: architecture, flat float64 tensors, both
running-statistic sets, optional optimizer state and task header."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..common import ConfigurationError
from .layers import DenseLayer, DualBatchNorm, Relu, Tanh
from .network import Network

SCHEMA_VERSION = "nn/1"


def build_network(descriptors: list[dict], seed: int | None = None) -> Network:
    """Instantiate a network from architecture descriptors.

    With a seed, dense layers get the standard uniform(+/- 1/sqrt(fan_in))
    init; without one they start at zero (callers then load tensors).
    """
    rng = np.random.default_rng(seed) if seed is not None else None
    layers = []
    for d in descriptors:
        kind = d["type"]
        if kind == "dense":
            layers.append(DenseLayer(d["in"], d["out"], rng=rng))
        elif kind == "tanh":
            layers.append(Tanh())
        elif kind == "relu":
            layers.append(Relu())
        elif kind == "dual_batch_norm":
            layers.append(DualBatchNorm(d["dim"], momentum=d.get("momentum", 0.1),
                                        eps=d.get("eps", 1e-5)))
        else:
            raise ConfigurationError(f"unknown layer type {kind!r}")
    return Network(layers)


def network_to_dict(net: Network, optimizer_state: dict | None = None,
                    task: dict | None = None) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "architecture": net.descriptors(),
        "params": {k: np.asarray(v, dtype=np.float64).ravel().tolist()
                   for k, v in net.named_parameters().items()},
        "running": {k: np.asarray(v, dtype=np.float64).ravel().tolist()
                    for k, v in net.named_state().items()},
        "optimizer": optimizer_state,
        "task": task,
    }


def network_from_dict(d: dict) -> tuple[Network, dict | None, dict | None]:
    if d.get("schema") != SCHEMA_VERSION:
        raise ConfigurationError(f"expected schema {SCHEMA_VERSION!r}, got {d.get('schema')!r}")
    net = build_network(d["architecture"])
    params = net.named_parameters()
    for key, flat in d["params"].items():
        if key not in params:
            raise ConfigurationError(f"checkpoint parameter {key!r} not in architecture")
        net.set_parameter(key, np.asarray(flat, dtype=float).reshape(params[key].shape))
    running = d.get("running", {})
    for i, layer in enumerate(net.layers):
        state = layer.state()
        if not state:
            continue
        loaded = {}
        for name, arr in state.items():
            key = f"{i}.{name}"
            if key in running:
                loaded[name] = np.asarray(running[key], dtype=float).reshape(arr.shape)
            else:
                loaded[name] = arr
        layer.set_state(loaded)
    return net, d.get("optimizer"), d.get("task")


def save_checkpoint(net: Network, path, optimizer_state: dict | None = None,
                    task: dict | None = None) -> None:
    payload = network_to_dict(net, optimizer_state=optimizer_state, task=task)
    Path(path).write_text(json.dumps(payload) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[Network, dict | None, dict | None]:
    return network_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
