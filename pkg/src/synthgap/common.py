"""Shared primitives: sample origins, error taxonomy, labeled seed streams."""
from __future__ import annotations

import hashlib
import json
from enum import Enum

import numpy as np

__all__ = [
    "Origin",
    "ConfigurationError",
    "ContractError",
    "DegenerateBatchError",
    "TrainingDivergenceError",
    "UndefinedRatioError",
    "AcceptanceFloorError",
    "seed_for",
    "rng_for",
    "config_hash",
    "logsumexp",
]


class Origin(str, Enum):
    """Provenance tag carried by every sample and every training batch."""

    REAL = "real"
    SYNTHETIC = "synthetic"


class ConfigurationError(ValueError):
    """A spec object, config file, or parameter set violates its invariants."""


class ContractError(ValueError):
    """An operation was called outside its documented preconditions."""


class DegenerateBatchError(ContractError):
    """A train-mode batch is too small to compute batch statistics."""


class TrainingDivergenceError(RuntimeError):
    """Nonfinite loss or gradients encountered during optimization."""


class UndefinedRatioError(ValueError):
    """Density ratio requested at a point where the proposal has zero mass."""


class AcceptanceFloorError(RuntimeError):
    """Rejection sampling aborted because the acceptance rate collapsed."""


def seed_for(master: int, *labels: object) -> int:
    """Derive a labeled 63-bit seed from a master seed.

    Distinct label paths give independent, reproducible streams, so each
    pipeline stage (data, init, batching, rejection, ...) can be re-run in
    isolation without perturbing the others.
    """
    key = "/".join([str(int(master)), *map(str, labels)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def rng_for(master: int, *labels: object) -> np.random.Generator:
    return np.random.default_rng(seed_for(master, *labels))


def config_hash(payload) -> str:
    """Stable short hash of a JSON-serializable object."""
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def logsumexp(values, axis=None):
    """Numerically stable log-sum-exp; all-(-inf) slices stay -inf, not NaN."""
    a = np.asarray(values, dtype=float)
    hi = np.max(a, axis=axis, keepdims=True)
    hi_safe = np.where(np.isfinite(hi), hi, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - hi_safe), axis=axis, keepdims=True)) + hi_safe
    out = np.where(np.isfinite(hi), out, hi)
    if axis is None:
        return float(np.asarray(out).ravel()[0])
    return np.squeeze(out, axis=axis)
