"""Training loop over mixed real/synthetic pools: origin-pure batching,
per-origin batch-norm routing, validation tracking, checkpoint averaging."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .common import (
    ConfigurationError,
    ContractError,
    Origin,
    TrainingDivergenceError,
    seed_for,
)
from .nn import Network, average_parameters, make_optimizer, save_checkpoint
from .worlds import Dataset, Sample


class MixPolicy(str, Enum):
    REAL_ONLY = "real_only"
    SYNTH_ONLY = "synth_only"
    INTERLEAVED = "interleaved"


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    optimizer: str = "adam"
    lr: float = 3e-3
    momentum: float = 0.9  # sgd only
    mix_policy: MixPolicy = MixPolicy.INTERLEAVED
    real_fraction: float | None = None  # None: interleave proportionally to pool sizes
    batch_purity: bool = True  # False: union-shuffled mixed batches (naive baseline)
    double_bn: bool = True  # False: both origins update one shared statistic set
    checkpoint_k: int = 10
    seed: int = 0
    log_bn_stats: bool = False

    def __post_init__(self):
        self.mix_policy = MixPolicy(self.mix_policy)
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.checkpoint_k < 1:
            raise ConfigurationError("checkpoint_k must be >= 1")
        if self.real_fraction is not None and not 0.0 < self.real_fraction <= 1.0:
            raise ConfigurationError("real_fraction must lie in (0, 1]")
        if not self.batch_purity and self.double_bn:
            raise ConfigurationError(
                "mixed-origin batches cannot route per-origin statistics; "
                "set double_bn=False or keep batch_purity=True")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_metric: float
    checkpoint: Network


def _partition(samples: list[Sample], batch_size: int) -> list[list[Sample]]:
    batches = [samples[i:i + batch_size] for i in range(0, len(samples), batch_size)]
    # A trailing singleton cannot be batch-normalized in train mode; fold it
    # into the previous batch when one exists.
    if len(batches) >= 2 and len(batches[-1]) == 1:
        batches[-2].extend(batches.pop())
    return batches


def _shuffled(dataset: Dataset, rng: np.random.Generator) -> list[Sample]:
    order = rng.permutation(len(dataset))
    return [dataset[int(i)] for i in order]


def make_batches(real: Dataset, synth: Dataset, cfg: TrainConfig,
                 epoch_seed: int) -> list[tuple[list[Sample], Origin]]:
    """Origin-pure batches for one epoch; deterministic given the seed.

    Interleaving orders each pool's batches by fractional position, so the
    two origins alternate in proportion to their batch counts (ties go to
    real).  An explicit real_fraction instead fixes the real share of
    batches, cycling the synthetic pool as needed.
    """
    if len(real) == 0 and len(synth) == 0:
        raise ContractError("make_batches needs at least one nonempty pool")
    rng = np.random.default_rng(epoch_seed)

    if cfg.mix_policy == MixPolicy.REAL_ONLY:
        if len(real) == 0:
            raise ContractError("real_only policy with an empty real pool")
        return [(b, Origin.REAL) for b in _partition(_shuffled(real, rng), cfg.batch_size)]
    if cfg.mix_policy == MixPolicy.SYNTH_ONLY:
        if len(synth) == 0:
            raise ContractError("synth_only policy with an empty synthetic pool")
        return [(b, Origin.SYNTHETIC) for b in _partition(_shuffled(synth, rng), cfg.batch_size)]

    real_batches = _partition(_shuffled(real, rng), cfg.batch_size) if len(real) else []
    synth_batches = _partition(_shuffled(synth, rng), cfg.batch_size) if len(synth) else []
    if cfg.real_fraction is not None and real_batches:
        want = int(round(len(real_batches) * (1.0 - cfg.real_fraction) / cfg.real_fraction))
        if want == 0 or not synth_batches:
            synth_batches = []
        else:
            while len(synth_batches) < want:
                synth_batches.extend(_partition(_shuffled(synth, rng), cfg.batch_size))
            synth_batches = synth_batches[:want]

    keyed = []
    if real_batches:
        keyed += [((i + 0.5) / len(real_batches), 0, b) for i, b in enumerate(real_batches)]
    if synth_batches:
        keyed += [((j + 0.5) / len(synth_batches), 1, b) for j, b in enumerate(synth_batches)]
    keyed.sort(key=lambda item: (item[0], item[1]))
    return [(b, Origin.REAL if k == 0 else Origin.SYNTHETIC) for _, k, b in keyed]


def _make_mixed_batches(real: Dataset, synth: Dataset, cfg: TrainConfig,
                        epoch_seed: int) -> list[tuple[list[Sample], Origin]]:
    """Union-shuffled batches for the naive baseline; all share one tag."""
    rng = np.random.default_rng(epoch_seed)
    pool = list(real) + list(synth)
    if not pool:
        raise ContractError("make_batches needs at least one nonempty pool")
    order = rng.permutation(len(pool))
    shuffled = [pool[int(i)] for i in order]
    return [(b, Origin.REAL) for b in _partition(shuffled, cfg.batch_size)]


def train(model, real: Dataset, synth: Dataset, val: Dataset, cfg: TrainConfig,
          run_dir=None) -> tuple[object, list[EpochRecord]]:
    """Epochs of batch -> forward(tag) -> backward -> step, with validation
    after each epoch; the final model averages the checkpoint_k snapshots
    with the best validation metric."""
    if len(val) == 0:
        raise ContractError("training requires a nonempty validation set")
    if cfg.mix_policy == MixPolicy.SYNTH_ONLY and cfg.double_bn:
        warnings.warn(
            "synth_only training never updates the real statistics; eval will "
            "normalize with initialization statistics (consider double_bn=False)")

    if cfg.log_bn_stats:
        for layer in model.net.layers:
            if hasattr(layer, "stats_log"):
                layer.stats_log = []

    opt = make_optimizer(cfg.optimizer, cfg.lr, cfg.momentum)
    records: list[EpochRecord] = []
    run_path = Path(run_dir) if run_dir is not None else None
    if run_path is not None:
        run_path.mkdir(parents=True, exist_ok=True)

    for epoch in range(cfg.epochs):
        epoch_seed = seed_for(cfg.seed, "batching", epoch)
        if cfg.batch_purity:
            batches = make_batches(real, synth, cfg, epoch_seed)
        else:
            batches = _make_mixed_batches(real, synth, cfg, epoch_seed)
        losses = []
        for batch, origin in batches:
            tag = origin if cfg.double_bn else Origin.REAL
            loss = model.train_batch(batch, tag)
            if not math.isfinite(loss):
                raise TrainingDivergenceError(
                    f"nonfinite training loss at epoch {epoch} ({loss!r})")
            opt.step(model.net)
            losses.append(loss)
        val_metric = float(model.validation_metric(val))
        snapshot = model.net.copy()
        records.append(EpochRecord(epoch=epoch, train_loss=float(np.mean(losses)),
                                   val_metric=val_metric, checkpoint=snapshot))
        if run_path is not None:
            save_checkpoint(snapshot, run_path / f"epoch_{epoch:03d}.json")

    chosen = select_checkpoints(records, cfg.checkpoint_k)
    model.net = average_parameters([r.checkpoint for r in chosen])
    if run_path is not None:
        save_checkpoint(model.net, run_path / "final.json")
    return model, records


def select_checkpoints(records: Sequence[EpochRecord], k: int) -> list[EpochRecord]:
    """The k records with the highest validation metric; ties prefer the
    earlier epoch."""
    ranked = sorted(records, key=lambda r: (-r.val_metric, r.epoch))
    return ranked[:min(k, len(ranked))]


def evaluate(model, test: Dataset) -> dict:
    """Eval-mode metrics on a real-only test set; pure and repeatable."""
    if len(test) == 0:
        raise ContractError("test set must be nonempty")
    if any(s.origin != Origin.REAL for s in test):
        raise ContractError("test sets must contain only real samples")
    return model.evaluate(test)
