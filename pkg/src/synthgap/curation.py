"""Real-vs-synthetic discrimination and rejection-based dataset curation.

A frozen reference recognizer turns each (signal, label) pair into five
discrepancy features; a small classifier on those features estimates the
probability the pair is real; and that probability, mapped through
D/(1-D), drives an adaptive accept/reject loop with a growing envelope
bound, so accepted synthetic samples approach the real distribution
wherever the generator has support.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Sequence

import numpy as np

from .common import (
    AcceptanceFloorError,
    ConfigurationError,
    ContractError,
    Origin,
)
from .metrics import wer
from .nn import Adam, DenseLayer, Mode, Network, Tanh
from .recognizers import SequenceRecognizer, ctc_loss, frame_cross_entropy, greedy_decode
from .worlds import Dataset, GapSpec, Sample, WorldSpec, log_density

# Infeasible or extreme alignment losses are clamped here so every feature
# stays finite while still flagging artifact-like samples.
CTC_MAX = 50.0

FEATURE_NAMES = ("ce_loss", "ctc_loss", "wer", "len_y", "len_yhat")

DEFAULT_PILOT_SIZE = 200


@dataclass
class FeatureVector:
    ce_loss: float
    ctc_loss: float
    wer: float
    len_y: int
    len_yhat: int

    def as_array(self) -> np.ndarray:
        return np.array([self.ce_loss, self.ctc_loss, self.wer,
                         float(self.len_y), float(self.len_yhat)])


def compute_features(reference: SequenceRecognizer, sample: Sample) -> FeatureVector:
    """Discrepancy between the reference recognizer's output and the label."""
    return _features_from_posteriors(
        reference.frame_log_posteriors([sample])[0], sample, reference)


def _features_from_posteriors(post: np.ndarray, sample: Sample,
                              reference: SequenceRecognizer) -> FeatureVector:
    blank = reference.blank
    hyp = greedy_decode(post, blank)
    # Recover logits-compatible inputs: log-softmax rows are logits up to a
    # constant, which both losses are invariant to.
    ce, _ = frame_cross_entropy(post, sample.tokens, reference.frames_per_token)
    ctc = ctc_loss(post, sample.tokens, blank)
    ctc_value = min(ctc.loss, CTC_MAX)
    return FeatureVector(
        ce_loss=float(ce),
        ctc_loss=float(ctc_value),
        wer=wer(sample.tokens, hyp).wer,
        len_y=len(sample.tokens),
        len_yhat=len(hyp),
    )


def compute_feature_matrix(reference: SequenceRecognizer, samples: Sequence[Sample]) -> np.ndarray:
    """Feature rows for many samples, sharing one batched network pass."""
    if len(samples) == 0:
        return np.zeros((0, len(FEATURE_NAMES)))
    posts = reference.frame_log_posteriors(list(samples))
    rows = [_features_from_posteriors(p, s, reference).as_array()
            for p, s in zip(posts, samples)]
    return np.stack(rows)


@dataclass
class DiscriminatorConfig:
    hidden: int = 32
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    clamp_eps: float = 1e-6
    holdout_fraction: float = 0.2  # held out to pick the best epoch snapshot
    feature_mode: str = "full5"  # or "ce_only"
    seed: int = 0

    def __post_init__(self):
        if self.feature_mode not in ("full5", "ce_only"):
            raise ConfigurationError(f"unknown feature_mode {self.feature_mode!r}")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigurationError("holdout_fraction must be in [0, 1)")


def _apply_feature_mode(features: np.ndarray, mode: str) -> np.ndarray:
    if mode == "ce_only":
        masked = np.zeros_like(features)
        masked[:, 0] = features[:, 0]
        return masked
    return features


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "Normalizer":
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        std = np.where(std < 1e-12, 1.0, std)  # constant columns carry no signal
        return cls(mean=mean, std=std)

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std


class Discriminator:
    """Probability-of-real scorer over discrepancy features."""

    def __init__(self, net: Network | None, normalizer: Normalizer,
                 feature_mode: str = "full5", clamp_eps: float = 1e-6,
                 reference: SequenceRecognizer | None = None, constant: bool = False):
        self.net = net
        self.normalizer = normalizer
        self.feature_mode = feature_mode
        self.clamp_eps = float(clamp_eps)
        self.reference = reference
        self.constant = constant

    def predict(self, features: np.ndarray) -> np.ndarray:
        """D values in (0, 1), clamped away from both ends."""
        features = np.atleast_2d(np.asarray(features, dtype=float))
        if self.constant:
            return np.full(features.shape[0], 0.5)
        z = self.net.forward(self.normalizer.apply(features), mode=Mode.EVAL)[:, 0]
        d = 1.0 / (1.0 + np.exp(-z))
        return np.clip(d, self.clamp_eps, 1.0 - self.clamp_eps)

    def features_of(self, samples: Sequence[Sample]) -> np.ndarray:
        if self.reference is None:
            raise ContractError("this discriminator has no attached reference recognizer")
        raw = compute_feature_matrix(self.reference, samples)
        return _apply_feature_mode(raw, self.feature_mode)

    def score_batch(self, samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
        """(D, ratio) per sample, via the attached reference recognizer."""
        d = self.predict(self.features_of(samples))
        return d, density_ratio(d, self.clamp_eps)

    def to_dict(self) -> dict:
        from .nn import network_to_dict

        return {
            "schema": "discriminator/1",
            "feature_mode": self.feature_mode,
            "clamp_eps": self.clamp_eps,
            "constant": self.constant,
            "normalizer": {"mean": self.normalizer.mean.tolist(),
                           "std": self.normalizer.std.tolist()},
            "net": network_to_dict(self.net) if self.net is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict, reference: SequenceRecognizer | None = None) -> "Discriminator":
        from .nn import network_from_dict

        if d.get("schema") != "discriminator/1":
            raise ConfigurationError(f"expected schema 'discriminator/1', got {d.get('schema')!r}")
        net = network_from_dict(d["net"])[0] if d.get("net") else None
        return cls(
            net=net,
            normalizer=Normalizer(np.asarray(d["normalizer"]["mean"], dtype=float),
                                  np.asarray(d["normalizer"]["std"], dtype=float)),
            feature_mode=d["feature_mode"],
            clamp_eps=float(d["clamp_eps"]),
            reference=reference,
            constant=bool(d.get("constant", False)),
        )


def _bce_loss(d_values: np.ndarray, labels: np.ndarray) -> float:
    eps = 1e-12
    d = np.clip(d_values, eps, 1.0 - eps)
    return float(-(labels * np.log(d) + (1.0 - labels) * np.log(1.0 - d)).mean())


def fit_discriminator(real_features: np.ndarray, synth_features: np.ndarray,
                      cfg: DiscriminatorConfig) -> tuple[Discriminator, dict]:
    """Binary cross-entropy fit of real (label 1) vs synthetic (label 0).

    The final model is the epoch snapshot with the best holdout loss; the
    returned history carries the full-training-set loss per epoch.
    """
    x = np.concatenate([real_features, synth_features], axis=0)
    labels = np.concatenate([np.ones(len(real_features)), np.zeros(len(synth_features))])
    if len(real_features) == 0 or len(synth_features) == 0:
        raise ContractError("both feature sets must be nonempty")

    if float(np.ptp(x, axis=0).max(initial=0.0)) < 1e-12:
        warnings.warn("all discriminator features are identical; returning a constant 0.5 scorer")
        disc = Discriminator(net=None, normalizer=Normalizer.fit(x), feature_mode=cfg.feature_mode,
                             clamp_eps=cfg.clamp_eps, constant=True)
        return disc, {"train_loss": [math.log(2.0)]}

    normalizer = Normalizer.fit(x)
    xn = normalizer.apply(x)
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(xn))
    xn, labels = xn[perm], labels[perm]
    n_hold = int(round(cfg.holdout_fraction * len(xn)))
    x_hold, y_hold = xn[:n_hold], labels[:n_hold]
    x_train, y_train = xn[n_hold:], labels[n_hold:]

    net = Network([
        DenseLayer(xn.shape[1], cfg.hidden, rng),
        Tanh(),
        DenseLayer(cfg.hidden, cfg.hidden, rng),
        Tanh(),
        DenseLayer(cfg.hidden, 1, rng),
    ])
    opt = Adam(lr=cfg.lr)

    def predict(inputs: np.ndarray) -> np.ndarray:
        z = net.forward(inputs, mode=Mode.EVAL)[:, 0]
        return 1.0 / (1.0 + np.exp(-z))

    history = {"train_loss": [], "holdout_loss": []}
    best_loss, best_net = math.inf, net.copy()
    n = len(x_train)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            z = net.forward(x_train[idx], mode=Mode.EVAL)
            d = 1.0 / (1.0 + np.exp(-z[:, 0]))
            grad = ((d - y_train[idx]) / len(idx))[:, None]
            net.backward(grad)
            opt.step(net)
        history["train_loss"].append(_bce_loss(predict(x_train), y_train))
        hold = _bce_loss(predict(x_hold), y_hold) if n_hold else history["train_loss"][-1]
        history["holdout_loss"].append(hold)
        if hold < best_loss:
            best_loss, best_net = hold, net.copy()

    disc = Discriminator(net=best_net, normalizer=normalizer, feature_mode=cfg.feature_mode,
                         clamp_eps=cfg.clamp_eps)
    return disc, history


def train_discriminator(reference: SequenceRecognizer, real: Dataset, synth: Dataset,
                        cfg: DiscriminatorConfig) -> Discriminator:
    """Featurize both datasets with the frozen reference recognizer and fit."""
    if len(real) == 0 or len(synth) == 0:
        raise ContractError("both datasets must be nonempty")
    real_feats = _apply_feature_mode(compute_feature_matrix(reference, list(real)), cfg.feature_mode)
    synth_feats = _apply_feature_mode(compute_feature_matrix(reference, list(synth)), cfg.feature_mode)
    disc, _ = fit_discriminator(real_feats, synth_feats, cfg)
    disc.reference = reference
    return disc


def density_ratio(d_value, clamp_eps: float = 1e-6):
    """D/(1-D) after clamping D into [clamp_eps, 1-clamp_eps]; always finite."""
    d = np.clip(np.asarray(d_value, dtype=float), clamp_eps, 1.0 - clamp_eps)
    out = d / (1.0 - d)
    return float(out) if out.ndim == 0 else out


def estimate_initial_M(disc, pilot: Dataset) -> float:
    """Max density ratio over a pilot batch of generated samples."""
    if len(pilot) == 0:
        raise ContractError("pilot dataset must be nonempty")
    _, ratios = disc.score_batch(list(pilot))
    return float(np.max(ratios))


class OracleRatioScorer:
    """Exact-density stand-in for a discriminator, used to isolate the
    acceptance mechanics from estimation error."""

    def __init__(self, base: WorldSpec, gap: GapSpec):
        self.base = base
        self.gap = gap

    def score_batch(self, samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
        ratios = np.array([
            math.exp(log_density(self.base, s.features, s.tokens)
                     - log_density(self.gap, s.features, s.tokens))
            for s in samples
        ])
        return ratios / (1.0 + ratios), ratios


@dataclass
class AcceptDecision:
    accepted: bool
    d_value: float
    ratio: float
    m_at_decision: float


@dataclass
class RejectionSampler:
    """Serial accept/reject state: envelope bound M, counters, own RNG stream.

    M only grows; each incoming ratio first raises M if needed and is then
    accepted with probability ratio/M, which therefore never exceeds 1.
    """

    m: float
    target_n: int
    seed: int = 0
    clamp_eps: float = 1e-6
    rate_floor: float = 1e-4
    floor_window: int = 10_000
    n_seen: int = 0
    n_accepted: int = 0
    m_trace: list = field(default_factory=list)
    _rng: np.random.Generator = field(default=None, repr=False)
    _window_seen: int = 0
    _window_accepted: int = 0

    def __post_init__(self):
        if not self.m > 0.0:
            raise ConfigurationError("initial M must be positive")
        if self.target_n < 0:
            raise ConfigurationError("target_n must be non-negative")
        self._rng = np.random.default_rng(self.seed)

    @property
    def active(self) -> bool:
        return self.n_accepted < self.target_n

    def decide(self, d_value: float, ratio: float) -> AcceptDecision:
        if not self.active:
            raise ContractError("sampler already collected its target count")
        self.m = max(self.m, ratio)
        self.m_trace.append(self.m)
        accepted = bool(self._rng.uniform() < ratio / self.m)
        self.n_seen += 1
        self._window_seen += 1
        if accepted:
            self.n_accepted += 1
            self._window_accepted += 1
        decision = AcceptDecision(accepted=accepted, d_value=float(d_value),
                                  ratio=float(ratio), m_at_decision=self.m)
        if self._window_seen >= self.floor_window:
            rate = self._window_accepted / self._window_seen
            if rate < self.rate_floor:
                raise AcceptanceFloorError(
                    f"acceptance rate {rate:.2e} fell below {self.rate_floor:.0e} over the last "
                    f"{self._window_seen} proposals (M={self.m:.4g}, accepted "
                    f"{self.n_accepted}/{self.target_n}); the generator cannot reach the "
                    "requested count at a useful rate")
            self._window_seen = 0
            self._window_accepted = 0
        return decision

    @property
    def acceptance_rate(self) -> float | None:
        if self.n_seen == 0:
            return None
        return self.n_accepted / self.n_seen


def accept(sampler: RejectionSampler, disc, sample: Sample) -> AcceptDecision:
    """Score one sample and run it through the sampler's accept rule."""
    d, r = disc.score_batch([sample])
    return sampler.decide(float(d[0]), float(r[0]))


@dataclass
class RunReport:
    n_seen: int
    n_accepted: int
    final_m: float
    acceptance_rate: float | None

    def to_dict(self) -> dict:
        return {
            "n_seen": self.n_seen,
            "n_accepted": self.n_accepted,
            "final_M": self.final_m,
            "acceptance_rate": self.acceptance_rate,
        }


def sample_until(sampler: RejectionSampler, disc, source: Iterable[Sample],
                 n: int | None = None, chunk_size: int = 256) -> tuple[Dataset, RunReport]:
    """Accept exactly n synthetic samples from an unbounded source.

    Candidates are scored in chunks (scoring is pure), but decisions stay
    strictly serial so the envelope dynamics are reproducible.  Accepted
    samples carry their score and the envelope at decision time.
    """
    if n is None:
        n = sampler.target_n
    if n > sampler.target_n - sampler.n_accepted:
        raise ContractError("requested more samples than the sampler's remaining target")
    out = Dataset()
    stream: Iterator[Sample] = iter(source)
    while len(out) < n:
        chunk = list(itertools.islice(stream, chunk_size))
        if not chunk:
            raise ContractError("synthetic source exhausted before reaching the target count")
        d_vals, ratios = disc.score_batch(chunk)
        for sample, d, r in zip(chunk, d_vals, ratios):
            decision = sampler.decide(float(d), float(r))
            if decision.accepted:
                extras = dict(sample.extras or {})
                extras.update({"D": decision.d_value, "r": decision.ratio,
                               "M_at_decision": decision.m_at_decision})
                out.append(replace(sample, extras=extras))
                if len(out) >= n:
                    break
    report = RunReport(n_seen=sampler.n_seen, n_accepted=sampler.n_accepted,
                       final_m=sampler.m, acceptance_rate=sampler.acceptance_rate)
    return out, report
