"""Desk-scale recognition models: a framewise sequence recognizer trained
with an alignment-free sequence loss, and a 2-class keyword detector on
mean-pooled frames."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .common import ContractError, Origin, logsumexp
from .metrics import corpus_wer
from .nn import DenseLayer, DualBatchNorm, Mode, Network, Tanh
from .worlds import Dataset, Sample, TokenAlphabet


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    hi = z.max(axis=-1, keepdims=True)
    shifted = z - hi
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy of a single logit vector; gradient w.r.t. logits."""
    logits = np.asarray(logits, dtype=float)
    if not 0 <= label < logits.shape[-1]:
        raise ContractError(f"label {label} out of range for {logits.shape[-1]} classes")
    logp = log_softmax(logits)
    grad = np.exp(logp)
    grad[label] -= 1.0
    return float(-logp[label]), grad


def frame_cross_entropy(frame_logits: np.ndarray, tokens: Sequence[int],
                        frames_per_token: int) -> tuple[float, np.ndarray]:
    """Mean per-frame cross-entropy against the frame-aligned label expansion.

    Each token is repeated frames_per_token times, matching how frames were
    emitted, so no alignment search is needed.
    """
    logits = np.asarray(frame_logits, dtype=float)
    labels = np.repeat(np.asarray(tokens, dtype=int), frames_per_token)
    if logits.shape[0] != labels.shape[0]:
        raise ContractError("frame count does not match frames_per_token * len(tokens)")
    logp = log_softmax(logits)
    t = logits.shape[0]
    rows = np.arange(t)
    loss = float(-logp[rows, labels].mean())
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return loss, grad / t


@dataclass
class CtcResult:
    loss: float
    grad: np.ndarray  # d(loss)/d(logits), shape (T, C)
    feasible: bool  # False when no alignment exists (loss is +inf, grad zero)


def _min_frames(tokens: Sequence[int]) -> int:
    repeats = sum(1 for i in range(1, len(tokens)) if tokens[i] == tokens[i - 1])
    return len(tokens) + repeats


def ctc_loss(log_probs: np.ndarray, tokens: Sequence[int], blank: int) -> CtcResult:
    """Alignment-marginalized negative log-likelihood and its logit gradient.

    log_probs are per-frame log-softmax values, (T, C) with the blank as one
    of the C classes.  The forward/backward recursions run over the
    blank-interleaved label entirely in log space; the returned gradient is
    taken with respect to the logits that produced log_probs.
    """
    lp = np.asarray(log_probs, dtype=float)
    t_len, n_classes = lp.shape
    y = [int(t) for t in tokens]
    if any(not 0 <= t < n_classes for t in y) or blank in y:
        raise ContractError("tokens must be valid non-blank class indices")
    if not y:
        raise ContractError("ctc_loss requires a nonempty token sequence")

    if t_len < _min_frames(y):
        return CtcResult(loss=math.inf, grad=np.zeros_like(lp), feasible=False)

    ext = [blank]
    for tok in y:
        ext.extend([tok, blank])
    s_len = len(ext)
    ext_arr = np.asarray(ext)
    emit = lp[:, ext_arr]  # (T, S)

    # State s may be entered from s-2 when it is a token differing from the
    # token two slots back (the blank between distinct tokens is skippable).
    skip_ok = np.zeros(s_len, dtype=bool)
    for s in range(2, s_len):
        skip_ok[s] = ext[s] != blank and ext[s] != ext[s - 2]

    neg = -math.inf
    alpha = np.full((t_len, s_len), neg)
    alpha[0, 0] = emit[0, 0]
    if s_len > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        acc = np.logaddexp(prev, np.concatenate(([neg], prev[:-1])))
        skip = np.concatenate(([neg, neg], prev[:-2]))
        acc = np.where(skip_ok, np.logaddexp(acc, skip), acc)
        alpha[t] = acc + emit[t]

    log_z = np.logaddexp(alpha[-1, -1], alpha[-1, -2]) if s_len > 1 else alpha[-1, -1]
    if not np.isfinite(log_z):
        return CtcResult(loss=math.inf, grad=np.zeros_like(lp), feasible=False)

    beta = np.full((t_len, s_len), neg)
    beta[-1, -1] = 0.0
    if s_len > 1:
        beta[-1, -2] = 0.0
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        acc = np.logaddexp(nxt, np.concatenate((nxt[1:], [neg])))
        skip = np.concatenate((nxt[2:], [neg, neg]))
        allowed = np.concatenate((skip_ok[2:], [False, False]))
        beta[t] = np.where(allowed, np.logaddexp(acc, skip), acc)

    occupancy = np.exp(alpha + beta - log_z)  # (T, S); rows sum to 1
    gamma = np.zeros_like(lp)
    for s in range(s_len):
        gamma[:, ext[s]] += occupancy[:, s]
    grad = np.exp(lp) - gamma
    return CtcResult(loss=float(-log_z), grad=grad, feasible=True)


def greedy_decode(log_probs: np.ndarray, blank: int) -> tuple[int, ...]:
    """Per-frame argmax, collapse adjacent repeats, delete blanks.

    np.argmax breaks ties toward the lowest class index.
    """
    ids = np.argmax(np.asarray(log_probs, dtype=float), axis=1)
    out = []
    prev = None
    for i in ids:
        if i != prev and i != blank:
            out.append(int(i))
        prev = i
    return tuple(out)


def _concat_frames(samples: Sequence[Sample]) -> tuple[np.ndarray, list[int]]:
    lengths = [s.features.shape[0] for s in samples]
    return np.concatenate([s.features for s in samples], axis=0), lengths


def _split_rows(matrix: np.ndarray, lengths: list[int]) -> list[np.ndarray]:
    out = []
    start = 0
    for n in lengths:
        out.append(matrix[start:start + n])
        start += n
    return out


@dataclass
class SequenceRecognizer:
    """Framewise token recognizer; frames of a batch share one network pass."""

    net: Network
    alphabet: TokenAlphabet
    frames_per_token: int

    @property
    def blank(self) -> int:
        return self.alphabet.blank_index

    def frame_log_posteriors(self, samples: Sequence[Sample], tag: Origin = Origin.REAL,
                             mode: Mode = Mode.EVAL) -> list[np.ndarray]:
        frames, lengths = _concat_frames(samples)
        logits = self.net.forward(frames, tag=tag, mode=mode)
        return [log_softmax(seg) for seg in _split_rows(logits, lengths)]

    def train_batch(self, samples: Sequence[Sample], tag: Origin) -> float:
        frames, lengths = _concat_frames(samples)
        logits = self.net.forward(frames, tag=tag, mode=Mode.TRAIN)
        grad = np.zeros_like(logits)
        losses = []
        start = 0
        for sample, n in zip(samples, lengths):
            seg = logits[start:start + n]
            res = ctc_loss(log_softmax(seg), sample.tokens, self.blank)
            if res.feasible:
                grad[start:start + n] = res.grad
                losses.append(res.loss)
            start += n
        self.net.backward(grad / len(samples))
        return float(np.mean(losses)) if losses else math.inf

    def decode(self, samples: Sequence[Sample]) -> list[tuple[int, ...]]:
        posts = self.frame_log_posteriors(samples)
        return [greedy_decode(p, self.blank) for p in posts]

    def validation_metric(self, dataset: Dataset) -> float:
        return -self.evaluate(dataset)["wer"]

    def evaluate(self, dataset: Dataset) -> dict:
        hyps = self.decode(list(dataset))
        breakdown = corpus_wer((s.tokens, h) for s, h in zip(dataset, hyps))
        return {
            "task": "sequence",
            "wer": breakdown.wer,
            "substitutions": breakdown.substitutions,
            "deletions": breakdown.deletions,
            "insertions": breakdown.insertions,
            "ref_len": breakdown.ref_len,
            "n": len(dataset),
        }


@dataclass
class KeywordDetector:
    """2-class detector: positive when the sample utters exactly the keyword."""

    net: Network
    keyword: tuple[int, ...]

    def label(self, sample: Sample) -> int:
        return int(tuple(sample.tokens) == tuple(self.keyword))

    def labels(self, dataset: Dataset) -> np.ndarray:
        return np.array([self.label(s) for s in dataset], dtype=int)

    def _pooled(self, samples: Sequence[Sample]) -> np.ndarray:
        return np.stack([s.features.mean(axis=0) for s in samples])

    def train_batch(self, samples: Sequence[Sample], tag: Origin) -> float:
        x = self._pooled(samples)
        logits = self.net.forward(x, tag=tag, mode=Mode.TRAIN)
        labels = np.array([self.label(s) for s in samples], dtype=int)
        logp = log_softmax(logits)
        n = len(samples)
        rows = np.arange(n)
        loss = float(-logp[rows, labels].mean())
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        self.net.backward(grad / n)
        return loss

    def scores(self, dataset: Dataset) -> np.ndarray:
        logits = self.net.forward(self._pooled(list(dataset)), mode=Mode.EVAL)
        return np.exp(log_softmax(logits))[:, 1]

    def validation_metric(self, dataset: Dataset) -> float:
        scores = self.scores(dataset)
        labels = self.labels(dataset)
        return float(((scores >= 0.5).astype(int) == labels).mean())

    def evaluate(self, dataset: Dataset) -> dict:
        from .metrics import avg_far, det_curve  # local import keeps module load light

        scores = self.scores(dataset)
        labels = self.labels(dataset)
        report = {
            "task": "keyword",
            "accuracy": float(((scores >= 0.5).astype(int) == labels).mean()),
            "n": len(dataset),
        }
        if 0 < labels.sum() < len(labels):
            curve = det_curve(zip(scores.tolist(), labels.tolist()))
            report["avg_far"] = avg_far(curve)
        return report


def build_sequence_model(alphabet: TokenAlphabet, dim: int, frames_per_token: int,
                         hidden: int = 24, seed: int = 0) -> SequenceRecognizer:
    rng = np.random.default_rng(seed)
    net = Network([
        DenseLayer(dim, hidden, rng),
        DualBatchNorm(hidden),
        Tanh(),
        DenseLayer(hidden, alphabet.size + 1, rng),
    ])
    return SequenceRecognizer(net=net, alphabet=alphabet, frames_per_token=frames_per_token)


def build_keyword_model(dim: int, keyword: Sequence[int], hidden: int = 16,
                        seed: int = 0) -> KeywordDetector:
    rng = np.random.default_rng(seed)
    net = Network([
        DenseLayer(dim, hidden, rng),
        DualBatchNorm(hidden),
        Tanh(),
        DenseLayer(hidden, 2, rng),
    ])
    return KeywordDetector(net=net, keyword=tuple(int(t) for t in keyword))
