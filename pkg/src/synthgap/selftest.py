"""Self-contained sanity suite behind the `selftest` subcommand.

Each check validates a core numerical path against an independent method
(path enumeration, central finite differences, closed forms) and reports
one pass/fail line.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from .common import Origin
from .metrics import avg_far, det_curve, wer
from .nn import DenseLayer, DualBatchNorm, Mode, Network, Tanh
from .recognizers import cross_entropy, ctc_loss, greedy_decode, log_softmax
from .worlds import identity_gap, log_density, oracle_ratio, sample_real
from .experiment import default_world


def ctc_brute_force(log_probs: np.ndarray, tokens: tuple[int, ...], blank: int) -> float:
    """Sum path probabilities over every frame labeling that collapses to
    the target; tractable only for tiny shapes."""
    t_len, n_classes = log_probs.shape
    probs = np.exp(log_probs)
    total = 0.0
    for path in itertools.product(range(n_classes), repeat=t_len):
        collapsed = []
        prev = None
        for c in path:
            if c != prev and c != blank:
                collapsed.append(c)
            prev = c
        if tuple(collapsed) == tuple(tokens):
            p = 1.0
            for t, c in enumerate(path):
                p *= probs[t, c]
            total += p
    return -math.log(total) if total > 0 else math.inf


def _check_ctc(rng: np.random.Generator, n_cases: int = 40) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(n_cases):
        v = int(rng.integers(2, 4))
        t_len = int(rng.integers(1, 6))
        blank = v
        logits = rng.normal(size=(t_len, v + 1))
        lp = log_softmax(logits)
        length = int(rng.integers(1, min(3, t_len) + 1))
        tokens = tuple(int(x) for x in rng.integers(0, v, size=length))
        res = ctc_loss(lp, tokens, blank)
        ref = ctc_brute_force(lp, tokens, blank)
        if math.isinf(ref) or math.isinf(res.loss):
            ok = math.isinf(ref) == math.isinf(res.loss)
            if not ok:
                return False, "feasibility disagreement with enumeration"
            continue
        worst = max(worst, abs(res.loss - ref))
    return worst < 1e-9, f"max |dp - enumeration| = {worst:.2e}"


def _check_gradients(rng: np.random.Generator) -> tuple[bool, str]:
    net = Network([DenseLayer(3, 5, rng), DualBatchNorm(5), Tanh(), DenseLayer(5, 2, rng)])
    x = rng.normal(size=(8, 3))
    target = rng.normal(size=(8, 2))

    def loss_of() -> float:
        out = net.forward(x, tag=Origin.REAL, mode=Mode.TRAIN)
        return float(((out - target) ** 2).mean())

    out = net.forward(x, tag=Origin.REAL, mode=Mode.TRAIN)
    grads = net.backward(2.0 * (out - target) / out.size)
    params = net.named_parameters()
    h = 1e-5
    worst = 0.0
    for name, p in params.items():
        flat = p.ravel()
        for idx in range(flat.size):
            keep = flat[idx]
            flat[idx] = keep + h
            up = loss_of()
            flat[idx] = keep - h
            down = loss_of()
            flat[idx] = keep
            fd = (up - down) / (2 * h)
            an = grads[name].ravel()[idx]
            worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-2))
    return worst < 1e-4, f"max relative gradient error = {worst:.2e}"


def _check_losses(rng: np.random.Generator) -> tuple[bool, str]:
    loss, _ = cross_entropy(np.zeros(2), 0)
    if abs(loss - math.log(2.0)) > 1e-12:
        return False, "uniform two-class cross entropy is not ln 2"
    logits = rng.normal(size=4)
    _, grad = cross_entropy(logits, 2)
    h = 1e-6
    for i in range(4):
        bumped = logits.copy()
        bumped[i] += h
        fd = (cross_entropy(bumped, 2)[0] - cross_entropy(logits, 2)[0]) / h
        if abs(fd - grad[i]) > 1e-4:
            return False, "cross-entropy gradient mismatch"
    return True, "cross entropy and gradient agree with finite differences"


def _check_metrics() -> tuple[bool, str]:
    b = wer("abc", "axc")
    if not (b.substitutions == 1 and abs(b.wer - 1 / 3) < 1e-12):
        return False, "substitution breakdown wrong"
    if greedy_decode(np.log(np.array([[0.9, 0.05, 0.05], [0.9, 0.05, 0.05],
                                      [0.05, 0.05, 0.9], [0.05, 0.9, 0.05]])), 2) != (0, 1):
        return False, "greedy collapse wrong"
    curve = det_curve([(0.9, 1), (0.8, 1), (0.2, 0), (0.1, 0)])
    if avg_far(curve) != 0.0:
        return False, "perfect detector should have zero averaged FAR"
    return True, "wer, decode, and DET behave on known cases"


def _check_bn_routing(rng: np.random.Generator) -> tuple[bool, str]:
    bn = DualBatchNorm(3)
    before = bn.running_real.mean.copy(), bn.running_real.var.copy()
    for _ in range(4):
        bn.forward(rng.normal(size=(6, 3)), mode=Mode.TRAIN, tag=Origin.SYNTHETIC)
    same = (np.array_equal(before[0], bn.running_real.mean)
            and np.array_equal(before[1], bn.running_real.var))
    return same, "synthetic batches leave real statistics untouched"


def _check_identity_ratio() -> tuple[bool, str]:
    world = default_world()
    gap = identity_gap(world)
    data = sample_real(world, 20, seed=3)
    worst = 0.0
    for s in data:
        ld = log_density(world, s.features, s.tokens)
        lg = log_density(gap, s.features, s.tokens)
        worst = max(worst, abs(ld - lg))
        if abs(oracle_ratio(world, gap, s.features, s.tokens) - 1.0) > 1e-9:
            return False, "identity-gap ratio differs from 1"
    return worst < 1e-12, f"identity gap log densities agree to {worst:.2e}"


def run_selftest() -> bool:
    rng = np.random.default_rng(7)
    checks = [
        ("ctc vs path enumeration", lambda: _check_ctc(rng)),
        ("network gradients vs finite differences", lambda: _check_gradients(rng)),
        ("loss gradients", lambda: _check_losses(rng)),
        ("metrics on known cases", _check_metrics),
        ("batch-norm statistic routing", lambda: _check_bn_routing(rng)),
        ("identity-gap density agreement", _check_identity_ratio),
    ]
    all_ok = True
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failure, not an abort
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= ok
        print(f"selftest: {name}: {'ok' if ok else 'FAIL'} ({detail})")
    return all_ok
