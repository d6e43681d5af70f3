"""Task metrics: token error rate with edit breakdown, DET curve, averaged FAR."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .common import ContractError


@dataclass
class WerBreakdown:
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int
    wer: float

    @property
    def edits(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def wer(ref: Sequence, hyp: Sequence) -> WerBreakdown:
    """Minimal-edit alignment at unit costs.

    Ties in the backtrace prefer substitution, then deletion, then insertion,
    so the breakdown is deterministic.
    """
    if len(ref) == 0:
        raise ContractError("wer requires a nonempty reference")
    nr, nh = len(ref), len(hyp)
    dist = np.zeros((nr + 1, nh + 1), dtype=int)
    dist[:, 0] = np.arange(nr + 1)
    dist[0, :] = np.arange(nh + 1)
    for i in range(1, nr + 1):
        for j in range(1, nh + 1):
            sub = dist[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1)
            dele = dist[i - 1, j] + 1
            ins = dist[i, j - 1] + 1
            dist[i, j] = min(sub, dele, ins)

    s = d = ins_n = 0
    i, j = nr, nh
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1):
            if ref[i - 1] != hyp[j - 1]:
                s += 1
            i, j = i - 1, j - 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            d += 1
            i -= 1
        else:
            ins_n += 1
            j -= 1
    return WerBreakdown(substitutions=s, deletions=d, insertions=ins_n,
                        ref_len=nr, wer=(s + d + ins_n) / nr)


def corpus_wer(pairs: Iterable[tuple[Sequence, Sequence]]) -> WerBreakdown:
    """Aggregate error rate: total edits over total reference length."""
    s = d = i = total = 0
    for ref, hyp in pairs:
        b = wer(ref, hyp)
        s += b.substitutions
        d += b.deletions
        i += b.insertions
        total += b.ref_len
    if total == 0:
        raise ContractError("corpus_wer requires at least one nonempty reference")
    return WerBreakdown(substitutions=s, deletions=d, insertions=i,
                        ref_len=total, wer=(s + d + i) / total)


@dataclass
class DetCurve:
    """(threshold, FAR, FRR) triples, thresholds ascending.

    A sample is accepted when its score >= threshold, so FAR is
    non-increasing and FRR non-decreasing along the curve; the sweep always
    includes the accept-everything (FRR 0) and reject-everything (FRR 1)
    endpoints.
    """

    points: list[tuple[float, float, float]]

    @property
    def far(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    @property
    def frr(self) -> np.ndarray:
        return np.array([p[2] for p in self.points])

    def write_csv(self, path) -> None:
        lines = ["threshold,far,frr"]
        for t, far, frr in self.points:
            lines.append(f"{t:.6g},{far:.6g},{frr:.6g}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def det_curve(scores: Iterable[tuple[float, int]]) -> DetCurve:
    """Sweep every distinct score as an acceptance threshold."""
    pairs = list(scores)
    pos = np.sort(np.array([s for s, lab in pairs if lab == 1], dtype=float))
    neg = np.sort(np.array([s for s, lab in pairs if lab != 1], dtype=float))
    if len(pos) == 0 or len(neg) == 0:
        raise ContractError("det_curve needs at least one positive and one negative")
    thresholds = np.unique(np.concatenate([pos, neg]))
    points = []
    for t in thresholds:
        far = float((neg >= t).sum() / len(neg))
        frr = float((pos < t).sum() / len(pos))
        points.append((float(t), far, frr))
    points.append((math.inf, 0.0, 1.0))
    return DetCurve(points)


def avg_far(curve: DetCurve, frr_max: float = 0.05) -> float:
    """Mean of the best achievable FAR over the FRR budget [0, frr_max].

    FAR(f) is the step function min{FAR at any threshold with FRR <= f};
    the integral uses that lower step envelope exactly.
    """
    # Best FAR at each distinct FRR level, FRR ascending.
    best: dict[float, float] = {}
    for _, far, frr in curve.points:
        if frr not in best or far < best[frr]:
            best[frr] = far
    levels = sorted(best)
    # Running minimum: at budget f, every level <= f is available.
    env_frr, env_far = [], []
    running = math.inf
    for f in levels:
        running = min(running, best[f])
        env_frr.append(f)
        env_far.append(running)

    total = 0.0
    for k, f in enumerate(env_frr):
        if f >= frr_max:
            break
        nxt = env_frr[k + 1] if k + 1 < len(env_frr) else math.inf
        total += env_far[k] * (min(nxt, frr_max) - f)
    return total / frr_max
