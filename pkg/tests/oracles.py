"""Independent oracles used by the tests.

Everything here recomputes quantities by a different method than the
library: exhaustive path enumeration, direct probability-space mixture
sums, central finite differences, and closed-form Gaussian bin masses.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from synthgap.worlds import GapSpec, WorldSpec


def collapse(path, blank):
    out = []
    prev = None
    for c in path:
        if c != prev and c != blank:
            out.append(c)
        prev = c
    return tuple(out)


_PATH_TABLES: dict = {}


def ctc_paths_by_label(t_len: int, n_classes: int, blank: int):
    """All frame labelings grouped by their collapsed label; cached."""
    key = (t_len, n_classes, blank)
    if key not in _PATH_TABLES:
        groups: dict[tuple, list] = {}
        for path in itertools.product(range(n_classes), repeat=t_len):
            groups.setdefault(collapse(path, blank), []).append(path)
        _PATH_TABLES[key] = {lab: np.array(paths) for lab, paths in groups.items()}
    return _PATH_TABLES[key]


def ctc_loss_brute_force(log_probs: np.ndarray, tokens, blank: int) -> float:
    """-log of the summed probability of every path collapsing to tokens."""
    t_len, n_classes = log_probs.shape
    groups = ctc_paths_by_label(t_len, n_classes, blank)
    paths = groups.get(tuple(tokens))
    if paths is None:
        return math.inf
    frame_idx = np.arange(t_len)
    logps = log_probs[frame_idx[None, :], paths].sum(axis=1)
    total = np.exp(logps).sum()
    return -math.log(total) if total > 0.0 else math.inf


def finite_difference_gradient(fn, arrays: dict[str, np.ndarray], h: float = 1e-5):
    """Central finite differences of a scalar function over named arrays."""
    grads = {}
    for name, arr in arrays.items():
        grad = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = grad.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = fn()
            flat[i] = keep - h
            down = fn()
            flat[i] = keep
            gflat[i] = (up - down) / (2.0 * h)
        grads[name] = grad
    return grads


def max_relative_error(analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray],
                       floor: float = 1e-2) -> float:
    worst = 0.0
    for name in analytic:
        a = analytic[name].ravel()
        b = numeric[name].ravel()
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
        worst = max(worst, float((np.abs(a - b) / denom).max()))
    return worst


def gaussian_logpdf(x: np.ndarray, mean: np.ndarray, sigma: float) -> float:
    x = np.asarray(x, dtype=float)
    d = x.size
    return float(-0.5 * ((x - mean) ** 2).sum() / sigma**2
                 - d * (0.5 * math.log(2 * math.pi) + math.log(sigma)))


def all_token_sequences(prior) -> list[tuple[int, ...]]:
    v = len(prior.token_probs)
    out = []
    for n in range(prior.min_len, prior.max_len + 1):
        for seq in itertools.product(range(v), repeat=n):
            out.append(seq)
    return out


def world_density_brute_force(spec: WorldSpec, x: np.ndarray, y) -> float:
    """Probability-space mixture sum: prior times per-style frame products."""
    p_y = math.exp(spec.token_prior.log_prob(y)) if spec.token_prior.log_prob(y) > -math.inf else 0.0
    total = 0.0
    for style in spec.styles:
        sigma = spec.noise_sigma * style.frame_cov_scale
        ll = 0.0
        for i, tok in enumerate(y):
            for f in range(spec.frame_rate):
                frame = x[i * spec.frame_rate + f]
                ll += gaussian_logpdf(frame, style.frame_mean[tok], sigma)
        total += style.weight * math.exp(ll)
    return p_y * total


def gap_density_brute_force(gap: GapSpec, x: np.ndarray, y) -> float:
    """Sum over every true sequence and style of prior * corruption * frames."""
    base = gap.base
    prior = base.token_prior
    rate = gap.label_corruption_rate
    v = base.alphabet.size
    n = len(y)
    total = 0.0
    for y_true in itertools.product(range(v), repeat=n):
        lp_true = prior.log_prob(y_true)
        if lp_true == -math.inf:
            continue
        p_corr = 1.0
        for obs, true in zip(y, y_true):
            if obs == true:
                p_corr *= 1.0 - rate
            else:
                p_corr *= rate / (v - 1) if rate > 0 else 0.0
        if p_corr == 0.0:
            continue
        for style in gap.effective_styles():
            sigma = base.noise_sigma * style.frame_cov_scale
            ll = 0.0
            for i, tok in enumerate(y_true):
                for f in range(base.frame_rate):
                    ll += gaussian_logpdf(x[i * base.frame_rate + f], style.frame_mean[tok], sigma)
            total += math.exp(lp_true) * p_corr * style.weight * math.exp(ll)
    return total


def _std_normal_cdf(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.vectorize(math.erf)(np.asarray(z, dtype=float) / math.sqrt(2.0)))


def pooled_bin_probabilities(spec: WorldSpec, x_edges: np.ndarray, y_edges: np.ndarray) -> np.ndarray:
    """Exact probability of each histogram bin under the mean-pooled frame
    distribution; outer edges are treated as infinite (clipping semantics).

    Pooling T i.i.d. Gaussian frames gives a Gaussian with variance
    sigma^2 / T, so the pooled marginal is a finite Gaussian mixture over
    (style, token sequence) pairs with diagonal covariance.
    """
    xe = np.asarray(x_edges, dtype=float).copy()
    ye = np.asarray(y_edges, dtype=float).copy()
    xe[0], xe[-1] = -np.inf, np.inf
    ye[0], ye[-1] = -np.inf, np.inf
    out = np.zeros((len(xe) - 1, len(ye) - 1))
    prior = spec.token_prior
    for y in all_token_sequences(prior):
        lp = prior.log_prob(y)
        if lp == -math.inf:
            continue
        p_y = math.exp(lp)
        t = spec.frame_rate * len(y)
        for style in spec.styles:
            centroid = style.frame_mean[list(y)].mean(axis=0)
            sigma = spec.noise_sigma * style.frame_cov_scale / math.sqrt(t)
            px = np.diff(_std_normal_cdf((xe - centroid[0]) / sigma))
            py = np.diff(_std_normal_cdf((ye - centroid[1]) / sigma))
            out += p_y * style.weight * np.outer(px, py)
    return out


def clipped_histogram2d(points: np.ndarray, x_edges: np.ndarray, y_edges: np.ndarray) -> np.ndarray:
    """Empirical bin frequencies with out-of-range points clipped inward."""
    eps = 1e-9
    x = np.clip(points[:, 0], x_edges[0] + eps, x_edges[-1] - eps)
    y = np.clip(points[:, 1], y_edges[0] + eps, y_edges[-1] - eps)
    hist, _, _ = np.histogram2d(x, y, bins=[x_edges, y_edges])
    return hist / hist.sum()


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(p - q).sum())
