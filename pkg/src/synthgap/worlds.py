"""Parametric worlds with exact joint densities over (frame sequence, tokens).

A world draws a token sequence from a categorical prior, picks a latent
style, and emits a fixed number of Gaussian frames per token.  A gapped
variant distorts that world the way an imperfect generator would: junk
styles far outside the support, skewed style frequencies, missing styles,
and labels that no longer match the signal.  Everything stays in closed
form, so sampled claims can be checked against exact numbers.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .common import (
    ConfigurationError,
    ContractError,
    Origin,
    UndefinedRatioError,
    logsumexp,
)

SCHEMA_VERSION = "gapgen/1"

_SUM_TOL = 1e-9
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TokenAlphabet:
    """Ordered token symbols; the CTC blank is reserved outside the alphabet."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not 2 <= len(self.tokens) <= 16:
            raise ConfigurationError(f"alphabet size must be in [2, 16], got {len(self.tokens)}")
        if len(set(self.tokens)) != len(self.tokens):
            raise ConfigurationError("alphabet tokens must be distinct")

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def blank_index(self) -> int:
        # One past the last token: the blank never collides with a token id.
        return len(self.tokens)


@dataclass
class StyleComponent:
    """One mixture component: a per-token frame mean and a covariance scale."""

    id: int
    frame_mean: np.ndarray  # (V, d): row i is the frame mean for token i
    frame_cov_scale: float
    weight: float

    def __post_init__(self):
        self.frame_mean = np.asarray(self.frame_mean, dtype=float)
        if self.frame_mean.ndim != 2:
            raise ConfigurationError("frame_mean must be a (V, d) matrix")
        self.frame_mean.setflags(write=False)
        if not 0.0 <= self.weight <= 1.0:
            raise ConfigurationError(f"style weight must be in [0, 1], got {self.weight}")
        if not self.frame_cov_scale > 0.0:
            raise ConfigurationError("frame_cov_scale must be positive")


@dataclass
class TokenPrior:
    """Categorical prior: a length distribution plus per-token draws.

    With no_adjacent_repeats, each position after the first draws from the
    same categorical renormalized over tokens differing from the previous
    one; repeated adjacent tokens then have zero prior mass (which keeps
    greedy CTC decoding information-sufficient for framewise models).
    """

    min_len: int
    max_len: int
    length_probs: np.ndarray  # (max_len - min_len + 1,)
    token_probs: np.ndarray  # (V,)
    no_adjacent_repeats: bool = False

    def __post_init__(self):
        self.length_probs = np.asarray(self.length_probs, dtype=float)
        self.token_probs = np.asarray(self.token_probs, dtype=float)
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigurationError("need 1 <= min_len <= max_len")
        if self.length_probs.shape != (self.max_len - self.min_len + 1,):
            raise ConfigurationError("length_probs must cover [min_len, max_len]")
        for name, row in (("length_probs", self.length_probs), ("token_probs", self.token_probs)):
            if np.any(row < 0.0):
                raise ConfigurationError(f"{name} must be non-negative")
            if abs(row.sum() - 1.0) > _SUM_TOL:
                raise ConfigurationError(f"{name} must sum to 1 within {_SUM_TOL}")
        self.length_probs.setflags(write=False)
        self.token_probs.setflags(write=False)

    @property
    def lengths(self) -> np.ndarray:
        return np.arange(self.min_len, self.max_len + 1)

    def log_prob(self, tokens: Sequence[int]) -> float:
        n = len(tokens)
        if not self.min_len <= n <= self.max_len:
            return -math.inf
        if self.length_probs[n - self.min_len] <= 0.0:
            return -math.inf
        lp = math.log(self.length_probs[n - self.min_len])
        with np.errstate(divide="ignore"):
            log_tok = np.log(self.token_probs)
        if not self.no_adjacent_repeats:
            return lp + float(log_tok[list(tokens)].sum())
        total = log_tok[tokens[0]]
        for prev, cur in zip(tokens, tokens[1:]):
            if cur == prev:
                return -math.inf
            total += log_tok[cur] - math.log1p(-self.token_probs[prev])
        return lp + float(total)

    def sample(self, rng: np.random.Generator) -> tuple[int, ...]:
        n = int(rng.choice(self.lengths, p=self.length_probs))
        v = len(self.token_probs)
        if not self.no_adjacent_repeats:
            toks = rng.choice(v, size=n, p=self.token_probs)
            return tuple(int(t) for t in toks)
        out = [int(rng.choice(v, p=self.token_probs))]
        for _ in range(n - 1):
            p = self.token_probs.copy()
            p[out[-1]] = 0.0
            out.append(int(rng.choice(v, p=p / p.sum())))
        return tuple(out)


@dataclass
class WorldSpec:
    """Joint distribution over (frame sequence, token sequence)."""

    alphabet: TokenAlphabet
    styles: list[StyleComponent]
    token_prior: TokenPrior
    frame_rate: int  # frames emitted per token; T = frame_rate * len(tokens)
    noise_sigma: float

    def __post_init__(self):
        if not self.styles:
            raise ConfigurationError("world needs at least one style")
        ids = [s.id for s in self.styles]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("style ids must be distinct")
        total = sum(s.weight for s in self.styles)
        if abs(total - 1.0) > _SUM_TOL:
            raise ConfigurationError(f"style weights must sum to 1 within {_SUM_TOL}, got {total}")
        v, d = self.styles[0].frame_mean.shape
        if v != self.alphabet.size:
            raise ConfigurationError("frame_mean rows must match alphabet size")
        for s in self.styles:
            if s.frame_mean.shape != (v, d):
                raise ConfigurationError("all styles must share the frame_mean shape")
        if len(self.token_probs()) != v:
            raise ConfigurationError("token_probs must match alphabet size")
        if not (isinstance(self.frame_rate, int) and self.frame_rate >= 1):
            raise ConfigurationError("frame_rate must be a positive integer")
        if not self.noise_sigma > 0.0:
            raise ConfigurationError("noise_sigma must be positive")

    def token_probs(self) -> np.ndarray:
        return self.token_prior.token_probs

    @property
    def dim(self) -> int:
        return self.styles[0].frame_mean.shape[1]

    def style_by_id(self, style_id: int) -> StyleComponent:
        for s in self.styles:
            if s.id == style_id:
                return s
        raise KeyError(style_id)


@dataclass
class GapSpec:
    """A distorted view of a base world, one knob per kind of mismatch.

    artifact_weight adds mass to a junk style outside the base support,
    style_reweight over/under-samples existing styles, dropped_styles
    removes them entirely, and label_corruption_rate swaps tokens of the
    emitted label without touching the frames.
    """

    base: WorldSpec
    artifact_weight: float = 0.0
    artifact_style: StyleComponent | None = None
    style_reweight: dict[int, float] = field(default_factory=dict)
    dropped_styles: frozenset[int] = frozenset()
    label_corruption_rate: float = 0.0

    def __post_init__(self):
        self.dropped_styles = frozenset(self.dropped_styles)
        if not 0.0 <= self.artifact_weight <= 0.5:
            raise ConfigurationError("artifact_weight must be in [0, 0.5]")
        if not 0.0 <= self.label_corruption_rate <= 0.5:
            raise ConfigurationError("label_corruption_rate must be in [0, 0.5]")
        base_ids = {s.id for s in self.base.styles}
        if not self.dropped_styles <= base_ids:
            raise ConfigurationError("dropped_styles must be a subset of base style ids")
        if not set(self.style_reweight) <= base_ids:
            raise ConfigurationError("style_reweight keys must be base style ids")
        if any(f <= 0.0 for f in self.style_reweight.values()):
            raise ConfigurationError("style_reweight factors must be positive")
        if self.artifact_weight > 0.0:
            if self.artifact_style is None:
                raise ConfigurationError("artifact_weight > 0 requires an artifact_style")
            if self.artifact_style.id in base_ids:
                raise ConfigurationError("artifact style id must not collide with base styles")
            if self.artifact_style.frame_mean.shape != self.base.styles[0].frame_mean.shape:
                raise ConfigurationError("artifact style must match the base frame_mean shape")
        if len(self.dropped_styles) == len(self.base.styles):
            raise ConfigurationError("cannot drop every base style")

    def effective_styles(self) -> list[StyleComponent]:
        """Style mixture actually emitted: dropped, reweighted, plus artifact."""
        kept = [s for s in self.base.styles if s.id not in self.dropped_styles]
        raw = np.array([s.weight * self.style_reweight.get(s.id, 1.0) for s in kept])
        scale = (1.0 - self.artifact_weight) / raw.sum()
        out = [replace(s, weight=float(w * scale)) for s, w in zip(kept, raw)]
        if self.artifact_weight > 0.0:
            out.append(replace(self.artifact_style, weight=self.artifact_weight))
        return out


def make_artifact_style(base: WorldSpec, location: Sequence[float], cov_scale: float = 1.0,
                        style_id: int | None = None) -> StyleComponent:
    """Junk style whose frames sit at one token-independent location."""
    loc = np.asarray(location, dtype=float)
    if loc.shape != (base.dim,):
        raise ConfigurationError(f"artifact location must have dimension {base.dim}")
    if style_id is None:
        style_id = max(s.id for s in base.styles) + 1
    mean = np.tile(loc, (base.alphabet.size, 1))
    return StyleComponent(id=style_id, frame_mean=mean, frame_cov_scale=cov_scale, weight=0.0)


def identity_gap(spec: WorldSpec) -> GapSpec:
    return GapSpec(base=spec)


# ---------------------------------------------------------------------------
# Samples and datasets


@dataclass
class Sample:
    id: int
    features: np.ndarray  # (T, d)
    tokens: tuple[int, ...]
    origin: Origin
    style_id: int  # diagnostic only; densities marginalize over styles
    extras: dict | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.tokens = tuple(int(t) for t in self.tokens)
        self.origin = Origin(self.origin)


class Dataset:
    """Ordered collection of samples with JSON Lines persistence."""

    def __init__(self, samples: Iterable[Sample] = ()):
        self.samples: list[Sample] = list(samples)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return Dataset(self.samples[idx])
        return self.samples[idx]

    def append(self, sample: Sample) -> None:
        self.samples.append(sample)

    def extend(self, samples: Iterable[Sample]) -> None:
        self.samples.extend(samples)

    def pooled_features(self) -> np.ndarray:
        """Per-sample mean over frames, stacked to (n, d)."""
        return np.stack([s.features.mean(axis=0) for s in self.samples])

    def style_histogram(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for s in self.samples:
            counts[s.style_id] = counts.get(s.style_id, 0) + 1
        return dict(sorted(counts.items()))

    def to_jsonl(self, path) -> None:
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            for s in self.samples:
                row = {
                    "id": s.id,
                    "features": s.features.tolist(),
                    "tokens": list(s.tokens),
                    "origin": s.origin.value,
                    "style_id": s.style_id,
                }
                if s.extras:
                    row.update(s.extras)
                fh.write(json.dumps(row, separators=(",", ":")) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "Dataset":
        path = Path(path)
        out = cls()
        with path.open("r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                row = json.loads(line)
                extras = {k: row[k] for k in row if k not in ("id", "features", "tokens", "origin", "style_id")}
                out.append(Sample(
                    id=int(row["id"]),
                    features=np.asarray(row["features"], dtype=float),
                    tokens=tuple(row["tokens"]),
                    origin=Origin(row["origin"]),
                    style_id=int(row["style_id"]),
                    extras=extras or None,
                ))
        return out


# ---------------------------------------------------------------------------
# Sampling


def _emit_frames(rng: np.random.Generator, style: StyleComponent, tokens: tuple[int, ...],
                 frame_rate: int, noise_sigma: float) -> np.ndarray:
    means = np.repeat(style.frame_mean[list(tokens)], frame_rate, axis=0)
    sigma = noise_sigma * style.frame_cov_scale
    return means + rng.normal(0.0, sigma, size=means.shape)


def _corrupt_tokens(rng: np.random.Generator, tokens: tuple[int, ...], rate: float,
                    vocab: int) -> tuple[int, ...]:
    if rate <= 0.0:
        return tokens
    out = list(tokens)
    hits = rng.random(len(out)) < rate
    for i in np.flatnonzero(hits):
        alt = int(rng.integers(0, vocab - 1))
        if alt >= out[i]:
            alt += 1  # uniform over the other vocab-1 tokens
        out[i] = alt
    return tuple(out)


def sample_real(spec: WorldSpec, n: int, seed: int) -> Dataset:
    """Draw n i.i.d. samples from the world; deterministic given seed."""
    if n < 1:
        raise ContractError("sample_real requires n >= 1")
    rng = np.random.default_rng(seed)
    weights = np.array([s.weight for s in spec.styles])
    out = Dataset()
    for i in range(n):
        style = spec.styles[int(rng.choice(len(spec.styles), p=weights))]
        tokens = spec.token_prior.sample(rng)
        x = _emit_frames(rng, style, tokens, spec.frame_rate, spec.noise_sigma)
        out.append(Sample(id=i, features=x, tokens=tokens, origin=Origin.REAL, style_id=style.id))
    return out


def synthetic_stream(gap: GapSpec, seed: int, start_id: int = 0) -> Iterator[Sample]:
    """Endless stream of synthetic samples from the distorted world."""
    rng = np.random.default_rng(seed)
    styles = gap.effective_styles()
    weights = np.array([s.weight for s in styles])
    base = gap.base
    i = start_id
    while True:
        style = styles[int(rng.choice(len(styles), p=weights))]
        true_tokens = base.token_prior.sample(rng)
        x = _emit_frames(rng, style, true_tokens, base.frame_rate, base.noise_sigma)
        tokens = _corrupt_tokens(rng, true_tokens, gap.label_corruption_rate, base.alphabet.size)
        yield Sample(id=i, features=x, tokens=tokens, origin=Origin.SYNTHETIC, style_id=style.id)
        i += 1


def sample_synth(gap: GapSpec, n: int, seed: int) -> Dataset:
    """Draw n samples from the gapped world; deterministic given seed."""
    if n < 1:
        raise ContractError("sample_synth requires n >= 1")
    stream = synthetic_stream(gap, seed)
    return Dataset(next(stream) for _ in range(n))


# ---------------------------------------------------------------------------
# Exact densities


def _check_xy(spec: WorldSpec, x: np.ndarray, y: Sequence[int]) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != spec.dim:
        raise ContractError(f"features must be (T, {spec.dim}), got {x.shape}")
    if len(y) == 0 or x.shape[0] != spec.frame_rate * len(y):
        raise ContractError("frame count must equal frame_rate * len(tokens)")
    if any(not 0 <= t < spec.alphabet.size for t in y):
        raise ContractError("token index outside the alphabet")
    return x


def _style_frames_loglik(style: StyleComponent, x: np.ndarray, tokens: Sequence[int],
                         frame_rate: int, noise_sigma: float) -> float:
    sigma = noise_sigma * style.frame_cov_scale
    means = np.repeat(style.frame_mean[list(tokens)], frame_rate, axis=0)
    sq = float(((x - means) ** 2).sum())
    t, d = x.shape
    return -0.5 * sq / sigma**2 - t * d * (0.5 * _LOG_2PI + math.log(sigma))


def _mixture_log_density(styles: list[StyleComponent], x: np.ndarray, tokens: Sequence[int],
                         frame_rate: int, noise_sigma: float) -> float:
    terms = []
    for s in styles:
        if s.weight <= 0.0:
            continue
        terms.append(math.log(s.weight) + _style_frames_loglik(s, x, tokens, frame_rate, noise_sigma))
    return logsumexp(terms)


def _world_log_density(spec: WorldSpec, x: np.ndarray, y: Sequence[int]) -> float:
    x = _check_xy(spec, x, y)
    lp_y = spec.token_prior.log_prob(y)
    if lp_y == -math.inf:
        return -math.inf
    return lp_y + _mixture_log_density(spec.styles, x, y, spec.frame_rate, spec.noise_sigma)


def _gap_log_density(gap: GapSpec, x: np.ndarray, y: Sequence[int]) -> float:
    base = gap.base
    x = _check_xy(base, x, y)
    n = len(y)
    prior = base.token_prior
    if not prior.min_len <= n <= prior.max_len:
        return -math.inf
    lp_len = prior.length_probs[n - prior.min_len]
    if lp_len <= 0.0:
        return -math.inf
    lp_len = math.log(lp_len)
    styles = gap.effective_styles()
    rate = gap.label_corruption_rate

    if rate <= 0.0:
        with np.errstate(divide="ignore"):
            lp_tok = float(np.log(prior.token_probs)[list(y)].sum())
        if lp_tok == -math.inf:
            return -math.inf
        return lp_len + lp_tok + _mixture_log_density(styles, x, y, base.frame_rate, base.noise_sigma)

    # Label corruption: marginalize the uncorrupted tokens.  Given a style,
    # frames of different positions are independent, so the sum over true
    # sequences factorizes per position for the i.i.d. prior and reduces to
    # a forward pass over positions for the no-repeat (Markov) prior.
    v = base.alphabet.size
    frame_rate, d = base.frame_rate, base.dim
    with np.errstate(divide="ignore"):
        log_ptok = np.log(prior.token_probs)
    log_corr = np.full((n, v), math.log(rate) - math.log(v - 1))
    log_corr[np.arange(n), list(y)] = math.log1p(-rate)

    trans = None
    if prior.no_adjacent_repeats and n > 1:
        with np.errstate(divide="ignore"):
            trans = log_ptok[None, :] - np.log1p(-prior.token_probs)[:, None]
        trans = trans + np.where(np.eye(v, dtype=bool), -math.inf, 0.0)

    terms = []
    for s in styles:
        if s.weight <= 0.0:
            continue
        sigma = base.noise_sigma * s.frame_cov_scale
        diff = x[:, None, :] - s.frame_mean[None, :, :]  # (T, V, d)
        fll = -0.5 * (diff**2).sum(axis=2) / sigma**2 - d * (0.5 * _LOG_2PI + math.log(sigma))
        block = fll.reshape(n, frame_rate, v).sum(axis=1)  # (n, V)
        evidence = log_corr + block  # (n, V): log P(y_i, frames_i | true token)
        if trans is None:
            if prior.no_adjacent_repeats:
                total = float(logsumexp(log_ptok + evidence[0]))
            else:
                total = float(logsumexp(log_ptok[None, :] + evidence, axis=1).sum())
        else:
            forward = log_ptok + evidence[0]
            for i in range(1, n):
                forward = logsumexp(forward[:, None] + trans, axis=0) + evidence[i]
            total = float(logsumexp(forward))
        terms.append(math.log(s.weight) + total)
    return lp_len + logsumexp(terms)


def log_density(spec_or_gap: WorldSpec | GapSpec, x, y: Sequence[int]) -> float:
    """Exact log joint density, marginalizing style (and corruption for gaps)."""
    if isinstance(spec_or_gap, GapSpec):
        return _gap_log_density(spec_or_gap, x, y)
    if isinstance(spec_or_gap, WorldSpec):
        return _world_log_density(spec_or_gap, x, y)
    raise ContractError(f"expected WorldSpec or GapSpec, got {type(spec_or_gap)!r}")


def oracle_ratio(base: WorldSpec, gap: GapSpec, x, y: Sequence[int]) -> float:
    """Exact density ratio base/gap; the ground truth rejection targets."""
    lg = log_density(gap, x, y)
    if lg == -math.inf:
        raise UndefinedRatioError("gap density is zero at the queried point")
    ld = log_density(base, x, y)
    return float(np.exp(ld - lg))


# ---------------------------------------------------------------------------
# Spec (de)serialization


def _style_to_dict(s: StyleComponent) -> dict:
    return {
        "id": s.id,
        "frame_mean": s.frame_mean.tolist(),
        "frame_cov_scale": s.frame_cov_scale,
        "weight": s.weight,
    }


def _style_from_dict(d: dict) -> StyleComponent:
    return StyleComponent(
        id=int(d["id"]),
        frame_mean=np.asarray(d["frame_mean"], dtype=float),
        frame_cov_scale=float(d["frame_cov_scale"]),
        weight=float(d["weight"]),
    )


def world_to_dict(spec: WorldSpec) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "kind": "world",
        "alphabet": {"tokens": list(spec.alphabet.tokens)},
        "styles": [_style_to_dict(s) for s in spec.styles],
        "token_prior": {
            "min_len": spec.token_prior.min_len,
            "max_len": spec.token_prior.max_len,
            "length_probs": spec.token_prior.length_probs.tolist(),
            "token_probs": spec.token_prior.token_probs.tolist(),
            "no_adjacent_repeats": spec.token_prior.no_adjacent_repeats,
        },
        "frame_rate": spec.frame_rate,
        "noise_sigma": spec.noise_sigma,
    }


def world_from_dict(d: dict) -> WorldSpec:
    _check_schema(d, "world")
    prior = d["token_prior"]
    return WorldSpec(
        alphabet=TokenAlphabet(tuple(d["alphabet"]["tokens"])),
        styles=[_style_from_dict(s) for s in d["styles"]],
        token_prior=TokenPrior(
            min_len=int(prior["min_len"]),
            max_len=int(prior["max_len"]),
            length_probs=np.asarray(prior["length_probs"], dtype=float),
            token_probs=np.asarray(prior["token_probs"], dtype=float),
            no_adjacent_repeats=bool(prior.get("no_adjacent_repeats", False)),
        ),
        frame_rate=int(d["frame_rate"]),
        noise_sigma=float(d["noise_sigma"]),
    )


def gap_to_dict(gap: GapSpec) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "kind": "gap",
        "base": world_to_dict(gap.base),
        "artifact_weight": gap.artifact_weight,
        "artifact_style": _style_to_dict(gap.artifact_style) if gap.artifact_style else None,
        "style_reweight": {str(k): v for k, v in sorted(gap.style_reweight.items())},
        "dropped_styles": sorted(gap.dropped_styles),
        "label_corruption_rate": gap.label_corruption_rate,
    }


def gap_from_dict(d: dict) -> GapSpec:
    _check_schema(d, "gap")
    return GapSpec(
        base=world_from_dict(d["base"]),
        artifact_weight=float(d.get("artifact_weight", 0.0)),
        artifact_style=_style_from_dict(d["artifact_style"]) if d.get("artifact_style") else None,
        style_reweight={int(k): float(v) for k, v in d.get("style_reweight", {}).items()},
        dropped_styles=frozenset(int(i) for i in d.get("dropped_styles", [])),
        label_corruption_rate=float(d.get("label_corruption_rate", 0.0)),
    )


def _check_schema(d: dict, kind: str) -> None:
    if d.get("schema") != SCHEMA_VERSION:
        raise ConfigurationError(f"expected schema {SCHEMA_VERSION!r}, got {d.get('schema')!r}")
    if d.get("kind") != kind:
        raise ConfigurationError(f"expected kind {kind!r}, got {d.get('kind')!r}")


def save_spec(obj: WorldSpec | GapSpec, path) -> None:
    d = gap_to_dict(obj) if isinstance(obj, GapSpec) else world_to_dict(obj)
    Path(path).write_text(json.dumps(d, indent=2) + "\n", encoding="utf-8")


def load_spec(path) -> WorldSpec | GapSpec:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if d.get("kind") == "gap":
        return gap_from_dict(d)
    return world_from_dict(d)
