"""Experiment orchestration: reproducible condition grids over seeds.

Conditions mirror the five training regimes (real only, synthetic only,
curated synthetic only, real plus synthetic, real plus curated synthetic)
plus a 4-row ablation grid that toggles rejection-based curation and the
dual batch-norm statistics independently.
"""
from __future__ import annotations

import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .common import ConfigurationError, ContractError, config_hash, seed_for
from .curation import (
    DEFAULT_PILOT_SIZE,
    DiscriminatorConfig,
    RejectionSampler,
    estimate_initial_M,
    sample_until,
    train_discriminator,
)
from .nn import save_checkpoint
from .recognizers import build_keyword_model, build_sequence_model
from .training import MixPolicy, TrainConfig, evaluate, train
from .worlds import (
    Dataset,
    GapSpec,
    StyleComponent,
    TokenAlphabet,
    TokenPrior,
    WorldSpec,
    gap_from_dict,
    gap_to_dict,
    make_artifact_style,
    sample_real,
    synthetic_stream,
    world_from_dict,
    world_to_dict,
)

CONFIG_SCHEMA = "experiment/1"

CONDITIONS = ("real", "synt", "synt++", "real+synt", "real+synt++")

# (row name, use curated pool, use purity + dual statistics)
ABLATION_ROWS = (
    ("baseline", False, False),
    ("+rejection", True, False),
    ("+dbl BN", False, True),
    ("+both", True, True),
)


# Token means are deliberately asymmetric so no two token subsets share a
# centroid: pooled-feature confusions are then hard but resolvable with data.
_CORNERS = np.array([[1.2, 0.9], [-0.8, 1.1], [-1.1, -0.7], [0.9, -1.2]])


def _two_style_world(noise_sigma: float, style_shift: tuple[float, float],
                     style_cov: float, length_probs=(0.4, 0.3, 0.2, 0.1),
                     token_probs=(0.25, 0.25, 0.25, 0.25)) -> WorldSpec:
    styles = [
        StyleComponent(id=0, frame_mean=_CORNERS, frame_cov_scale=1.0, weight=0.55),
        StyleComponent(id=1, frame_mean=_CORNERS + np.array(style_shift),
                       frame_cov_scale=style_cov, weight=0.45),
    ]
    return WorldSpec(
        alphabet=TokenAlphabet(("a", "b", "c", "d")),
        styles=styles,
        token_prior=TokenPrior(min_len=1, max_len=4,
                               length_probs=np.asarray(length_probs, dtype=float),
                               token_probs=np.asarray(token_probs, dtype=float),
                               no_adjacent_repeats=True),
        frame_rate=3,
        noise_sigma=noise_sigma,
    )


def default_world() -> WorldSpec:
    """Two-style world on a 4-token alphabet; 2-d frames, 3 frames per token.

    Noise is low enough that a framewise recognizer decodes cleanly, which
    the sequence task needs.
    """
    return _two_style_world(noise_sigma=0.32, style_shift=(0.2, -0.15), style_cov=1.15)


def default_keyword_world() -> WorldSpec:
    """Noisier sibling of the default world for the detection task, where
    mean-pooled classes must genuinely overlap for sample size to matter.

    The keyword token is boosted in the prior so positives are frequent
    enough for stable low-FRR statistics.
    """
    return _two_style_world(noise_sigma=0.55, style_shift=(0.4, -0.3), style_cov=1.4,
                            length_probs=(0.55, 0.25, 0.13, 0.07),
                            token_probs=(0.4, 0.2, 0.2, 0.2))


def default_gap(world: WorldSpec | None = None) -> GapSpec:
    """Moderate generator gap: junk mass far outside the support, skewed
    style frequencies, and occasional label corruption."""
    world = world or default_world()
    return GapSpec(
        base=world,
        artifact_weight=0.15,
        artifact_style=make_artifact_style(world, location=(6.0, 6.0), cov_scale=1.0),
        style_reweight={0: 1.5, 1: 0.5},  # the harder style is under-sampled
        label_corruption_rate=0.10,
    )


@dataclass
class DataSizes:
    real_n: int = 400
    val_n: int = 300
    test_n: int = 3000
    synth_pool_n: int = 4000
    curated_n: int = 1600


@dataclass
class ReferenceConfig:
    hidden: int = 24
    epochs: int = 15
    batch_size: int = 64
    lr: float = 3e-3


@dataclass
class TaskTrainConfig:
    hidden: int = 16
    epochs: int = 30
    batch_size: int = 64
    lr: float = 3e-3
    checkpoint_k: int = 10


@dataclass
class ExperimentConfig:
    task: str = "keyword"  # or "sequence"
    world: dict | None = None  # None picks the task's default world
    gap: dict | None = None  # None wraps the world in the default gap
    sizes: DataSizes = field(default_factory=DataSizes)
    keyword: tuple[int, ...] = (0,)
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    trainer: TaskTrainConfig = field(default_factory=TaskTrainConfig)
    conditions: tuple[str, ...] = CONDITIONS
    ablation_grid: bool = False
    pilot_n: int = DEFAULT_PILOT_SIZE
    seeds: tuple[int, ...] = tuple(range(10))

    def __post_init__(self):
        if self.task not in ("keyword", "sequence"):
            raise ConfigurationError(f"unknown task {self.task!r}")
        if not self.seeds:
            raise ConfigurationError("seeds must be nonempty")
        unknown = set(self.conditions) - set(CONDITIONS)
        if unknown:
            raise ConfigurationError(f"unknown conditions: {sorted(unknown)}")
        if self.task == "keyword" and self.discriminator.feature_mode == "full5":
            # Keyword runs score real-vs-synthetic on the CE feature alone.
            self.discriminator.feature_mode = "ce_only"
        if self.world is None:
            default = default_keyword_world() if self.task == "keyword" else default_world()
            self.world = world_to_dict(default)
        # world/gap dicts are validated eagerly so bad files fail fast
        self.world_spec = world_from_dict(self.world)
        if self.gap is None:
            self.gap = gap_to_dict(default_gap(self.world_spec))
        self.gap_spec = gap_from_dict(self.gap)

    @property
    def metric_name(self) -> str:
        return "avg_far" if self.task == "keyword" else "wer"

    def to_dict(self) -> dict:
        return {
            "schema": CONFIG_SCHEMA,
            "task": self.task,
            "world": self.world,
            "gap": self.gap,
            "sizes": asdict(self.sizes),
            "keyword": list(self.keyword),
            "reference": asdict(self.reference),
            "discriminator": asdict(self.discriminator),
            "trainer": asdict(self.trainer),
            "conditions": list(self.conditions),
            "ablation_grid": self.ablation_grid,
            "pilot_n": self.pilot_n,
            "seeds": list(self.seeds),
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        if d.get("schema") != CONFIG_SCHEMA:
            raise ConfigurationError(f"expected schema {CONFIG_SCHEMA!r}, got {d.get('schema')!r}")
        d = dict(d)

        def resolve(entry):
            # Inline spec dict, a path to one, or None for the task default.
            if entry is None or isinstance(entry, dict):
                return entry
            path = Path(entry)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return json.loads(path.read_text(encoding="utf-8"))

        return cls(
            task=d.get("task", "keyword"),
            world=resolve(d.get("world")),
            gap=resolve(d.get("gap")),
            sizes=DataSizes(**d.get("sizes", {})),
            keyword=tuple(d.get("keyword", (0,))),
            reference=ReferenceConfig(**d.get("reference", {})),
            discriminator=DiscriminatorConfig(**d.get("discriminator", {})),
            trainer=TaskTrainConfig(**d.get("trainer", {})),
            conditions=tuple(d.get("conditions", CONDITIONS)),
            ablation_grid=bool(d.get("ablation_grid", False)),
            pilot_n=int(d.get("pilot_n", DEFAULT_PILOT_SIZE)),
            seeds=tuple(d.get("seeds", tuple(range(10)))),
        )

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return ExperimentConfig.from_dict(json.loads(path.read_text(encoding="utf-8")),
                                      base_dir=path.parent)


class SeedAssets:
    """Everything one seed's conditions share: datasets, the reference
    recognizer, the discriminator, and the curated pool (built lazily)."""

    def __init__(self, cfg: ExperimentConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        world, gap, sizes = cfg.world_spec, cfg.gap_spec, cfg.sizes
        self.real_train = sample_real(world, sizes.real_n, seed_for(seed, "data", "train"))
        self.real_val = sample_real(world, sizes.val_n, seed_for(seed, "data", "val"))
        self.real_test = sample_real(world, sizes.test_n, seed_for(seed, "data", "test"))
        self.pool = Dataset(list(_take_stream(gap, seed_for(seed, "data", "pool"),
                                              sizes.synth_pool_n)))
        self._reference = None
        self._discriminator = None
        self._curated = None
        self.curate_report = None

    @property
    def reference(self):
        if self._reference is None:
            cfg, world = self.cfg, self.cfg.world_spec
            model = build_sequence_model(world.alphabet, world.dim, world.frame_rate,
                                         hidden=cfg.reference.hidden,
                                         seed=seed_for(self.seed, "init", "reference"))
            tc = TrainConfig(epochs=cfg.reference.epochs, batch_size=cfg.reference.batch_size,
                             lr=cfg.reference.lr, mix_policy=MixPolicy.REAL_ONLY,
                             double_bn=False, checkpoint_k=cfg.trainer.checkpoint_k,
                             seed=seed_for(self.seed, "train", "reference"))
            train(model, self.real_train, Dataset(), self.real_val, tc)
            self._reference = model
        return self._reference

    @property
    def discriminator(self):
        if self._discriminator is None:
            cfg = self.cfg
            n = min(len(self.real_train), len(self.pool))
            dcfg = DiscriminatorConfig(**{**asdict(cfg.discriminator),
                                          "seed": seed_for(self.seed, "train", "discriminator")})
            self._discriminator = train_discriminator(
                self.reference, self.real_train[:n], self.pool[:n], dcfg)
        return self._discriminator

    @property
    def curated(self) -> Dataset:
        if self._curated is None:
            cfg = self.cfg
            stream_seed = seed_for(self.seed, "data", "curate-stream")
            stream = synthetic_stream(cfg.gap_spec, stream_seed)
            pilot = Dataset(next(stream) for _ in range(cfg.pilot_n))
            m0 = estimate_initial_M(self.discriminator, pilot)
            sampler = RejectionSampler(m=m0, target_n=cfg.sizes.curated_n,
                                       seed=seed_for(self.seed, "rejection"),
                                       clamp_eps=cfg.discriminator.clamp_eps)
            self._curated, self.curate_report = sample_until(
                sampler, self.discriminator, stream, cfg.sizes.curated_n)
        return self._curated


def _take_stream(gap: GapSpec, seed: int, n: int) -> list:
    stream = synthetic_stream(gap, seed)
    return [next(stream) for _ in range(n)]


def _build_task_model(cfg: ExperimentConfig, init_seed: int):
    world = cfg.world_spec
    if cfg.task == "keyword":
        return build_keyword_model(world.dim, cfg.keyword, hidden=cfg.trainer.hidden,
                                   seed=init_seed)
    return build_sequence_model(world.alphabet, world.dim, world.frame_rate,
                                hidden=cfg.trainer.hidden, seed=init_seed)


def _condition_plan(name: str) -> dict:
    """Pools and trainer flags for one named condition."""
    plans = {
        "real": dict(pool=None, policy=MixPolicy.REAL_ONLY, purity=True, double_bn=False),
        "synt": dict(pool="raw", policy=MixPolicy.SYNTH_ONLY, purity=True, double_bn=False),
        "synt++": dict(pool="curated", policy=MixPolicy.SYNTH_ONLY, purity=True, double_bn=False),
        "real+synt": dict(pool="raw", policy=MixPolicy.INTERLEAVED, purity=False, double_bn=False),
        "real+synt++": dict(pool="curated", policy=MixPolicy.INTERLEAVED, purity=True, double_bn=True),
    }
    if name not in plans:
        raise ConfigurationError(f"unknown condition {name!r}")
    return plans[name]


def _ablation_plan(curated: bool, dbl_bn: bool) -> dict:
    return dict(pool="curated" if curated else "raw", policy=MixPolicy.INTERLEAVED,
                purity=dbl_bn, double_bn=dbl_bn)


def run_single(cfg: ExperimentConfig, assets: SeedAssets, row_name: str, plan: dict,
               run_dir: Path | None = None) -> dict:
    """Train and evaluate one (row, seed) cell; returns its metric report."""
    if plan["pool"] == "curated":
        synth = assets.curated
    elif plan["pool"] == "raw":
        # Size-matched with the curated pool so rows differ only in curation.
        synth = assets.pool[:cfg.sizes.curated_n]
    else:
        synth = Dataset()
    real = assets.real_train if plan["policy"] != MixPolicy.SYNTH_ONLY else Dataset()

    # One init per seed: condition comparisons are then paired, differing
    # only in the data they train on and the statistic routing.
    model = _build_task_model(cfg, seed_for(assets.seed, "init", "task"))
    tc = TrainConfig(
        epochs=cfg.trainer.epochs,
        batch_size=cfg.trainer.batch_size,
        lr=cfg.trainer.lr,
        mix_policy=plan["policy"],
        batch_purity=plan["purity"],
        double_bn=plan["double_bn"],
        checkpoint_k=cfg.trainer.checkpoint_k,
        seed=seed_for(assets.seed, "train", row_name),
    )
    model, records = train(model, real, synth, assets.real_val, tc)
    report = evaluate(model, assets.real_test)
    report["condition"] = row_name
    report["seed"] = assets.seed
    report["epoch_records"] = [
        {"epoch": r.epoch, "train_loss": r.train_loss, "val_metric": r.val_metric}
        for r in records
    ]
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model.net, run_dir / "model.json",
                        task={"task": cfg.task, "alphabet": list(cfg.world_spec.alphabet.tokens)})
        payload = dict(report)
        payload["config_hash"] = cfg.hash
        (run_dir / "metrics.json").write_text(json.dumps(payload, indent=2) + "\n",
                                              encoding="utf-8")
    return report


def experiment_rows(cfg: ExperimentConfig) -> list[tuple[str, dict]]:
    if cfg.ablation_grid:
        return [(name, _ablation_plan(curated, dbl)) for name, curated, dbl in ABLATION_ROWS]
    return [(name, _condition_plan(name)) for name in cfg.conditions]


def run_seed(cfg: ExperimentConfig, seed: int, out_dir: Path | None = None,
             rows: list[tuple[str, dict]] | None = None) -> dict[str, dict]:
    """All rows for one seed, sharing generated data and curation assets."""
    assets = SeedAssets(cfg, seed)
    results: dict[str, dict] = {}
    for name, plan in (rows or experiment_rows(cfg)):
        run_dir = None
        if out_dir is not None:
            run_dir = Path(out_dir) / "runs" / name.replace(" ", "_") / str(seed)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                results[name] = run_single(cfg, assets, name, plan, run_dir)
        except Exception as exc:  # recorded as a failure marker, surfaced by the caller
            results[name] = {"condition": name, "seed": seed, "error": f"{type(exc).__name__}: {exc}"}
    return results


def _run_seed_worker(args: tuple[dict, int, str | None]) -> tuple[int, dict]:
    cfg_dict, seed, out_dir = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    out = Path(out_dir) if out_dir else None
    return seed, run_seed(cfg, seed, out)


def run_experiment(cfg: ExperimentConfig, out_dir, jobs: int = 1,
                   condition: str | None = None) -> dict:
    """Full grid over (rows x seeds); writes results.json and results.csv."""
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    if condition is not None:
        if cfg.ablation_grid:
            raise ConfigurationError("--condition cannot filter an ablation grid")
        if condition not in cfg.conditions:
            raise ConfigurationError(f"condition {condition!r} not in config conditions")
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "conditions": [condition]})

    resolved = cfg.to_dict()
    (out_path / "config.json").write_text(json.dumps(resolved, indent=2) + "\n", encoding="utf-8")

    seeds = sorted(cfg.seeds)
    if jobs > 1:
        tasks = [(resolved, s, str(out_path)) for s in seeds]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_seed = dict(pool.map(_run_seed_worker, tasks))
    else:
        per_seed = {s: run_seed(cfg, s, out_path) for s in seeds}

    rows = []
    failures = 0
    metric = cfg.metric_name
    for name, _ in experiment_rows(cfg):
        values, by_seed = [], {}
        for s in seeds:
            cell = per_seed[s][name]
            if "error" in cell:
                by_seed[str(s)] = None
                failures += 1
                continue
            value = cell[metric]
            by_seed[str(s)] = value
            values.append(value)
        mean = float(np.mean(values)) if values else None
        std = float(np.std(values, ddof=1)) if len(values) > 1 else (0.0 if values else None)
        rows.append({"name": name, "metric": metric, "mean": mean, "std": std,
                     "per_seed": by_seed})

    results = {
        "schema": "results/1",
        "config_hash": cfg.hash,
        "task": cfg.task,
        "metric": metric,
        "seeds": list(seeds),
        "rows": rows,
        "failures": failures,
        "errors": {
            f"{name}/{s}": per_seed[s][name]["error"]
            for name, _ in experiment_rows(cfg) for s in seeds
            if "error" in per_seed[s][name]
        },
    }
    (out_path / "results.json").write_text(json.dumps(results, indent=2) + "\n", encoding="utf-8")
    _write_results_csv(results, out_path / "results.csv")
    return results


def _fmt(value) -> str:
    if value is None:
        return "FAILED"
    return f"{value:.6g}"


def _write_results_csv(results: dict, path: Path) -> None:
    seeds = results["seeds"]
    header = ["condition", "metric", "mean", "std"] + [f"seed_{s}" for s in seeds]
    header.append("config_hash")
    lines = [",".join(header)]
    for row in results["rows"]:
        cells = [row["name"], row["metric"], _fmt(row["mean"]), _fmt(row["std"])]
        cells += [_fmt(row["per_seed"][str(s)]) for s in seeds]
        cells.append(results["config_hash"])
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def render_report(out_dir) -> str:
    """Aligned table over the stored results; values as percent, one decimal.

    Flags rows where curation underperformed its uncurated counterpart, and
    refuses to mix artifacts from different config hashes.
    """
    out_path = Path(out_dir)
    results_path = out_path / "results.json"
    if not results_path.exists():
        raise ContractError(f"missing {results_path}; expected artifacts: results.json, results.csv")
    results = json.loads(results_path.read_text(encoding="utf-8"))
    expected = results.get("config_hash")
    for metrics_file in sorted(out_path.glob("runs/*/*/metrics.json")):
        found = json.loads(metrics_file.read_text(encoding="utf-8")).get("config_hash")
        if found != expected:
            raise ContractError(
                f"config hash mismatch: {metrics_file} has {found}, results.json has {expected}")

    names = [row["name"] for row in results["rows"]]
    width = max(len(n) for n in names + ["condition"])
    lines = [
        f"task: {results['task']}   metric: {results['metric']} (% , lower is better)   "
        f"seeds: {len(results['seeds'])}   config: {expected}",
        f"{'condition'.ljust(width)}  {'mean':>8}  {'std':>7}",
    ]
    means = {row["name"]: row["mean"] for row in results["rows"]}
    for row in results["rows"]:
        if row["mean"] is None:
            lines.append(f"{row['name'].ljust(width)}  {'FAILED':>8}")
            continue
        lines.append(f"{row['name'].ljust(width)}  {100 * row['mean']:8.1f}  "
                     f"{100 * (row['std'] or 0.0):7.1f}")
    for plus, base in (("real+synt++", "real+synt"), ("synt++", "synt"), ("+both", "baseline")):
        if means.get(plus) is not None and means.get(base) is not None and means[plus] > means[base]:
            lines.append(f"note: {plus} underperformed {base} "
                         f"({100 * means[plus]:.1f} vs {100 * means[base]:.1f})")
    if results.get("failures"):
        lines.append(f"warning: {results['failures']} cell(s) failed; see results.json errors")
    return "\n".join(lines)
