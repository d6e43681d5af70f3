"""Command-line front end wiring data generation, curation, training, and
reporting into reproducible runs.

Exit codes: 0 success, 2 configuration error, 3 runtime abort.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from .common import (
    AcceptanceFloorError,
    ConfigurationError,
    ContractError,
    TrainingDivergenceError,
    seed_for,
)
from .curation import Discriminator, DiscriminatorConfig, RejectionSampler, estimate_initial_M, sample_until, train_discriminator
from .experiment import ExperimentConfig, load_config, render_report, run_experiment
from .nn import load_checkpoint, network_from_dict, network_to_dict, save_checkpoint
from .recognizers import SequenceRecognizer, build_sequence_model
from .training import MixPolicy, TrainConfig, train
from .worlds import Dataset, sample_real, synthetic_stream

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _load_cfg(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "seeds": [args.seed]})
    return cfg


def _data_paths(out: Path) -> dict[str, Path]:
    return {
        "real_train": out / "real_train.jsonl",
        "real_val": out / "real_val.jsonl",
        "real_test": out / "real_test.jsonl",
        "synth_pool": out / "synth_pool.jsonl",
    }


def _generate_data(cfg: ExperimentConfig, out: Path, seed: int) -> dict[str, Dataset]:
    sizes = cfg.sizes
    world, gap = cfg.world_spec, cfg.gap_spec
    stream = synthetic_stream(gap, seed_for(seed, "data", "pool"))
    data = {
        "real_train": sample_real(world, sizes.real_n, seed_for(seed, "data", "train")),
        "real_val": sample_real(world, sizes.val_n, seed_for(seed, "data", "val")),
        "real_test": sample_real(world, sizes.test_n, seed_for(seed, "data", "test")),
        "synth_pool": Dataset(next(stream) for _ in range(sizes.synth_pool_n)),
    }
    paths = _data_paths(out)
    for name, ds in data.items():
        ds.to_jsonl(paths[name])
    return data


def _ensure_data(cfg: ExperimentConfig, out: Path, seed: int) -> tuple[dict[str, Dataset], bool]:
    paths = _data_paths(out)
    if all(p.exists() for p in paths.values()):
        return {name: Dataset.from_jsonl(p) for name, p in paths.items()}, False
    return _generate_data(cfg, out, seed), True


def _reference_path(out: Path) -> Path:
    return out / "reference.json"


def _train_reference(cfg: ExperimentConfig, data: dict[str, Dataset], seed: int) -> SequenceRecognizer:
    world = cfg.world_spec
    model = build_sequence_model(world.alphabet, world.dim, world.frame_rate,
                                 hidden=cfg.reference.hidden,
                                 seed=seed_for(seed, "init", "reference"))
    tc = TrainConfig(epochs=cfg.reference.epochs, batch_size=cfg.reference.batch_size,
                     lr=cfg.reference.lr, mix_policy=MixPolicy.REAL_ONLY, double_bn=False,
                     checkpoint_k=cfg.trainer.checkpoint_k,
                     seed=seed_for(seed, "train", "reference"))
    train(model, data["real_train"], Dataset(), data["real_val"], tc)
    return model


def _ensure_reference(cfg: ExperimentConfig, out: Path, seed: int,
                      data: dict[str, Dataset]) -> tuple[SequenceRecognizer, bool]:
    path = _reference_path(out)
    world = cfg.world_spec
    if path.exists():
        net, _, task = load_checkpoint(path)
        if task is None or task.get("task") != "sequence":
            raise ConfigurationError(f"{path} is not a sequence-recognizer checkpoint")
        return SequenceRecognizer(net=net, alphabet=world.alphabet,
                                  frames_per_token=world.frame_rate), False
    model = _train_reference(cfg, data, seed)
    save_checkpoint(model.net, path,
                    task={"task": "sequence", "alphabet": list(world.alphabet.tokens),
                          "frames_per_token": world.frame_rate})
    return model, True


def _ensure_discriminator(cfg: ExperimentConfig, out: Path, seed: int,
                          data: dict[str, Dataset],
                          reference: SequenceRecognizer) -> tuple[Discriminator, bool]:
    path = out / "discriminator.json"
    if path.exists():
        payload = json.loads(path.read_text(encoding="utf-8"))
        return Discriminator.from_dict(payload, reference=reference), False
    n = min(len(data["real_train"]), len(data["synth_pool"]))
    dcfg = DiscriminatorConfig(**{**asdict(cfg.discriminator),
                                  "seed": seed_for(seed, "train", "discriminator")})
    disc = train_discriminator(reference, data["real_train"][:n], data["synth_pool"][:n], dcfg)
    path.write_text(json.dumps(disc.to_dict()) + "\n", encoding="utf-8")
    return disc, True


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    data = _generate_data(cfg, out, seed)
    summary = {
        "schema": "gen-report/1",
        "config_hash": cfg.hash,
        "seed": seed,
        "counts": {name: len(ds) for name, ds in data.items()},
        "pool_style_histogram": data["synth_pool"].style_histogram(),
    }
    (out / "gen_report.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    for name, ds in data.items():
        print(f"{name}: {len(ds)} samples")
    print(f"pool style histogram: {summary['pool_style_histogram']}")
    return EXIT_OK


def cmd_train_recognizer(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    data, generated = _ensure_data(cfg, out, seed)
    model, trained = _ensure_reference(cfg, out, seed, data)
    report = model.evaluate(data["real_test"])
    print(f"reference recognizer {'trained' if trained else 'loaded'}"
          f"{' (data generated)' if generated else ''}; test wer {report['wer']:.4f}")
    return EXIT_OK


def cmd_train_discriminator(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    data, _ = _ensure_data(cfg, out, seed)
    reference, ref_trained = _ensure_reference(cfg, out, seed, data)
    disc, trained = _ensure_discriminator(cfg, out, seed, data, reference)
    d_pool, _ = disc.score_batch(list(data["synth_pool"][:200]))
    print(f"discriminator {'trained' if trained else 'loaded'} "
          f"(reference {'trained' if ref_trained else 'loaded'}); "
          f"mean D over 200 pool samples: {float(d_pool.mean()):.3f}")
    return EXIT_OK


def cmd_curate(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    data, _ = _ensure_data(cfg, out, seed)
    reference, ref_trained = _ensure_reference(cfg, out, seed, data)
    disc, disc_trained = _ensure_discriminator(cfg, out, seed, data, reference)

    stream = synthetic_stream(cfg.gap_spec, seed_for(seed, "data", "curate-stream"))
    pilot = Dataset(next(stream) for _ in range(cfg.pilot_n))
    m0 = estimate_initial_M(disc, pilot)
    sampler = RejectionSampler(m=m0, target_n=cfg.sizes.curated_n,
                               seed=seed_for(seed, "rejection"),
                               clamp_eps=cfg.discriminator.clamp_eps)
    curated, run_report = sample_until(sampler, disc, stream, cfg.sizes.curated_n)
    curated.to_jsonl(out / "curated.jsonl")
    payload = {
        "schema": "curate-report/1",
        "config_hash": cfg.hash,
        "seed": seed,
        "initial_M": m0,
        "trained_reference": ref_trained,
        "trained_discriminator": disc_trained,
        **run_report.to_dict(),
    }
    (out / "curate_report.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    rate = run_report.acceptance_rate
    print(f"curated {run_report.n_accepted} samples from {run_report.n_seen} proposals "
          f"(acceptance rate {rate if rate is None else round(rate, 4)}, final M "
          f"{run_report.final_m:.4g})")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    results = run_experiment(cfg, args.out, jobs=args.jobs, condition=args.condition)
    print(render_report(args.out))
    if results["failures"]:
        print(f"{results['failures']} cell(s) failed; partial results written", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_report(args) -> int:
    print(render_report(args.out))
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return EXIT_OK if run_selftest() else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synthgap",
        description="curated synthetic data for toy recognizers: generation, "
                    "discriminator-driven rejection sampling, dual-BN training, reports")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", type=str, default=None, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="override the config seed list")
        if needs_out:
            p.add_argument("--out", type=str, default="synthgap_out", help="output directory")

    p = sub.add_parser("gen-data", help="write real train/val/test and the synthetic pool")
    common(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train-recognizer", help="train the frozen reference recognizer")
    common(p)
    p.set_defaults(fn=cmd_train_recognizer)

    p = sub.add_parser("train-discriminator", help="fit the real-vs-synthetic scorer")
    common(p)
    p.set_defaults(fn=cmd_train_discriminator)

    p = sub.add_parser("curate", help="rejection-sample a curated synthetic dataset")
    common(p)
    p.set_defaults(fn=cmd_curate)

    p = sub.add_parser("run", help="run the full condition grid over seeds")
    common(p)
    p.add_argument("--condition", type=str, default=None, help="run a single named condition")
    p.add_argument("--jobs", type=int, default=1, help="parallel seed workers")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("report", help="render the results table for a run directory")
    p.add_argument("--out", type=str, default="synthgap_out", help="run directory")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("selftest", help="run the built-in oracle checks")
    p.set_defaults(fn=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigurationError, ContractError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AcceptanceFloorError, TrainingDivergenceError, OSError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
