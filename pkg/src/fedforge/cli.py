"""Command-line experiment runner.

Subcommands:
    train    run the federated loop, write rounds.csv + checkpoint + snapshot
    eval     score a saved checkpoint on the configured test split
    sweep    rerun training across a list of values for beta, mu2 or mu3
    datagen  export the synthetic corpus as PGM images plus a manifest

Every flag mirrors an ExperimentConfig field; flags override config-file
values and FEDFORGE_SEED overrides the master seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import checkpoint
from .config import ConfigError, ExperimentConfig, parse_config, snapshot
from .datagen import build_protocol, export_corpus
from .federated import evaluate, rounds_to_csv, run_rounds
from .model import ForgeryModel
from .seeding import derive_seed

# Default sweep grids (matching the documented tuning experiments).
DEFAULT_SWEEP_VALUES = {
    "beta": [0.10, 0.50, 1.00, 2.00, 3.00, 4.00, 5.00, 7.00],
    "mu2": [0.10, 0.30, 0.70, 1.00, 2.00],
    "mu3": [0.01, 0.10, 0.50, 1.00, 5.00, 10.00],
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="key=value config file")
    for f in dataclasses.fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "out_dir":
            parser.add_argument("--out", dest="out_dir", metavar="DIR")
        elif f.name == "holdout_type":
            parser.add_argument(flag, dest=f.name, metavar="N|none")
        elif f.name in ("protocol", "partition"):
            parser.add_argument(flag, dest=f.name)
        else:
            kind = float if f.name in ("learning_rate", "momentum", "mu1", "mu2",
                                       "mu3", "alpha", "beta") else int
            parser.add_argument(flag, dest=f.name, type=kind)


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {}
    for f in dataclasses.fields(ExperimentConfig):
        value = getattr(args, f.name, None)
        if f.name == "holdout_type" and isinstance(value, str):
            value = None if value.lower() == "none" else int(value)
        overrides[f.name] = value
    return parse_config(args.config, overrides)


def _corpus(cfg: ExperimentConfig):
    return build_protocol(cfg.protocol, n_train=cfg.train_size, n_test=cfg.test_size,
                          holdout_type=cfg.holdout_type,
                          seed=derive_seed(cfg.seed, "corpus"))


def cmd_train(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    final_params, logs = run_rounds(cfg)
    (out / "rounds.csv").write_text(rounds_to_csv(logs))
    checkpoint.save(out / "model.ffrg", final_params)
    (out / "config.snapshot").write_text(snapshot(cfg))
    last = logs[-1]
    print(f"train: {cfg.rounds} rounds, {cfg.clients} clients, "
          f"final accuracy={last.global_accuracy:.4f} auc={last.global_auc:.4f}")
    print(f"train: wrote rounds.csv, model.ffrg, config.snapshot to {out}")
    return 0


def cmd_eval(cfg: ExperimentConfig, checkpoint_path: str) -> int:
    params = checkpoint.load(checkpoint_path)
    model = ForgeryModel(cfg.codebook_size, cfg.codebook_dim, seed=0)
    expected = model.param_set()
    missing = [n for n in expected.names() if n not in params]
    extra = [n for n in params.names() if n not in expected]
    if missing or extra:
        raise ConfigError(
            f"checkpoint structure mismatch: missing {missing or 'none'}, "
            f"extra {extra or 'none'}")
    model.load_params(params)
    split = _corpus(cfg)
    acc, auc_value = evaluate(model, split.test)
    print(f"eval: accuracy={acc!r} auc={auc_value!r} "
          f"({len(split.test)} test samples, protocol={cfg.protocol})")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.csv").write_text(
        "# fedforge-eval-v1\naccuracy,auc\n" + f"{acc!r},{auc_value!r}\n")
    return 0


def cmd_sweep(cfg: ExperimentConfig, param: str, values: list[float]) -> int:
    if param not in DEFAULT_SWEEP_VALUES:
        raise ConfigError(f"sweep param must be one of {sorted(DEFAULT_SWEEP_VALUES)}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["# fedforge-sweep-v1", "value,accuracy,auc"]
    for value in values:
        run_cfg = dataclasses.replace(cfg, **{param: value}).validate()
        _, logs = run_rounds(run_cfg)
        last = logs[-1]
        rows.append(f"{value!r},{last.global_accuracy!r},{last.global_auc!r}")
        print(f"sweep: {param}={value} -> accuracy={last.global_accuracy:.4f} "
              f"auc={last.global_auc:.4f}")
    (out / "sweep.csv").write_text("\n".join(rows) + "\n")
    print(f"sweep: wrote sweep.csv to {out}")
    return 0


def cmd_datagen(cfg: ExperimentConfig) -> int:
    split = _corpus(cfg)
    out = Path(cfg.out_dir)
    export_corpus(split.train, out / "train")
    export_corpus(split.test, out / "test")
    print(f"datagen: wrote {len(split.train)} train / {len(split.test)} test "
          f"PGM images with manifests to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedforge",
        description="Deterministic federated forgery-detection experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run federated training")
    _add_config_flags(p_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True, metavar="PATH")
    _add_config_flags(p_eval)

    p_sweep = sub.add_parser("sweep", help="sweep one loss weight")
    p_sweep.add_argument("--param", required=True, choices=sorted(DEFAULT_SWEEP_VALUES))
    p_sweep.add_argument("--values", metavar="V1,V2,...",
                         help="comma-separated values (defaults to the documented grid)")
    _add_config_flags(p_sweep)

    p_data = sub.add_parser("datagen", help="export the synthetic corpus")
    _add_config_flags(p_data)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        if args.command == "sweep":
            if args.values:
                values = [float(v) for v in args.values.split(",") if v.strip()]
            else:
                values = DEFAULT_SWEEP_VALUES[args.param]
            return cmd_sweep(cfg, args.param, values)
        if args.command == "datagen":
            return cmd_datagen(cfg)
        raise ConfigError(f"unknown command {args.command}")
    except (ConfigError, OSError, checkpoint.CheckpointFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
