"""Command-line experiment runner.

Each experiment subcommand builds its default protocol config, applies a
JSON config file and flag overrides, runs every seed, and writes per-seed
CSVs plus an aggregate JSON under the output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .data import SYNTHETIC_CHARS, serialize_idx, synthetic_glyphs
from .experiments import (
    ExperimentConfig,
    default_config,
    load_emnist_splits,
    run_experiment,
)
from .network import TransferStrategy

logger = logging.getLogger("llnn")

SUBCOMMAND_TO_EXPERIMENT = {
    "e1-nonforgetting": "e1",
    "e2-forward": "e2",
    "e3-onealways-sweep": "e3",
    "e4-confusion": "e4",
    "e5-graceful": "e5",
    "e6-backward": "e6",
}

STRATEGY_NAMES = ("all_random", "one_similar", "one_random", "one_worst", "one_always")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="llnn",
        description="Lifelong-learning experiments on binary character tasks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", type=Path, help="JSON config overriding the defaults")
        p.add_argument("--data", choices=["emnist", "synthetic"], help="data source")
        p.add_argument("--data-dir", type=Path,
                       help="EMNIST directory (default: $LLNN_DATA_DIR)")
        p.add_argument("--out", type=Path, help="output directory (default: out)")
        p.add_argument("--seeds", type=int, metavar="N", help="use seeds 0..N-1")
        p.add_argument("--seed-list", type=str, metavar="a,b,c", help="explicit seeds")
        p.add_argument("--jobs", type=int, help="parallel seed workers (default 1)")

    for name, exp in SUBCOMMAND_TO_EXPERIMENT.items():
        p = sub.add_parser(name, help=f"run experiment {exp}")
        add_common(p)
        if exp == "e2":
            p.add_argument("--strategy", choices=STRATEGY_NAMES,
                           help="restrict to a single transfer strategy")
        if exp == "e3":
            p.add_argument("--sweep-chars", type=str, metavar="a,b,c",
                           help="characters for the fifth task sweep")
        if exp == "e4":
            p.add_argument("--gamma", type=float, help="confusion threshold (default 0.1)")
            p.add_argument("--confusion-expansion", type=str, metavar="a,b",
                           help="stage-2 unit counts to evaluate (default 5,10)")
        if exp == "e5":
            p.add_argument("--forget", type=str, metavar="a,b",
                           help="task indices to gracefully forget (default 0)")
        if exp == "e6":
            p.add_argument("--second", choices=["O", "Z"],
                           help="restrict to one backward-link source")

    p = sub.add_parser("data-validate", help="check an EMNIST directory")
    p.add_argument("--data-dir", type=Path)

    p = sub.add_parser("synth-gen", help="write the synthetic corpus as IDX files")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--per-char", type=int, default=150)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chars", type=str, default=",".join(SYNTHETIC_CHARS))
    return parser


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x != ""]
    except ValueError:
        raise SystemExit(f"{flag}: expected comma-separated integers, got {text!r}")


def apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise SystemExit(f"--config {args.config}: invalid JSON ({exc})")
        raw["experiment"] = cfg.experiment
        try:
            cfg = ExperimentConfig.from_json_dict({**cfg.to_json_dict(), **raw})
        except (TypeError, ValueError) as exc:
            raise SystemExit(f"--config {args.config}: {exc}")
    if args.data:
        cfg.data_source = args.data
    if args.data_dir:
        cfg.data_dir = str(args.data_dir)
    elif cfg.data_dir is None:
        cfg.data_dir = os.environ.get("LLNN_DATA_DIR")
    if args.out:
        cfg.output_dir = str(args.out)
    if args.seeds is not None:
        if args.seeds < 1:
            raise SystemExit("--seeds: must be >= 1")
        cfg.seeds = list(range(args.seeds))
    if args.seed_list:
        cfg.seeds = _parse_int_list(args.seed_list, "--seed-list")
    if args.jobs is not None:
        cfg.jobs = max(1, args.jobs)

    if getattr(args, "gamma", None) is not None:
        cfg.gamma = args.gamma
    if getattr(args, "confusion_expansion", None):
        cfg.confusion_expansion = _parse_int_list(args.confusion_expansion,
                                                  "--confusion-expansion")
    if getattr(args, "forget", None):
        cfg.forget_set = _parse_int_list(args.forget, "--forget")
    if getattr(args, "second", None):
        cfg.backward_arms = ["nolinks", args.second]
    if getattr(args, "sweep_chars", None):
        cfg.sweep_chars = [c for c in args.sweep_chars.split(",") if c]
    if getattr(args, "strategy", None):
        cfg.strategy = TransferStrategy(args.strategy)
        if cfg.experiment == "e2":
            cfg.e2_strategies = [args.strategy]

    if cfg.data_source == "emnist" and not cfg.data_dir:
        raise SystemExit("EMNIST selected but no --data-dir and $LLNN_DATA_DIR is unset")
    try:
        ExperimentConfig.from_json_dict(cfg.to_json_dict())  # full validation pass
    except (TypeError, ValueError) as exc:
        raise SystemExit(f"config: {exc}")
    return cfg


def cmd_experiment(args: argparse.Namespace) -> int:
    experiment = SUBCOMMAND_TO_EXPERIMENT[args.command]
    cfg = default_config(experiment)
    cfg.data_source = "synthetic" if not os.environ.get("LLNN_DATA_DIR") else "emnist"
    cfg = apply_overrides(cfg, args)
    logger.info("experiment %s: %d seeds, data=%s, out=%s",
                experiment, len(cfg.seeds), cfg.data_source, cfg.output_dir)
    logs, _, agg = run_experiment(cfg)
    out = Path(cfg.output_dir) / experiment
    logger.info("wrote %d per-seed CSVs and %s", len(logs), out / "aggregate.json")
    return 0


def cmd_data_validate(args: argparse.Namespace) -> int:
    data_dir = args.data_dir or os.environ.get("LLNN_DATA_DIR")
    if not data_dir:
        raise SystemExit("no --data-dir given and $LLNN_DATA_DIR is unset")
    train, test = load_emnist_splits(data_dir)
    print(f"train: {train.count} images, {len(set(train.labels.tolist()))} classes")
    print(f"test:  {test.count} images")
    for c in ("0", "1", "2", "3", "O", "Z", "P", "Q", "R", "S"):
        n_train = int((train.labels == train.lookup(c)).sum())
        n_test = int((test.labels == test.lookup(c)).sum())
        print(f"  {c!r}: train {n_train}, test {n_test}")
    return 0


def cmd_synth_gen(args: argparse.Namespace) -> int:
    chars = [c for c in args.chars.split(",") if c]
    train, test = synthetic_glyphs(chars, args.per_char, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split, name in ((train, "train"), (test, "test")):
        (out / f"synthetic-{name}-images-idx3-ubyte").write_bytes(serialize_idx(split.pixels))
        (out / f"synthetic-{name}-labels-idx1-ubyte").write_bytes(serialize_idx(split.labels))
    (out / "synthetic-mapping.txt").write_text(
        "".join(f"{i} {ord(c)}\n" for c, i in sorted(train.char_to_class.items(),
                                                     key=lambda kv: kv[1]))
    )
    print(f"wrote {train.count} train / {test.count} test images to {out}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "data-validate":
            return cmd_data_validate(args)
        if args.command == "synth-gen":
            return cmd_synth_gen(args)
        return cmd_experiment(args)
    except FileNotFoundError as exc:
        logger.error("%s", exc)
        return 2
    except ValueError as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
