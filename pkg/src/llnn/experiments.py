"""Scripted experiment runs over seeds, with CSV/JSON export.

Six experiments cover the lifelong-learning properties on the character
sequence 0, 1, 2, 3, O, Z (positives against a shared P/Q/R/S negative
pool): e1 non-forgetting, e2 forward-transfer strategies, e3 the
forced-copy character sweep, e4 confusion reduction, e5 graceful
forgetting, e6 backward transfer.  Every run is a pure function of
(config, dataset bytes, seed).
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import (
    NEGATIVE_POOL,
    SYNTHETIC_CHARS,
    LabeledImages,
    TaskDataset,
    TaskSpec,
    build_task,
    load_emnist,
    synthetic_glyphs,
)
from .metrics import EpochRecord, RunLog, aggregate_runs, export_csv, write_aggregate_json
from .network import (
    ALL_RANDOM,
    ONE_ALWAYS,
    ONE_RANDOM,
    ONE_SIMILAR,
    ONE_WORST,
    ExpansionPolicy,
    LifelongNetwork,
    TransferStrategy,
    forward_all,
    new_network,
)
from .procedures import (
    TrainConfig,
    backward_transfer,
    evaluate_auc,
    graceful_forget,
    learn_new_task,
    measure_confusion,
    reduce_confusion,
    train,
)

EXPERIMENTS = ("e1", "e2", "e3", "e4", "e5", "e6")

BASE_SEQUENCE = ("0", "1", "2", "3", "O", "Z")

E2_STRATEGIES = (
    TransferStrategy(ALL_RANDOM),
    TransferStrategy(ONE_SIMILAR, 0.5),
    TransferStrategy(ONE_RANDOM),
    TransferStrategy(ONE_WORST),
)


@dataclass
class ExperimentConfig:
    experiment: str
    data_source: str = "synthetic"  # "emnist" | "synthetic"
    data_dir: str | None = None
    output_dir: str = "out"
    seeds: list[int] = field(default_factory=lambda: list(range(15)))
    train: TrainConfig = field(default_factory=TrainConfig)
    expansion: ExpansionPolicy = field(default_factory=lambda: ExpansionPolicy("constant", 25))
    strategy: TransferStrategy = field(default_factory=lambda: TransferStrategy(ALL_RANDOM))
    sequence: list[TaskSpec] = field(
        default_factory=lambda: [TaskSpec(c) for c in BASE_SEQUENCE]
    )
    gamma: float = 0.1
    confusion_expansion: list[int] = field(default_factory=lambda: [5, 10])
    forget_set: list[int] = field(default_factory=lambda: [0])
    backward_arms: list[str] = field(default_factory=lambda: ["nolinks", "O", "Z"])
    backward_second_pos: int = 50
    backward_second_neg_per_char: int = 100
    sweep_pos: int = 10
    sweep_neg_per_char: int = 100
    sweep_chars: list[str] | None = None  # e3; None = all mapped minus negatives
    e2_strategies: list[str] | None = None  # None = all four comparison strategies
    synthetic_train_per_char: int = 150
    jobs: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment: unknown id {self.experiment!r}, expected one of {EXPERIMENTS}")
        if self.data_source not in ("emnist", "synthetic"):
            raise ValueError(f"data_source: must be 'emnist' or 'synthetic', got {self.data_source!r}")
        if not self.seeds:
            raise ValueError("seeds: must be nonempty")
        if not self.sequence:
            raise ValueError("sequence: must be nonempty")
        if self.data_source == "emnist" and not self.data_dir:
            raise ValueError("data_dir: required when data_source is 'emnist'")

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["expansion"] = {"kind": self.expansion.kind, "n": self.expansion.n}
        d["strategy"] = {"kind": self.strategy.kind, "alpha": self.strategy.alpha}
        d["sequence"] = [
            {
                "positive_char": s.positive_char,
                "negative_chars": list(s.negative_chars),
                "n_pos_train": s.n_pos_train,
                "n_neg_train_per_char": s.n_neg_train_per_char,
            }
            for s in self.sequence
        ]
        d["train"] = {
            "batch_size": self.train.batch_size,
            "epochs": self.train.epochs,
            "shuffle_seed": self.train.shuffle_seed,
            "adam": asdict(self.train.adam),
        }
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "ExperimentConfig":
        from .nncore import AdamConfig

        d = dict(d)
        if "expansion" in d:
            d["expansion"] = ExpansionPolicy(**d["expansion"])
        if "strategy" in d:
            d["strategy"] = TransferStrategy(**d["strategy"])
        if "sequence" in d:
            d["sequence"] = [
                TaskSpec(
                    positive_char=s["positive_char"],
                    negative_chars=tuple(s.get("negative_chars", NEGATIVE_POOL)),
                    n_pos_train=s.get("n_pos_train", 100),
                    n_neg_train_per_char=s.get("n_neg_train_per_char", 100),
                )
                for s in d["sequence"]
            ]
        if "train" in d:
            t = dict(d["train"])
            if "adam" in t:
                t["adam"] = AdamConfig(**t["adam"])
            d["train"] = TrainConfig(**t)
        unknown = set(d) - {f.name for f in cls.__dataclass_fields__.values()}
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


def default_config(experiment: str, **overrides) -> ExperimentConfig:
    """The per-experiment defaults from the study protocol."""
    cfg = ExperimentConfig(experiment=experiment)
    if experiment == "e1":
        cfg.expansion = ExpansionPolicy("constant", 25)
        cfg.strategy = TransferStrategy(ALL_RANDOM)
    elif experiment in ("e2", "e3", "e4"):
        cfg.expansion = ExpansionPolicy("similarity_scaled", 25)
        cfg.strategy = TransferStrategy(ONE_SIMILAR, 0.5)
        if experiment == "e2":
            cfg.sequence = [
                TaskSpec(c, n_pos_train=n, n_neg_train_per_char=n)
                for c, n in zip(BASE_SEQUENCE, (100, 100, 100, 100, 10, 10))
            ]
        elif experiment == "e3":
            cfg.strategy = TransferStrategy(ALL_RANDOM)
            cfg.sequence = [TaskSpec(c) for c in BASE_SEQUENCE[:4]]
    elif experiment == "e5":
        cfg.expansion = ExpansionPolicy("constant", 25)
        cfg.sequence = [TaskSpec(c) for c in BASE_SEQUENCE[:4]]
    elif experiment == "e6":
        cfg.expansion = ExpansionPolicy("constant", 25)
        cfg.sequence = [TaskSpec("0", n_pos_train=10, n_neg_train_per_char=100)]
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


_EMNIST_CACHE: dict[str, tuple[LabeledImages, LabeledImages]] = {}


def _find(dirpath: Path, stem: str) -> Path:
    for suffix in ("", ".gz"):
        p = dirpath / (stem + suffix)
        if p.exists():
            return p
    raise FileNotFoundError(f"missing {stem}[.gz] under {dirpath}")


def load_emnist_splits(data_dir) -> tuple[LabeledImages, LabeledImages]:
    key = str(data_dir)
    if key not in _EMNIST_CACHE:
        d = Path(data_dir)
        mapping = d / "emnist-balanced-mapping.txt"
        if not mapping.exists():
            raise FileNotFoundError(f"missing emnist-balanced-mapping.txt under {d}")
        train = load_emnist(
            _find(d, "emnist-balanced-train-images-idx3-ubyte"),
            _find(d, "emnist-balanced-train-labels-idx1-ubyte"),
            mapping,
        )
        test = load_emnist(
            _find(d, "emnist-balanced-test-images-idx3-ubyte"),
            _find(d, "emnist-balanced-test-labels-idx1-ubyte"),
            mapping,
        )
        _EMNIST_CACHE[key] = (train, test)
    return _EMNIST_CACHE[key]


_SYNTH_CACHE: dict[tuple, tuple[LabeledImages, LabeledImages]] = {}


def synthetic_corpus(chars: tuple[str, ...], per_char: int, seed: int):
    """Memoized glyph corpus; the same (chars, size, seed) triple recurs
    across experiment variants within a seed."""
    key = (chars, per_char, seed)
    if key not in _SYNTH_CACHE:
        if len(_SYNTH_CACHE) > 32:
            _SYNTH_CACHE.clear()
        _SYNTH_CACHE[key] = synthetic_glyphs(list(chars), per_char, seed)
    return _SYNTH_CACHE[key]


class SeedData:
    """Per-seed task datasets drawn from one source corpus."""

    def __init__(self, cfg: ExperimentConfig, seed: int, extra_chars: tuple[str, ...] = ()):
        self.seed = seed
        chars = [s.positive_char for s in cfg.sequence] + list(extra_chars)
        if cfg.data_source == "emnist":
            self.train_split, self.test_split = load_emnist_splits(cfg.data_dir)
        else:
            pool = tuple(sorted(set(chars) | set(NEGATIVE_POOL)))
            self.train_split, self.test_split = synthetic_corpus(
                pool, cfg.synthetic_train_per_char, _derive_seed(seed, 0)
            )
        self.datasets: dict[int, TaskDataset] = {}
        self.specs: list[TaskSpec] = []

    def add_spec(self, spec: TaskSpec) -> int:
        """Registers the next task's spec and builds its dataset."""
        idx = len(self.specs)
        self.specs.append(spec)
        self.datasets[idx] = build_task(
            self.train_split, self.test_split, spec, _derive_seed(self.seed, 1, idx)
        )
        return idx

    def eval_fn(self, net: LifelongNetwork):
        return {t: evaluate_auc(net, t, self.datasets[t]) for t in range(net.n_tasks)}


def _predictions(net: LifelongNetwork, data: SeedData, task: int) -> np.ndarray:
    x, _ = data.datasets[task].test_xy()
    return forward_all(net, x)[:, task]


def _phase_cfg(cfg: ExperimentConfig, seed: int, counter: list[int]) -> TrainConfig:
    counter[0] += 1
    return replace(cfg.train, shuffle_seed=_derive_seed(seed, 2, counter[0]))


# --------------------------------------------------------------------------
# e1: continual learning with and without freezing


def run_e1(cfg: ExperimentConfig, seed: int) -> tuple[RunLog, dict]:
    log = RunLog(seed=seed)
    extras: dict = {"snapshots": {}, "final_auc": {}, "post_learning_auc": {}}
    for variant, freeze in (("frozen", True), ("unfrozen", False)):
        data = SeedData(cfg, seed)
        net = new_network(784, _derive_seed(seed, 3))
        counter = [0]
        snapshots: dict[int, list[np.ndarray]] = {}
        for spec in cfg.sequence:
            t = data.add_spec(spec)
            _, records = learn_new_task(
                net, data.datasets[t], cfg.strategy, cfg.expansion,
                _phase_cfg(cfg, seed, counter),
                freeze=freeze, eval_fn=data.eval_fn, phase=f"{variant}:learn:T{t}",
            )
            log.records.extend(records)
            for prev in range(net.n_tasks):
                snapshots.setdefault(prev, []).append(_predictions(net, data, prev))
        extras["snapshots"][variant] = snapshots
        extras["final_auc"][variant] = data.eval_fn(net)
        extras["post_learning_auc"][variant] = {
            t: log.final_auc(f"{variant}:learn:T{t}", t) for t in range(net.n_tasks)
        }
    return log, extras


# --------------------------------------------------------------------------
# e2: forward-transfer strategy comparison on few-shot tails


def run_e2(cfg: ExperimentConfig, seed: int) -> tuple[RunLog, dict]:
    log = RunLog(seed=seed)
    extras: dict = {"final_auc": {}}
    strategies = E2_STRATEGIES
    if cfg.e2_strategies:
        strategies = [s for s in E2_STRATEGIES if s.kind in cfg.e2_strategies]
    for strategy in strategies:
        data = SeedData(cfg, seed)
        net = new_network(784, _derive_seed(seed, 3))
        counter = [0]
        for spec in cfg.sequence:
            t = data.add_spec(spec)
            _, records = learn_new_task(
                net, data.datasets[t], strategy, cfg.expansion,
                _phase_cfg(cfg, seed, counter),
                eval_fn=data.eval_fn, phase=f"{strategy.kind}:learn:T{t}",
            )
            log.records.extend(records)
        extras["final_auc"][strategy.kind] = data.eval_fn(net)
    return log, extras


# --------------------------------------------------------------------------
# e3: forced copy vs random init for a swept fifth character


def sweep_characters(cfg: ExperimentConfig) -> list[str]:
    if cfg.sweep_chars is not None:
        return list(cfg.sweep_chars)
    if cfg.data_source == "emnist":
        mapped = sorted(load_emnist_splits(cfg.data_dir)[0].char_to_class)
    else:
        mapped = sorted(SYNTHETIC_CHARS)
    return [c for c in mapped if c not in NEGATIVE_POOL]


def run_e3(cfg: ExperimentConfig, seed: int) -> tuple[RunLog, dict]:
    chars = sweep_characters(cfg)
    log = RunLog(seed=seed)
    extras: dict = {"delta": {}}
    data = SeedData(cfg, seed, extra_chars=tuple(chars))
    base = new_network(784, _derive_seed(seed, 3))
    counter = [0]
    for spec in cfg.sequence:
        t = data.add_spec(spec)
        _, records = learn_new_task(
            base, data.datasets[t], cfg.strategy, cfg.expansion,
            _phase_cfg(cfg, seed, counter),
            eval_fn=data.eval_fn, phase=f"base:learn:T{t}",
        )
        log.records.extend(records)

    n_base = len(cfg.sequence)
    arms = {"onealways": TransferStrategy(ONE_ALWAYS), "allrandom": TransferStrategy(ALL_RANDOM)}
    for c in chars:
        spec = TaskSpec(c, n_pos_train=cfg.sweep_pos,
                        n_neg_train_per_char=cfg.sweep_neg_per_char)
        fifth = build_task(
            data.train_split, data.test_split, spec, _derive_seed(seed, 1, n_base)
        )
        tune_cfg = _phase_cfg(cfg, seed, counter)
        finals = {}
        for arm, strategy in arms.items():
            net = base.clone()
            data.datasets[n_base] = fifth
            t, records = learn_new_task(
                net, fifth, strategy, cfg.expansion, tune_cfg,
                eval_fn=None, phase=f"sweep:{c}:{arm}",
            )
            final = evaluate_auc(net, t, fifth)
            finals[arm] = final
            rec = EpochRecord(phase=f"sweep:{c}:{arm}", epoch=cfg.train.epochs)
            rec.per_task_auc = {t: final}
            log.add(rec)
        data.datasets.pop(n_base, None)
        delta = finals["onealways"] - finals["allrandom"]
        extras["delta"][c] = delta
        rec = EpochRecord(phase=f"sweep:{c}:delta", epoch=cfg.train.epochs)
        rec.per_task_auc = {n_base: delta}
        log.add(rec)
    return log, extras


# --------------------------------------------------------------------------
# e4: two-stage confusion reduction for O and Z


def run_e4(cfg: ExperimentConfig, seed: int) -> tuple[RunLog, dict]:
    log = RunLog(seed=seed)
    extras: dict = {amount: {} for amount in cfg.confusion_expansion}
    reduce_after = {"O", "Z"}
    for amount in cfg.confusion_expansion:
        data = SeedData(cfg, seed)
        net = new_network(784, _derive_seed(seed, 3))
        counter = [0]
        for spec in cfg.sequence:
            t = data.add_spec(spec)
            _, records = learn_new_task(
                net, data.datasets[t], cfg.strategy, cfg.expansion,
                _phase_cfg(cfg, seed, counter),
                eval_fn=data.eval_fn, phase=f"exp{amount}:learn:T{t}",
            )
            log.records.extend(records)
            if spec.positive_char not in reduce_after:
                continue
            j = t
            partners = {
                i: measure_confusion(net, i, j, data.datasets[i].test_pos,
                                     data.datasets[j].test_pos)
                for i in range(j)
            }
            i = min(partners, key=lambda k: (-partners[k], k))
            report, records = reduce_confusion(
                net, i, j, cfg.gamma, amount,
                data.datasets[i], data.datasets[j],
                _phase_cfg(cfg, seed, counter),
                eval_fn=data.eval_fn,
                phase_prefix=f"exp{amount}:confusion:{spec.positive_char}",
            )
            log.records.extend(records)
            prefix = f"exp{amount}:confusion:{spec.positive_char}"
            log.add_confusion(f"{prefix}:initial", i, j, report.initial)
            log.add_confusion(f"{prefix}:post_stage1", i, j, report.post_stage1)
            log.add_confusion(f"{prefix}:post_stage2", i, j, report.post_stage2)
            extras[amount][spec.positive_char] = report
    return log, extras


# --------------------------------------------------------------------------
# e5: graceful forgetting to rescue a capacity-starved task


def run_e5(cfg: ExperimentConfig, seed: int) -> tuple[RunLog, dict]:
    log = RunLog(seed=seed)
    data = SeedData(cfg, seed)
    net = new_network(784, _derive_seed(seed, 3))
    counter = [0]
    for spec in cfg.sequence[:-1]:
        t = data.add_spec(spec)
        _, records = learn_new_task(
            net, data.datasets[t], cfg.strategy, cfg.expansion,
            _phase_cfg(cfg, seed, counter),
            eval_fn=data.eval_fn, phase=f"learn:T{t}",
        )
        log.records.extend(records)

    starved = data.add_spec(cfg.sequence[-1])
    _, records = learn_new_task(
        net, data.datasets[starved], cfg.strategy, ExpansionPolicy("constant", 1),
        _phase_cfg(cfg, seed, counter),
        eval_fn=data.eval_fn, phase="pre-forget",
    )
    log.records.extend(records)

    graceful_forget(net, set(cfg.forget_set))
    x, y = data.datasets[starved].train_xy()
    records = train(
        net, {starved}, x, {starved: y}, _phase_cfg(cfg, seed, counter),
        eval_fn=data.eval_fn, phase="post-forget", start_epoch=cfg.train.epochs + 1,
    )
    log.records.extend(records)

    extras = {
        "pre_forget_auc": {t: log.final_auc("pre-forget", t) for t in range(net.n_tasks)},
        "post_forget_auc": {t: log.final_auc("post-forget", t) for t in range(net.n_tasks)},
    }
    return log, extras


# --------------------------------------------------------------------------
# e6: backward transfer into a few-shot first task


def run_e6(cfg: ExperimentConfig, seed: int) -> tuple[RunLog, dict]:
    log = RunLog(seed=seed)
    extras: dict = {}
    for arm in cfg.backward_arms:
        second_char = "O" if arm == "nolinks" else arm
        data = SeedData(cfg, seed, extra_chars=(second_char,))
        net = new_network(784, _derive_seed(seed, 3))
        counter = [0]
        t0 = data.add_spec(cfg.sequence[0])
        _, records = learn_new_task(
            net, data.datasets[t0], cfg.strategy, cfg.expansion,
            _phase_cfg(cfg, seed, counter),
            eval_fn=data.eval_fn, phase=f"{arm}:learn:T0",
        )
        log.records.extend(records)

        t1 = data.add_spec(TaskSpec(
            second_char, n_pos_train=cfg.backward_second_pos,
            n_neg_train_per_char=cfg.backward_second_neg_per_char,
        ))
        _, records = learn_new_task(
            net, data.datasets[t1], cfg.strategy, cfg.expansion,
            _phase_cfg(cfg, seed, counter),
            eval_fn=data.eval_fn, phase=f"{arm}:learn:T1",
        )
        log.records.extend(records)

        pre_link = evaluate_auc(net, t0, data.datasets[t0])
        rec = EpochRecord(phase=f"{arm}:pre-link", epoch=0)
        rec.per_task_auc = {t0: pre_link}
        log.add(rec)

        records = backward_transfer(
            net, t0, t1, data.datasets[t0], _phase_cfg(cfg, seed, counter),
            eval_fn=data.eval_fn, add_links=(arm != "nolinks"), phase=f"{arm}:tune",
        )
        log.records.extend(records)
        extras[arm] = {
            "pre_link": pre_link,
            "epoch0": records[0].per_task_auc[t0],
            "final": records[-1].per_task_auc[t0],
        }
    return log, extras


_RUNNERS = {
    "e1": run_e1,
    "e2": run_e2,
    "e3": run_e3,
    "e4": run_e4,
    "e5": run_e5,
    "e6": run_e6,
}


def run_seed(cfg: ExperimentConfig, seed: int) -> tuple[RunLog, dict]:
    return _RUNNERS[cfg.experiment](cfg, seed)


def _run_seed_entry(args):
    cfg_dict, seed = args
    cfg = ExperimentConfig.from_json_dict(cfg_dict)
    return run_seed(cfg, seed)


def run_experiment(cfg: ExperimentConfig, write_files: bool = True):
    """All seeds of one experiment; returns (logs, extras_by_seed, aggregate)."""
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(
                _run_seed_entry, [(cfg.to_json_dict(), s) for s in cfg.seeds]
            ))
    else:
        results = [run_seed(cfg, s) for s in cfg.seeds]
    logs = [r[0] for r in results]
    extras = {seed: r[1] for seed, r in zip(cfg.seeds, results)}
    agg = aggregate_runs(cfg.experiment, logs)

    if write_files:
        out = Path(cfg.output_dir) / cfg.experiment
        out.mkdir(parents=True, exist_ok=True)
        for log in logs:
            export_csv(log, out / f"seed_{log.seed}.csv")
        write_aggregate_json(agg, out / "aggregate.json")
        (out / "config.json").write_text(json.dumps(cfg.to_json_dict(), indent=1, sort_keys=True) + "\n")
    return logs, extras, agg
