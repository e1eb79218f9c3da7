"""Evaluation and run logging: ROC-AUC, cross-head prediction, CSV/JSON export."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import LifelongNetwork, forward_all


def auc(scores, labels) -> float:
    """Pairwise Mann-Whitney AUC; ties between a positive and negative score 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("AUC needs at least one positive and one negative label")
    diff = pos[:, None] - neg[None, :]
    wins = np.count_nonzero(diff > 0) + 0.5 * np.count_nonzero(diff == 0)
    return float(wins / (len(pos) * len(neg)))


def predict_task(net: LifelongNetwork, x) -> int:
    """Index of the most confident head; ties go to the lowest task index."""
    if net.n_tasks == 0:
        raise ValueError("network has no tasks")
    probs = forward_all(net, x)
    if probs.ndim == 1:
        return int(np.argmax(probs))
    return np.argmax(probs, axis=1)


@dataclass
class EpochRecord:
    phase: str
    epoch: int
    per_task_auc: dict[int, float] = field(default_factory=dict)
    per_task_loss: dict[int, float] = field(default_factory=dict)


@dataclass
class RunLog:
    seed: int
    records: list[EpochRecord] = field(default_factory=list)
    confusions: list[tuple[str, int, int, float]] = field(default_factory=list)  # (phase, i, j, value)

    def add(self, record: EpochRecord) -> None:
        self.records.append(record)

    def add_confusion(self, phase: str, i: int, j: int, value: float) -> None:
        self.confusions.append((phase, i, j, value))

    def rows(self):
        """Flatten to (phase, epoch, task, metric, value) in recording order."""
        for rec in self.records:
            for task in sorted(rec.per_task_auc):
                yield (rec.phase, rec.epoch, task, "auc", rec.per_task_auc[task])
            for task in sorted(rec.per_task_loss):
                yield (rec.phase, rec.epoch, task, "loss", rec.per_task_loss[task])
        for stage, (phase, i, j, value) in enumerate(self.confusions):
            yield (phase, stage, j, "confusion", value)

    def final_auc(self, phase: str, task: int) -> float:
        for rec in reversed(self.records):
            if rec.phase == phase and task in rec.per_task_auc:
                return rec.per_task_auc[task]
        raise KeyError(f"no AUC recorded for task {task} in phase {phase!r}")


CSV_HEADER = "seed,phase,epoch,task,metric,value"


def export_csv(log: RunLog, path) -> None:
    """One row per measurement, 6 fixed decimals, byte-deterministic."""
    path = Path(path)
    lines = [CSV_HEADER]
    for phase, epoch, task, metric, value in log.rows():
        lines.append(f"{log.seed},{phase},{epoch},{task},{metric},{value:.6f}")
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write run log to {path}: {exc}") from exc


def aggregate_runs(experiment: str, logs: list[RunLog]) -> dict:
    """Seed-mean and stddev per (phase, epoch, task, metric), in stable order."""
    series: dict[tuple, list[float]] = {}
    order: list[tuple] = []
    for log in sorted(logs, key=lambda lg: lg.seed):
        for phase, epoch, task, metric, value in log.rows():
            key = (phase, epoch, task, metric)
            if key not in series:
                series[key] = []
                order.append(key)
            series[key].append(value)
    entries = []
    for key in order:
        vals = np.asarray(series[key])
        phase, epoch, task, metric = key
        entries.append({
            "phase": phase,
            "epoch": epoch,
            "task": task,
            "metric": metric,
            "mean": round(float(vals.mean()), 6),
            "stddev": round(float(vals.std()), 6),
        })
    return {"experiment": experiment, "n_seeds": len(logs), "series": entries}


def write_aggregate_json(aggregate: dict, path) -> None:
    Path(path).write_text(json.dumps(aggregate, indent=1, sort_keys=True) + "\n")
