"""Lifelong-learning procedures over a columnar network.

Everything here follows one pattern: pick which consolidation entries are
allowed to move, train some heads on some data, then freeze back.  The
network never sees earlier tasks' data while learning a new task; stored
samples reappear only for confusion reduction, backward transfer, and the
final joint refinement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import TaskDataset
from .metrics import EpochRecord, auc
from .nncore import FROZEN, AdamConfig, bce_loss
from .network import (
    ExpansionPolicy,
    LifelongNetwork,
    TransferStrategy,
    add_backward_links,
    add_head_segment,
    add_task,
    apply_gradients,
    backprop,
    compute_similarity,
    decide_transfer,
    expand_column,
    expansion_size,
    forward_all,
    freeze_all,
    set_consolidation,
)


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 10
    adam: AdamConfig = field(default_factory=AdamConfig)
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1: {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1: {self.epochs}")


def evaluate_auc(net: LifelongNetwork, task: int, dataset: TaskDataset) -> float:
    """Test AUC of one head on its own task's test split."""
    x, y = dataset.test_xy()
    probs = forward_all(net, x)[:, task]
    return auc(probs, y)


def train(
    net: LifelongNetwork,
    active_tasks: set[int] | frozenset[int],
    x: np.ndarray,
    y_by_task: dict[int, np.ndarray],
    cfg: TrainConfig,
    eval_fn=None,
    phase: str = "train",
    start_epoch: int = 1,
) -> list[EpochRecord]:
    """Minibatch Adam on the summed cross-entropy of the active heads.

    Gradients flow into every block, but frozen entries are masked inside
    the optimizer, so whatever is frozen when this is called stays put.
    """
    if not active_tasks:
        raise ValueError("active_tasks must be nonempty")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise ValueError("training data must be nonempty")
    active = sorted(active_tasks)
    labels = {t: np.asarray(y_by_task[t], dtype=np.float64) for t in active}

    rng = np.random.default_rng(cfg.shuffle_seed)
    records = []
    for e in range(cfg.epochs):
        order = rng.permutation(n)
        loss_sums = {t: 0.0 for t in active}
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            bx = x[idx]
            by = {t: labels[t][idx] for t in active}
            grads = backprop(net, bx, by, set(active), skip_frozen=True)
            apply_gradients(net, grads, cfg.adam)
            probs = forward_all(net, bx)
            for t in active:
                loss_sums[t] += bce_loss(probs[:, t], by[t]) * len(idx)
        rec = EpochRecord(phase=phase, epoch=start_epoch + e)
        rec.per_task_loss = {t: loss_sums[t] / n for t in active}
        if eval_fn is not None:
            rec.per_task_auc = eval_fn(net)
        records.append(rec)
    return records


def learn_new_task(
    net: LifelongNetwork,
    task_data: TaskDataset,
    strategy: TransferStrategy,
    policy: ExpansionPolicy,
    cfg: TrainConfig,
    freeze: bool = True,
    eval_fn=None,
    phase: str | None = None,
) -> tuple[int, list[EpochRecord]]:
    """Grow the network for one new task and train it on that task only.

    With ``freeze`` (the default) every pre-existing entry is frozen first,
    so earlier tasks' outputs cannot move.  Without it, transfer links let
    the new task's gradients reshape earlier columns: the forgetting case.
    """
    if len(task_data.train_pos) == 0 or len(task_data.train_neg) == 0:
        raise ValueError("task data needs nonempty train positives and negatives")
    sims = [
        compute_similarity(net, t, task_data.train_pos) for t in range(net.n_tasks)
    ]
    n_units = expansion_size(policy, sims)
    decision = decide_transfer(strategy, sims, net.rng)
    if freeze:
        freeze_all(net)
    task = add_task(net, n_units, decision)
    x, y = task_data.train_xy()
    records = train(
        net, {task}, x, {task: y}, cfg,
        eval_fn=eval_fn, phase=phase or f"learn:T{task}",
    )
    return task, records


def measure_confusion(
    net: LifelongNetwork, i: int, j: int, pos_i: np.ndarray, pos_j: np.ndarray
) -> float:
    """Fraction of the two tasks' positives routed to each other under argmax."""
    if i == j:
        raise ValueError("confusion needs two distinct tasks")
    if len(pos_i) == 0 or len(pos_j) == 0:
        raise ValueError("both positive sample sets must be nonempty")
    pred_i = np.argmax(forward_all(net, pos_i), axis=1)
    pred_j = np.argmax(forward_all(net, pos_j), axis=1)
    crossed = np.count_nonzero(pred_i == j) + np.count_nonzero(pred_j == i)
    return crossed / (len(pos_i) + len(pos_j))


@dataclass
class ConfusionReport:
    initial: float
    post_stage1: float
    post_stage2: float


def _set_confusion_flexibility(net: LifelongNetwork, i: int, j: int, value: float) -> None:
    set_consolidation(net, "head", value, i)
    set_consolidation(net, "head", value, j)
    set_consolidation(net, "column", value, j)
    set_consolidation(net, "transfer_into", value, j)


def reduce_confusion(
    net: LifelongNetwork,
    i: int,
    j: int,
    gamma: float,
    expansion_amount: int,
    data_i: TaskDataset,
    data_j: TaskDataset,
    cfg: TrainConfig,
    eval_fn=None,
    phase_prefix: str = "confusion",
) -> tuple[ConfusionReport, list[EpochRecord]]:
    """Two-stage pairwise confusion reduction between tasks ``i`` < ``j``.

    Stage 1 fine-tunes head ``i`` plus everything belonging to ``j`` on both
    tasks' stored training data.  If confusion stays at or above ``gamma``,
    stage 2 appends capacity to ``j``'s column, exposes the new units to
    both heads, and tunes again.  Tasks outside the pair keep their
    consolidation state and their predictions.
    """
    if not 0 <= i < j < net.n_tasks:
        raise ValueError(f"need an earlier task i and later task j, got ({i}, {j})")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1]: {gamma}")
    if expansion_amount < 0:
        raise ValueError(f"expansion_amount must be >= 0: {expansion_amount}")

    initial = measure_confusion(net, i, j, data_i.test_pos, data_j.test_pos)
    post1 = post2 = initial
    records: list[EpochRecord] = []
    if initial < gamma:
        return ConfusionReport(initial, post1, post2), records

    xi, yi = data_i.train_xy()
    xj, yj = data_j.train_xy()
    x = np.concatenate([xi, xj])
    # each sample carries labels for both heads; the other task's samples
    # (positives included) count as negatives for this head
    y = {
        i: np.concatenate([yi, np.zeros(len(xj))]),
        j: np.concatenate([np.zeros(len(xi)), yj]),
    }

    _set_confusion_flexibility(net, i, j, 0.0)
    records += train(net, {i, j}, x, y, cfg, eval_fn=eval_fn, phase=f"{phase_prefix}:stage1")
    _set_confusion_flexibility(net, i, j, FROZEN)
    post1 = post2 = measure_confusion(net, i, j, data_i.test_pos, data_j.test_pos)
    if post1 < gamma or expansion_amount == 0:
        return ConfusionReport(initial, post1, post2), records

    n2_old = net.columns[j].n2
    expand_column(net, j, expansion_amount)
    add_head_segment(net, i, j, n2_old, n2_old + expansion_amount)
    add_head_segment(net, j, j, n2_old, n2_old + expansion_amount)
    _set_confusion_flexibility(net, i, j, 0.0)
    records += train(net, {i, j}, x, y, cfg, eval_fn=eval_fn, phase=f"{phase_prefix}:stage2")
    _set_confusion_flexibility(net, i, j, FROZEN)
    post2 = measure_confusion(net, i, j, data_i.test_pos, data_j.test_pos)
    return ConfusionReport(initial, post1, post2), records


def graceful_forget(net: LifelongNetwork, forget: set[int]) -> None:
    """Drop consolidation to zero on the named tasks' weights.

    Covers each task's column, head, and outgoing transfer weights, so a
    later task training against them can repurpose that capacity.  Values
    themselves do not move here.
    """
    if not forget:
        raise ValueError("forget set must be nonempty")
    for t in sorted(forget):
        if not 0 <= t < net.n_tasks:
            raise ValueError(f"unknown task {t}")
    for t in sorted(forget):
        set_consolidation(net, "column", 0.0, t)
        set_consolidation(net, "head", 0.0, t)
        set_consolidation(net, "transfer_out_of", 0.0, t)


def backward_transfer(
    net: LifelongNetwork,
    old: int,
    new: int,
    old_data: TaskDataset,
    cfg: TrainConfig,
    eval_fn=None,
    add_links: bool = True,
    phase: str = "tune",
) -> list[EpochRecord]:
    """Fine-tune an earlier head, optionally reading the newer task's units.

    Only the old task's head block is trainable; with links, that block has
    just gained a random segment over the newer column, so performance dips
    before tuning recovers it.  Epoch 0 records the post-link, pre-tuning
    state.
    """
    if not 0 <= old < new < net.n_tasks:
        raise ValueError(f"need old < new among learned tasks, got ({old}, {new})")
    if add_links:
        add_backward_links(net, new, old)
    freeze_all(net)
    set_consolidation(net, "head", 0.0, old)

    records = [EpochRecord(phase=phase, epoch=0)]
    if eval_fn is not None:
        records[0].per_task_auc = eval_fn(net)
    x, y = old_data.train_xy()
    records += train(net, {old}, x, {old: y}, cfg, eval_fn=eval_fn, phase=phase)
    return records


def refine_all(
    net: LifelongNetwork,
    all_data: dict[int, TaskDataset],
    cfg: TrainConfig,
    eval_fn=None,
    phase: str = "refine",
) -> list[EpochRecord]:
    """Unfreeze everything and train all heads jointly on pooled stored data."""
    if net.n_tasks == 0:
        raise ValueError("nothing to refine: no tasks learned")
    missing = [t for t in range(net.n_tasks) if t not in all_data]
    if missing:
        raise ValueError(f"refinement needs data for every task; missing {missing}")

    xs, spans = [], []
    for t in range(net.n_tasks):
        x_t, y_t = all_data[t].train_xy()
        xs.append(x_t)
        spans.append(y_t)
    x = np.concatenate(xs)
    offsets = np.cumsum([0] + [len(a) for a in xs])
    y = {}
    for t in range(net.n_tasks):
        col = np.zeros(len(x))
        col[offsets[t]:offsets[t + 1]] = spans[t]
        y[t] = col

    set_consolidation(net, "all", 0.0)
    return train(net, set(range(net.n_tasks)), x, y, cfg, eval_fn=eval_fn, phase=phase)
