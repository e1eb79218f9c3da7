"""Columnar network grown one task at a time.

Each task owns a column of hidden units (two ReLU layers) and a sigmoid
head.  Transfer links carry an earlier column's first-layer output into a
later column's second layer; heads read the last hidden layer of their own
column plus any transfer segments (forward from earlier columns, backward
from later ones).  Per-entry consolidation on every block controls which
parts of the network each training phase may move.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .nncore import (
    FROZEN,
    AdamConfig,
    WeightBlock,
    adam_step,
    sigmoid,
)

HIDDEN_DEPTH = 2

ALL_RANDOM = "all_random"
ONE_SIMILAR = "one_similar"
ONE_RANDOM = "one_random"
ONE_WORST = "one_worst"
ONE_ALWAYS = "one_always"

_STRATEGIES = (ALL_RANDOM, ONE_SIMILAR, ONE_RANDOM, ONE_WORST, ONE_ALWAYS)

CONSTANT = "constant"
SIMILARITY_SCALED = "similarity_scaled"


@dataclass(frozen=True)
class TransferStrategy:
    kind: str
    alpha: float = 0.5

    def __post_init__(self):
        if self.kind not in _STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}, expected one of {_STRATEGIES}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1]: {self.alpha}")


@dataclass(frozen=True)
class ExpansionPolicy:
    kind: str
    n: int

    def __post_init__(self):
        if self.kind not in (CONSTANT, SIMILARITY_SCALED):
            raise ValueError(f"unknown expansion policy {self.kind!r}")
        if self.n < 0:
            raise ValueError(f"unit count must be >= 0: {self.n}")


@dataclass(frozen=True)
class TransferDecision:
    enabled_sources: frozenset[int]
    copy_source: int | None


@dataclass
class Segment:
    """A head input: units [lo, hi) of ``source`` column's last hidden layer."""

    source: int
    lo: int
    hi: int

    @property
    def width(self) -> int:
        return self.hi - self.lo


@dataclass
class Column:
    task: int
    layer1: WeightBlock  # (n1, input_dim + 1), from the raw input
    layer2: WeightBlock  # (n2, n1 + 1), from the column's own first layer

    @property
    def n1(self) -> int:
        return self.layer1.n_out

    @property
    def n2(self) -> int:
        return self.layer2.n_out


@dataclass
class LinkGroup:
    """Transfer weights from ``source`` column's layer 1 into ``dest``'s layer 2."""

    source: int
    dest: int
    block: WeightBlock  # (dest.n2, source.n1), no bias column of its own
    enabled: bool = True


@dataclass
class Head:
    task: int
    segments: list[Segment]
    block: WeightBlock  # (1, total segment width + 1)

    def segment_slices(self) -> list[tuple[Segment, slice]]:
        """Column ranges of the head block covered by each segment."""
        out, pos = [], 0
        for seg in self.segments:
            out.append((seg, slice(pos, pos + seg.width)))
            pos += seg.width
        return out


@dataclass
class LifelongNetwork:
    input_dim: int
    rng: np.random.Generator
    hidden_depth: int = HIDDEN_DEPTH  # the column topology is fixed at two layers
    columns: list[Column] = field(default_factory=list)
    link_groups: list[LinkGroup] = field(default_factory=list)
    heads: list[Head] = field(default_factory=list)

    @property
    def n_tasks(self) -> int:
        return len(self.columns)

    def all_blocks(self):
        for col in self.columns:
            yield col.layer1
            yield col.layer2
        for grp in self.link_groups:
            yield grp.block
        for head in self.heads:
            yield head.block

    def block_map(self) -> dict[str, WeightBlock]:
        return {blk.name: blk for blk in self.all_blocks()}

    def clone(self) -> "LifelongNetwork":
        rng = np.random.default_rng()
        rng.bit_generator.state = self.rng.bit_generator.state
        net = LifelongNetwork(input_dim=self.input_dim, rng=rng)
        for col in self.columns:
            net.columns.append(Column(col.task, col.layer1.copy(), col.layer2.copy()))
        for grp in self.link_groups:
            net.link_groups.append(replace(grp, block=grp.block.copy()))
        for head in self.heads:
            segs = [replace(s) for s in head.segments]
            net.heads.append(Head(head.task, segs, head.block.copy()))
        return net


def new_network(input_dim: int, seed: int) -> LifelongNetwork:
    if input_dim <= 0:
        raise ValueError(f"input_dim must be positive: {input_dim}")
    return LifelongNetwork(input_dim=input_dim, rng=np.random.default_rng(seed))


def _glorot(rng: np.random.Generator, n_out: int, n_in: int, with_bias: bool) -> np.ndarray:
    fan = n_in + n_out
    s = math.sqrt(6.0 / fan) if fan > 0 else 0.0
    w = rng.uniform(-s, s, size=(n_out, n_in))
    if with_bias:
        w = np.concatenate([w, np.zeros((n_out, 1))], axis=1)
    return w


def compute_similarity(net: LifelongNetwork, prev: int, positives: np.ndarray) -> float:
    """Mean probability the existing head for ``prev`` assigns to the samples."""
    if prev >= net.n_tasks:
        raise ValueError(f"task {prev} has not been learned yet")
    positives = np.atleast_2d(np.asarray(positives, dtype=np.float64))
    if positives.shape[0] == 0:
        raise ValueError("similarity needs at least one positive sample")
    probs = forward_all(net, positives)
    return float(np.mean(probs[:, prev]))


def expansion_size(policy: ExpansionPolicy, sims: list[float]) -> int:
    for s in sims:
        if not 0.0 <= s <= 1.0:
            raise ValueError(f"similarity {s} outside [0, 1]")
    if policy.kind == CONSTANT:
        return policy.n
    if not sims:
        return policy.n
    # round half up, so e.g. 25 * (1 - 0.5) -> 13
    return int(math.floor(policy.n * (1.0 - max(sims)) + 0.5))


def decide_transfer(
    strategy: TransferStrategy, sims: list[float], rng: np.random.Generator
) -> TransferDecision:
    n_prev = len(sims)
    if n_prev == 0:
        return TransferDecision(frozenset(), None)
    # ties in argmax/argmin resolve to the lowest task index
    best = int(np.argmax(sims))
    worst = int(np.argmin(sims))

    if strategy.kind == ALL_RANDOM:
        return TransferDecision(frozenset(range(n_prev)), None)
    if strategy.kind == ONE_SIMILAR:
        enabled = frozenset(i for i, s in enumerate(sims) if s > strategy.alpha)
        copy = best if sims[best] > strategy.alpha else None
        return TransferDecision(enabled, copy)
    if strategy.kind == ONE_RANDOM:
        enabled = frozenset(i for i, s in enumerate(sims) if s > 0.5)
        copy = int(rng.integers(n_prev))
        return TransferDecision(enabled, copy)
    if strategy.kind == ONE_WORST:
        return TransferDecision(frozenset({worst}), worst)
    # ONE_ALWAYS: gate intermediate links at 0.5, copy from the best regardless
    enabled = frozenset(i for i, s in enumerate(sims) if s > 0.5)
    return TransferDecision(enabled, best)


def add_task(net: LifelongNetwork, n_units: int, decision: TransferDecision) -> int:
    """Append a column, its transfer links, and its head; returns the task id.

    New blocks start unfrozen (b = 0) with targets at their initial values.
    If ``decision.copy_source`` is set, the head's weights over that source's
    last hidden layer (and the head bias) are copied from the source head.
    """
    if n_units < 0:
        raise ValueError(f"n_units must be >= 0: {n_units}")
    task = net.n_tasks
    for src in decision.enabled_sources:
        if src >= task:
            raise ValueError(f"transfer source {src} is not an earlier task")
    if decision.copy_source is not None and decision.copy_source >= task:
        raise ValueError(f"copy source {decision.copy_source} is not an earlier task")
    if n_units == 0 and not decision.enabled_sources and decision.copy_source is None:
        raise ValueError("a zero-unit column needs at least one transfer or copy source")

    rng = net.rng
    l1 = WeightBlock(f"c{task}.l1", _glorot(rng, n_units, net.input_dim, True))
    l2 = WeightBlock(f"c{task}.l2", _glorot(rng, n_units, n_units, True))
    net.columns.append(Column(task, l1, l2))

    enabled = sorted(decision.enabled_sources)
    for src in enabled:
        src_n1 = net.columns[src].n1
        blk = WeightBlock(f"link.c{src}->c{task}", _glorot(rng, n_units, src_n1, False))
        net.link_groups.append(LinkGroup(source=src, dest=task, block=blk))

    segments = [Segment(task, 0, n_units)]
    segments += [Segment(src, 0, net.columns[src].n2) for src in enabled]
    copy_src = decision.copy_source
    if copy_src is not None and copy_src not in decision.enabled_sources:
        segments.append(Segment(copy_src, 0, net.columns[copy_src].n2))

    width = sum(s.width for s in segments)
    head = Head(task, segments, WeightBlock(f"head{task}", _glorot(rng, 1, width, True)))
    if copy_src is not None:
        _copy_head_weights(net, head, copy_src)
    net.heads.append(head)
    return task


def _copy_head_weights(net: LifelongNetwork, head: Head, copy_src: int) -> None:
    src_head = net.heads[copy_src]
    dst_seg, dst_slice = next(
        (seg, sl) for seg, sl in head.segment_slices()
        if seg.source == copy_src and seg.lo == 0
    )
    # the source head's weights over its own column may be split across
    # segments if that column was expanded; assemble them unit by unit
    own = head.block.values[0, dst_slice].copy()
    for seg, sl in src_head.segment_slices():
        if seg.source == copy_src and seg.hi <= dst_seg.hi:
            own[seg.lo:seg.hi] = src_head.block.values[0, sl]
    head.block.values[0, dst_slice] = own
    head.block.values[:, -1] = src_head.block.values[:, -1]
    head.block.targets = head.block.values.copy()


def add_backward_links(net: LifelongNetwork, from_task: int, to_task: int) -> None:
    """Feed ``from_task``'s last hidden layer into ``to_task``'s head.

    The head block gains a random-initialized, unfrozen segment; the rest of
    the head (values, consolidation, Adam state) is untouched.
    """
    if from_task <= to_task:
        raise ValueError(
            f"backward links must run from a later task to an earlier one "
            f"({from_task} -> {to_task})"
        )
    if from_task >= net.n_tasks or to_task < 0:
        raise ValueError(f"unknown task pair ({from_task}, {to_task})")
    head = net.heads[to_task]
    if any(seg.source == from_task for seg in head.segments):
        raise ValueError(f"head {to_task} already reads from task {from_task}")
    n2 = net.columns[from_task].n2
    head.segments.append(Segment(from_task, 0, n2))
    head.block.grow(_segment_init(net.rng, head.block.n_in, n2), axis=1, before_bias=True)


def _segment_init(rng: np.random.Generator, old_width: int, seg_width: int) -> np.ndarray:
    """Init for a head segment appended to a block of ``old_width`` inputs."""
    fan = old_width + seg_width + 1
    s = math.sqrt(6.0 / fan) if fan > 0 else 0.0
    return rng.uniform(-s, s, size=(1, seg_width))


def expand_column(net: LifelongNetwork, task: int, k: int) -> None:
    """Append ``k`` units to each hidden layer of ``task``'s column.

    New first-layer units read the raw input; the second layer grows by
    ``k`` units reading the full (grown) first layer.  Old units gain
    zero-valued, trainable weights over the new inputs, so every existing
    forward output is unchanged until training moves something.  Incoming
    transfer links grow zero rows so their output width keeps matching.
    The new last-hidden units are exposed to heads via ``Segment(task,
    n2_old, n2_old + k)`` which callers attach with ``add_head_segment``.
    """
    if not 0 <= task < net.n_tasks:
        raise ValueError(f"unknown task {task}")
    if k <= 0:
        raise ValueError(f"expansion amount must be positive: {k}")
    col = net.columns[task]
    n1, n2 = col.n1, col.n2
    rng = net.rng

    col.layer1.grow(_glorot(rng, k, net.input_dim, True), axis=0)
    # old rows: zero weights over the k new inputs; new rows: random over all
    col.layer2.grow(np.zeros((n2, k)), axis=1, before_bias=True)
    col.layer2.grow(_glorot(rng, k, n1 + k, True), axis=0)
    for grp in net.link_groups:
        if grp.dest == task:
            grp.block.grow(np.zeros((k, grp.block.values.shape[1])), axis=0)


def add_head_segment(net: LifelongNetwork, head_task: int, source: int, lo: int, hi: int) -> None:
    """Widen a head with a random-initialized segment over column units [lo, hi)."""
    head = net.heads[head_task]
    head.segments.append(Segment(source, lo, hi))
    head.block.grow(_segment_init(net.rng, head.block.n_in, hi - lo), axis=1, before_bias=True)


class ForwardCache:
    """Per-layer pre-activations and activations for one batch."""

    def __init__(self):
        self.z1: list[np.ndarray] = []
        self.a1: list[np.ndarray] = []
        self.z2: list[np.ndarray] = []
        self.a2: list[np.ndarray] = []
        self.zh: list[np.ndarray] = []
        self.probs: np.ndarray | None = None


def _forward_cached(net: LifelongNetwork, x: np.ndarray) -> ForwardCache:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != net.input_dim:
        raise ValueError(f"expected input of length {net.input_dim}, got {x.shape[1]}")
    batch = x.shape[0]
    cache = ForwardCache()

    for col in net.columns:
        z1 = x @ col.layer1.weights.T + col.layer1.bias
        a1 = np.maximum(z1, 0.0)
        z2 = a1 @ col.layer2.weights.T + col.layer2.bias
        for grp in net.link_groups:
            if grp.dest == col.task and grp.enabled:
                z2 = z2 + cache.a1[grp.source] @ grp.block.values.T
        a2 = np.maximum(z2, 0.0)
        cache.z1.append(z1)
        cache.a1.append(a1)
        cache.z2.append(z2)
        cache.a2.append(a2)

    probs = np.empty((batch, net.n_tasks))
    for head in net.heads:
        zh = np.zeros(batch)
        for seg, sl in head.segment_slices():
            zh += cache.a2[seg.source][:, seg.lo:seg.hi] @ head.block.values[0, sl]
        zh += head.block.values[0, -1]
        cache.zh.append(zh)
        probs[:, head.task] = sigmoid(zh)
    cache.probs = probs
    return cache


def forward_all(net: LifelongNetwork, x: np.ndarray) -> np.ndarray:
    """Probabilities of every head: (n_tasks,) for a vector, else (batch, n_tasks)."""
    single = np.asarray(x).ndim == 1
    probs = _forward_cached(net, x).probs
    return probs[0] if single else probs


def backprop(
    net: LifelongNetwork,
    batch_x: np.ndarray,
    batch_y: dict[int, np.ndarray],
    active_heads: set[int] | frozenset[int],
    skip_frozen: bool = False,
) -> dict[str, np.ndarray]:
    """Exact gradients of the mean summed head cross-entropy over the batch.

    ``batch_y`` maps each active head to its 0/1 label vector.  Every block
    gets an entry; blocks not reachable from an active head get zeros.
    With ``skip_frozen``, blocks whose entries are all frozen keep a zero
    gradient without computing it (the optimizer masks them anyway).
    """
    if not active_heads:
        raise ValueError("active_heads must be nonempty")
    batch_x = np.atleast_2d(np.asarray(batch_x, dtype=np.float64))
    batch = batch_x.shape[0]
    if batch == 0:
        raise ValueError("batch must be nonempty")
    cache = _forward_cached(net, batch_x)

    def live(blk: WeightBlock) -> bool:
        return not skip_frozen or not np.isinf(blk.consolidation).all()

    in_links: dict[int, list[LinkGroup]] = {}
    for grp in net.link_groups:
        if grp.enabled:
            in_links.setdefault(grp.dest, []).append(grp)

    # a column's dz2 is needed when its own layers can move, an incoming link
    # can move, or a link must carry gradient back to a movable source layer
    col_active = [
        live(col.layer1) or live(col.layer2)
        or any(
            live(g.block) or live(net.columns[g.source].layer1)
            for g in in_links.get(col.task, ())
        )
        for col in net.columns
    ]

    grads = {blk.name: np.zeros_like(blk.values) for blk in net.all_blocks()}
    d_a2 = [np.zeros_like(a) for a in cache.a2]
    d_a1 = [np.zeros_like(a) for a in cache.a1]

    from .nncore import PROB_EPS

    for task in sorted(active_heads):
        head = net.heads[task]
        p = cache.probs[:, task]
        y = np.asarray(batch_y[task], dtype=np.float64)
        if y.shape[0] != batch:
            raise ValueError(f"labels for head {task} have length {y.shape[0]} != {batch}")
        # d(loss)/d(zh); zero where the clamp flattens the loss
        interior = (p > PROB_EPS) & (p < 1.0 - PROB_EPS)
        gz = np.where(interior, p - y, 0.0) / batch
        g = grads[head.block.name]
        head_live = live(head.block)
        for seg, sl in head.segment_slices():
            if head_live:
                g[0, sl] += gz @ cache.a2[seg.source][:, seg.lo:seg.hi]
            if col_active[seg.source]:
                d_a2[seg.source][:, seg.lo:seg.hi] += np.outer(gz, head.block.values[0, sl])
        if head_live:
            g[0, -1] += gz.sum()

    for col in reversed(net.columns):
        t = col.task
        if not col_active[t]:
            continue
        dz2 = d_a2[t] * (cache.z2[t] > 0.0)
        if live(col.layer2):
            g2 = grads[col.layer2.name]
            g2[:, :-1] += dz2.T @ cache.a1[t]
            g2[:, -1] += dz2.sum(axis=0)
        l1_live = live(col.layer1)
        if l1_live:
            d_a1[t] += dz2 @ col.layer2.weights
        for grp in in_links.get(t, ()):
            if live(grp.block):
                grads[grp.block.name] += dz2.T @ cache.a1[grp.source]
            if live(net.columns[grp.source].layer1):
                d_a1[grp.source] += dz2 @ grp.block.values
        if l1_live:
            dz1 = d_a1[t] * (cache.z1[t] > 0.0)
            g1 = grads[col.layer1.name]
            g1[:, :-1] += dz1.T @ batch_x
            g1[:, -1] += dz1.sum(axis=0)

    return grads


def apply_gradients(net: LifelongNetwork, grads: dict[str, np.ndarray], cfg: AdamConfig) -> None:
    for blk in net.all_blocks():
        adam_step(blk, grads[blk.name], cfg)


def _check_task(net: LifelongNetwork, task: int) -> None:
    if not 0 <= task < net.n_tasks:
        raise ValueError(f"unknown task {task} (have {net.n_tasks})")


def select_blocks(net: LifelongNetwork, selector: str, task: int | None = None):
    """Resolve a consolidation selector to (block, column slice) pairs.

    Selectors: ``all``, ``column``, ``head``, ``transfer_into``,
    ``transfer_out_of``.  Head segments count as transfer when they read a
    different task's column, addressed as column ranges of the head block.
    """
    pairs: list[tuple[WeightBlock, slice | None]] = []
    if selector == "all":
        pairs.extend((blk, None) for blk in net.all_blocks())
        return pairs
    _check_task(net, task)
    if selector == "column":
        pairs.append((net.columns[task].layer1, None))
        pairs.append((net.columns[task].layer2, None))
    elif selector == "head":
        pairs.append((net.heads[task].block, None))
    elif selector == "transfer_into":
        for grp in net.link_groups:
            if grp.dest == task:
                pairs.append((grp.block, None))
        for seg, sl in net.heads[task].segment_slices():
            if seg.source != task:
                pairs.append((net.heads[task].block, sl))
    elif selector == "transfer_out_of":
        for grp in net.link_groups:
            if grp.source == task:
                pairs.append((grp.block, None))
        for head in net.heads:
            if head.task == task:
                continue
            for seg, sl in head.segment_slices():
                if seg.source == task:
                    pairs.append((head.block, sl))
    else:
        raise ValueError(f"unknown selector {selector!r}")
    return pairs


def set_consolidation(
    net: LifelongNetwork, selector: str, value: float, task: int | None = None
) -> None:
    """Set b on every entry matched by the selector; finite values re-anchor targets."""
    for blk, cols in select_blocks(net, selector, task):
        blk.set_consolidation(value, cols)


def freeze_all(net: LifelongNetwork) -> None:
    set_consolidation(net, "all", FROZEN)
