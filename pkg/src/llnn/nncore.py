"""Dense-layer numerics on weight blocks with per-entry consolidation.

A weight block bundles a weight matrix (bias column included) with a
consolidation matrix ``b``, anchor targets, and Adam state.  Entries with
``b == FROZEN`` are masked out of every update: their values and moments
never change, and they contribute neither gradient nor penalty.  Finite
``b`` adds a quadratic pull ``b * (w - target)^2`` to the training loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Consolidation value marking an entry as frozen (masked from all updates).
FROZEN = np.inf

RELU = "relu"
SIGMOID = "sigmoid"
IDENTITY = "identity"

_ACTIVATIONS = (RELU, SIGMOID, IDENTITY)

# Clamp for probabilities inside the cross-entropy, keeps logs finite.
PROB_EPS = 1e-7


@dataclass
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError(f"betas must lie in (0, 1): {self.beta1}, {self.beta2}")
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be positive: {self.learning_rate}")
        if self.epsilon <= 0.0:
            raise ValueError(f"epsilon must be positive: {self.epsilon}")


@dataclass
class WeightBlock:
    """Weights of one dense connection group, shape (n_out, n_in + 1).

    The last column holds the per-output bias.  ``consolidation``,
    ``targets`` and both moment matrices always share the value shape.
    """

    name: str
    values: np.ndarray
    consolidation: np.ndarray = None
    targets: np.ndarray = None
    moment1: np.ndarray = None
    moment2: np.ndarray = None
    step: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.consolidation is None:
            self.consolidation = np.zeros_like(self.values)
        if self.targets is None:
            self.targets = self.values.copy()
        if self.moment1 is None:
            self.moment1 = np.zeros_like(self.values)
        if self.moment2 is None:
            self.moment2 = np.zeros_like(self.values)
        for attr in ("consolidation", "targets", "moment1", "moment2"):
            arr = getattr(self, attr)
            if arr.shape != self.values.shape:
                raise ValueError(
                    f"{self.name}: {attr} shape {arr.shape} != values shape {self.values.shape}"
                )
        finite = self.consolidation[~np.isinf(self.consolidation)]
        if finite.size and (finite < 0).any():
            raise ValueError(f"{self.name}: consolidation entries must be >= 0 or frozen")

    @property
    def n_out(self) -> int:
        return self.values.shape[0]

    @property
    def n_in(self) -> int:
        return self.values.shape[1] - 1

    @property
    def weights(self) -> np.ndarray:
        return self.values[:, :-1]

    @property
    def bias(self) -> np.ndarray:
        return self.values[:, -1]

    def frozen_mask(self) -> np.ndarray:
        return np.isinf(self.consolidation)

    def copy(self) -> "WeightBlock":
        return WeightBlock(
            name=self.name,
            values=self.values.copy(),
            consolidation=self.consolidation.copy(),
            targets=self.targets.copy(),
            moment1=self.moment1.copy(),
            moment2=self.moment2.copy(),
            step=self.step,
        )

    def set_consolidation(self, value: float, cols: slice | None = None) -> None:
        """Assign ``value`` to all entries (or a column range) of ``b``.

        Targets re-anchor to the current values so a finite penalty pulls
        toward the present state rather than a stale one.
        """
        if value != FROZEN and value < 0:
            raise ValueError(f"consolidation must be >= 0 or FROZEN, got {value}")
        sel = (slice(None), cols if cols is not None else slice(None))
        self.consolidation[sel] = value
        self.targets[sel] = self.values[sel]

    def grow(self, new_values: np.ndarray, axis: int, before_bias: bool = True) -> None:
        """Append entries along ``axis`` (0 = new outputs, 1 = new inputs).

        New entries start unfrozen (b = 0) with zero Adam state and targets
        at the new values.  Existing entries, including their optimizer
        state, are preserved bit-for-bit.
        """
        new_values = np.asarray(new_values, dtype=np.float64)
        zeros = np.zeros_like(new_values)

        def cat(old: np.ndarray, new: np.ndarray) -> np.ndarray:
            if axis == 1 and before_bias:
                return np.concatenate([old[:, :-1], new, old[:, -1:]], axis=1)
            return np.concatenate([old, new], axis=axis)

        self.values = cat(self.values, new_values)
        self.consolidation = cat(self.consolidation, zeros)
        self.targets = cat(self.targets, new_values.copy())
        self.moment1 = cat(self.moment1, zeros.copy())
        self.moment2 = cat(self.moment2, zeros.copy())


def affine_forward(x: np.ndarray, block: WeightBlock) -> np.ndarray:
    """W @ x + bias for a single vector or a (batch, n_in) matrix."""
    x = np.asarray(x, dtype=np.float64)
    n_in = x.shape[-1]
    if n_in != block.n_in:
        raise ValueError(
            f"{block.name}: expected input of length {block.n_in}, got {n_in}"
        )
    return x @ block.weights.T + block.bias


def activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == RELU:
        return np.maximum(z, 0.0)
    if kind == SIGMOID:
        return sigmoid(z)
    if kind == IDENTITY:
        return np.asarray(z, dtype=np.float64)
    raise ValueError(f"unknown activation {kind!r}, expected one of {_ACTIVATIONS}")


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_loss(p, y) -> float:
    """Binary cross-entropy with probabilities clamped to [eps, 1 - eps]."""
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def consolidation_penalty(block: WeightBlock) -> float:
    """Sum of b * (w - target)^2 over non-frozen entries."""
    free = ~block.frozen_mask()
    diff = block.values[free] - block.targets[free]
    return float(np.sum(block.consolidation[free] * diff * diff))


def consolidation_grad(block: WeightBlock) -> np.ndarray:
    """Gradient of the penalty: 2 b (w - target), zero on frozen entries."""
    b = np.where(block.frozen_mask(), 0.0, block.consolidation)
    return 2.0 * b * (block.values - block.targets)


def adam_step(block: WeightBlock, task_grads: np.ndarray, cfg: AdamConfig) -> WeightBlock:
    """One Adam update on the non-frozen entries of ``block``.

    The effective gradient adds the consolidation penalty's gradient to the
    task gradient.  Frozen entries keep values and moments bit-identical.
    """
    task_grads = np.asarray(task_grads, dtype=np.float64)
    if task_grads.shape != block.values.shape:
        raise ValueError(
            f"{block.name}: gradient shape {task_grads.shape} != values shape "
            f"{block.values.shape}"
        )
    frozen = block.frozen_mask()
    t = block.step + 1
    if frozen.all():
        block.step = t
        return block

    g = task_grads + consolidation_grad(block)
    m = cfg.beta1 * block.moment1 + (1.0 - cfg.beta1) * g
    v = cfg.beta2 * block.moment2 + (1.0 - cfg.beta2) * g * g
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    delta = cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)

    if frozen.any():
        free = ~frozen
        block.values[free] -= delta[free]
        block.moment1[free] = m[free]
        block.moment2[free] = v[free]
    else:
        block.values -= delta
        block.moment1 = m
        block.moment2 = v
    block.step = t
    return block
