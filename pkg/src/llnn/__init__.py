"""Lifelong learning engine for sequences of binary image tasks."""

from .nncore import (
    FROZEN,
    IDENTITY,
    RELU,
    SIGMOID,
    AdamConfig,
    WeightBlock,
    activate,
    adam_step,
    affine_forward,
    bce_loss,
    consolidation_penalty,
)
from .network import (
    ALL_RANDOM,
    CONSTANT,
    ONE_ALWAYS,
    ONE_RANDOM,
    ONE_SIMILAR,
    ONE_WORST,
    SIMILARITY_SCALED,
    ExpansionPolicy,
    LifelongNetwork,
    TransferDecision,
    TransferStrategy,
    add_backward_links,
    add_task,
    backprop,
    compute_similarity,
    decide_transfer,
    expansion_size,
    forward_all,
    freeze_all,
    new_network,
    set_consolidation,
)
from .data import (
    LabeledImages,
    TaskDataset,
    TaskSpec,
    build_task,
    load_emnist,
    parse_idx,
    serialize_idx,
    synthetic_glyphs,
)
from .metrics import EpochRecord, RunLog, auc, export_csv, predict_task
from .procedures import (
    ConfusionReport,
    TrainConfig,
    backward_transfer,
    graceful_forget,
    learn_new_task,
    measure_confusion,
    reduce_confusion,
    refine_all,
    train,
)

__version__ = "0.1.0"
