"""Noise-robust classifier training with dynamic class-adaptive sample selection."""

from .core import (
    RunMetrics,
    SelectionMask,
    ThresholdVector,
    TrainConfig,
    alpha_schedule,
    compute_thresholds,
    select_clean,
    train,
    train_step,
)
from .data import (
    AugmentationPolicy,
    BatchViews,
    Dataset,
    NoiseSpec,
    augment,
    batch_iterator,
    generate_blobs,
    inject_noise,
    load_csv,
    load_idx,
)
from .losses import consistency_loss, cross_entropy, supervision_loss, symmetric_kl, total_loss
from .metrics import evaluate, memorization_trace, selection_quality
from .nn import AdamState, MlpModel, adam_step, backward, forward, lr_schedule

__version__ = "0.1.0"
