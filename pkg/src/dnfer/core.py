"""Dynamic class-adaptive clean-sample selection and the DNFER training loop."""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics
from .data import AugmentationPolicy, batch_iterator
from .errors import ConfigurationError, InvariantError, NumericError
from .losses import consistency_loss, supervision_loss, total_loss  # noqa: F401  (re-exported)
from .nn import AdamState, MlpModel, adam_step, backward, forward, lr_schedule

MODES = ("dnfer", "baseline", "sup-only", "cons-only")
SELECTION_VIEWS = ("weak", "strong", "mean")


@dataclass(frozen=True)
class ThresholdVector:
    """Per-class mean posterior; ``values[c]`` is NaN for classes absent from the batch."""

    values: np.ndarray

    @property
    def present(self):
        return ~np.isnan(self.values)

    def get(self, c):
        v = self.values[c]
        return None if math.isnan(v) else float(v)

    def as_list(self):
        return [self.get(c) for c in range(len(self.values))]


@dataclass(frozen=True)
class SelectionMask:
    flags: np.ndarray

    @property
    def selected_count(self):
        return int(np.count_nonzero(self.flags))


def compute_thresholds(posteriors, labels):
    probs = np.asarray(posteriors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = probs.shape[1]
    own = probs[np.arange(len(labels)), labels]
    sums = np.bincount(labels, weights=own, minlength=n_classes)
    counts = np.bincount(labels, minlength=n_classes)
    values = np.full(n_classes, np.nan)
    present = counts > 0
    values[present] = sums[present] / counts[present]
    return ThresholdVector(values)


def select_clean(posteriors, labels, thresholds):
    """Flag samples whose own-label posterior reaches their class threshold."""
    probs = np.asarray(posteriors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    t = thresholds.values[labels]
    if np.isnan(t).any():
        raise InvariantError("no threshold for a class present in the batch")
    own = probs[np.arange(len(labels)), labels]
    return SelectionMask(own >= t)


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.5
    warm_epochs: int = 5
    max_epochs: int = 40
    batch_size: int = 128
    initial_lr: float = 1e-3
    lr_decay: float = 0.95
    seed: int = 0
    oversample: bool = False
    selection_view: str = "weak"
    mode: str = "dnfer"
    hidden: tuple = (64, 64)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.max_epochs < 1 or self.warm_epochs < 0 or self.warm_epochs >= self.max_epochs:
            raise ConfigurationError("need 0 <= warm_epochs < max_epochs")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        if self.initial_lr <= 0 or not 0 < self.lr_decay <= 1:
            raise ConfigurationError("need initial_lr > 0 and lr_decay in (0, 1]")
        if self.selection_view not in SELECTION_VIEWS:
            raise ConfigurationError(f"selection_view must be one of {SELECTION_VIEWS}")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        if any(h < 1 for h in self.hidden):
            raise ConfigurationError("hidden layer widths must be positive")


def alpha_schedule(epoch, config):
    return 0.0 if epoch < config.warm_epochs else config.alpha


def effective_alpha(epoch, config):
    """Consistency weight actually optimized for the configured ablation mode."""
    if config.mode == "dnfer":
        return alpha_schedule(epoch, config)
    if config.mode == "cons-only" and epoch >= config.warm_epochs:
        return 1.0
    return 0.0


def uses_selection(epoch, config):
    return config.mode in ("dnfer", "sup-only") and epoch >= config.warm_epochs


@dataclass
class StepRecord:
    epoch: int
    step: int
    lr: float
    alpha: float
    batch_size: int
    selected_count: int
    l_sup: float
    l_cons: float
    loss: float
    thresholds: list
    clean_selected: int | None = None
    clean_count: int | None = None

    @property
    def precision(self):
        if self.clean_selected is None or self.selected_count == 0:
            return None
        return self.clean_selected / self.selected_count

    @property
    def recall(self):
        if self.clean_selected is None or not self.clean_count:
            return None
        return self.clean_selected / self.clean_count


def _selection_posteriors(p_w, p_s, view):
    if view == "weak":
        return p_w
    if view == "strong":
        return p_s
    return 0.5 * (p_w + p_s)


def train_step(model, batch, config, epoch, opt_state, step=0):
    """One optimizer update on a mini-batch; returns ``(model, opt_state, StepRecord)``."""
    p_w = forward(model, batch.weak)
    p_s = forward(model, batch.strong)
    thresholds = compute_thresholds(_selection_posteriors(p_w, p_s, config.selection_view),
                                    batch.labels)
    alpha = effective_alpha(epoch, config)
    if uses_selection(epoch, config):
        mask = select_clean(_selection_posteriors(p_w, p_s, config.selection_view),
                            batch.labels, thresholds)
    elif alpha == 1.0:
        mask = SelectionMask(np.zeros(len(batch), dtype=bool))
    else:
        mask = SelectionMask(np.ones(len(batch), dtype=bool))

    lr = lr_schedule(config.initial_lr, epoch, config.lr_decay)
    try:
        grads = backward(model, batch.weak, batch.strong, batch.labels, mask, alpha)
    except NumericError as exc:
        raise NumericError(f"step {step}: {exc}", layer=exc.layer, step=step) from exc
    model, opt_state = adam_step(model, grads, opt_state, lr)

    clean_selected = clean_count = None
    flipped = batch.flipped
    if flipped is not None:
        clean = ~flipped
        clean_selected = int(np.count_nonzero(clean & mask.flags))
        clean_count = int(np.count_nonzero(clean))
    record = StepRecord(epoch, step, lr, alpha, len(batch), mask.selected_count,
                        grads.l_sup, grads.l_cons, grads.loss, thresholds.as_list(),
                        clean_selected, clean_count)
    return model, opt_state, record


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    alpha: float
    train_acc: float
    test_acc: float
    mean_sup_loss: float
    mean_cons_loss: float
    selected_fraction: float
    selection_precision: float | None
    selection_recall: float | None
    per_class_thresholds: list
    memorization_rate: float | None


@dataclass
class RunMetrics:
    epochs: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    confusion: list | None = None
    per_class_accuracy: list | None = None
    flipped_count: int | None = None

    @property
    def final_test_acc(self):
        return self.epochs[-1].test_acc

    @property
    def final_memorization_rate(self):
        return self.epochs[-1].memorization_rate

    def to_jsonl(self):
        lines = [json.dumps(asdict(e), sort_keys=True) for e in self.epochs]
        final = {"final": True, "confusion_matrix": self.confusion,
                 "per_class_accuracy": self.per_class_accuracy,
                 "flipped_count": self.flipped_count,
                 "test_acc": self.final_test_acc if self.epochs else None}
        lines.append(json.dumps(final, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text):
        run = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("final"):
                run.confusion = rec["confusion_matrix"]
                run.per_class_accuracy = rec["per_class_accuracy"]
                run.flipped_count = rec["flipped_count"]
            else:
                run.epochs.append(EpochRecord(**rec))
        return run


def _summarize_epoch(epoch, steps, config, train_set, test_set, model):
    n_total = sum(s.batch_size for s in steps)
    n_sel = sum(s.selected_count for s in steps)
    precision = recall = None
    if steps and steps[0].clean_selected is not None:
        clean_sel = sum(s.clean_selected for s in steps)
        clean = sum(s.clean_count for s in steps)
        precision = clean_sel / n_sel if n_sel else None
        recall = clean_sel / clean if clean else None
    per_class = []
    for c in range(train_set.num_classes):
        vals = [s.thresholds[c] for s in steps if s.thresholds[c] is not None]
        per_class.append(float(np.mean(vals)) if vals else None)
    train_acc = metrics.accuracy(model, train_set)
    test_acc = metrics.accuracy(model, test_set)
    mem = metrics.memorization_rate(model, train_set) if train_set.true_labels is not None else None
    return EpochRecord(
        epoch=epoch,
        lr=lr_schedule(config.initial_lr, epoch, config.lr_decay),
        alpha=effective_alpha(epoch, config),
        train_acc=train_acc,
        test_acc=test_acc,
        mean_sup_loss=float(np.mean([s.l_sup for s in steps])),
        mean_cons_loss=float(np.mean([s.l_cons for s in steps])),
        selected_fraction=n_sel / n_total,
        selection_precision=precision,
        selection_recall=recall,
        per_class_thresholds=per_class,
        memorization_rate=mem,
    )


def init_model(config, input_dim, num_classes):
    rng = np.random.default_rng([config.seed, 0x5EED])
    return MlpModel.init([input_dim, *config.hidden, num_classes], rng)


def train(train_set, test_set, config, policy=None, model=None):
    """Run the full training loop; returns ``(RunMetrics, model)``."""
    if train_set.dim != test_set.dim or train_set.num_classes != test_set.num_classes:
        raise ConfigurationError("train and test sets are incompatible")
    if policy is None:
        policy = AugmentationPolicy.for_dataset(train_set)
    if model is None:
        model = init_model(config, train_set.dim, train_set.num_classes)
    opt_state = AdamState.zeros_like(model)
    flipped = train_set.flipped
    run = RunMetrics(flipped_count=None if flipped is None else int(flipped.sum()))
    step = 0
    for epoch in range(config.max_epochs):
        epoch_steps = []
        for batch in batch_iterator(train_set, config.batch_size, config.oversample,
                                    policy, config.seed, epoch):
            model, opt_state, record = train_step(model, batch, config, epoch, opt_state, step)
            epoch_steps.append(record)
            step += 1
        run.steps.extend(epoch_steps)
        run.epochs.append(_summarize_epoch(epoch, epoch_steps, config, train_set, test_set, model))
    _, cm, per_class = metrics.evaluate(model, test_set)
    run.confusion = cm.counts.tolist()
    run.per_class_accuracy = [None if math.isnan(v) else float(v) for v in per_class]
    return run, model
