"""Accuracy, confusion matrices, selection quality and memorization reports."""

import io
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError
from .losses import mask_flags
from .nn import forward


@dataclass(frozen=True)
class ConfusionMatrix:
    """``counts[i, j]``: samples of reference class i predicted as j."""

    counts: np.ndarray

    @classmethod
    def from_labels(cls, reference, predicted, num_classes):
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(reference), np.asarray(predicted)), 1)
        return cls(counts)

    @property
    def total(self):
        return int(self.counts.sum())

    def accuracy(self):
        return float(np.trace(self.counts)) / self.total if self.total else float("nan")

    def per_class_accuracy(self):
        rows = self.counts.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, np.diag(self.counts) / np.maximum(rows, 1), np.nan)

    def to_csv(self):
        c = self.counts.shape[0]
        lines = ["true\\pred," + ",".join(str(j) for j in range(c))]
        lines += [f"{i}," + ",".join(str(v) for v in self.counts[i]) for i in range(c)]
        return "\n".join(lines) + "\n"

    def to_table(self):
        c = self.counts.shape[0]
        width = max(5, len(str(self.counts.max())) + 1)
        out = io.StringIO()
        out.write("true\\pred" + "".join(f"{j:>{width}}" for j in range(c)) + "\n")
        for i in range(c):
            out.write(f"{i:>9}" + "".join(f"{v:>{width}}" for v in self.counts[i]) + "\n")
        return out.getvalue()


def predict(model, features):
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    return np.argmax(forward(model, features), axis=1)


def evaluate(model, dataset, use_true_labels=False):
    """Return ``(accuracy, ConfusionMatrix, per_class_accuracy)`` on un-augmented inputs."""
    if dataset.dim != model.layer_dims[0] or dataset.num_classes != model.num_classes:
        raise ConfigurationError(
            f"model {model.layer_dims} does not fit dataset (dim {dataset.dim}, "
            f"{dataset.num_classes} classes)")
    reference = dataset.true_labels if use_true_labels and dataset.true_labels is not None \
        else dataset.labels
    cm = ConfusionMatrix.from_labels(reference, predict(model, dataset.features),
                                     dataset.num_classes)
    return cm.accuracy(), cm, cm.per_class_accuracy()


def accuracy(model, dataset):
    return float(np.mean(predict(model, dataset.features) == dataset.labels))


def memorization_rate(model, dataset):
    """Fraction of label-flipped samples predicted as their (wrong) observed label."""
    flipped = dataset.flipped
    if flipped is None:
        raise InputError("memorization needs known true labels")
    if not flipped.any():
        return None
    pred = predict(model, dataset.features[flipped])
    return float(np.mean(pred == dataset.labels[flipped]))


@dataclass(frozen=True)
class SelectionQuality:
    precision: float | None
    recall: float | None
    selected_fraction: float
    clean_selected: int


def selection_quality(mask, flipped):
    flags = mask_flags(mask)
    flipped = np.asarray(flipped, dtype=bool)
    if flags.shape != flipped.shape:
        raise InputError(f"mask length {flags.shape} differs from flags {flipped.shape}")
    clean = ~flipped
    selected = int(flags.sum())
    n_clean = int(clean.sum())
    both = int(np.count_nonzero(flags & clean))
    return SelectionQuality(
        precision=both / selected if selected else None,
        recall=both / n_clean if n_clean else None,
        selected_fraction=selected / flags.size if flags.size else 0.0,
        clean_selected=both,
    )


# -- memorization gap --------------------------------------------------------

GAP_COLUMNS = ("epoch", "baseline_train_acc", "dnfer_train_acc", "baseline_test_acc",
               "dnfer_test_acc", "baseline_memorization", "dnfer_memorization")


def memorization_trace(baseline_run, dnfer_run):
    """Per-epoch rows juxtaposing two runs' train, test and memorization curves."""
    for run in (baseline_run, dnfer_run):
        if run.flipped_count is None:
            raise InputError("run has no flipped-label bookkeeping")
    rows = []
    for a, b in zip(baseline_run.epochs, dnfer_run.epochs):
        rows.append({
            "epoch": a.epoch,
            "baseline_train_acc": a.train_acc,
            "dnfer_train_acc": b.train_acc,
            "baseline_test_acc": a.test_acc,
            "dnfer_test_acc": b.test_acc,
            "baseline_memorization": a.memorization_rate,
            "dnfer_memorization": b.memorization_rate,
        })
    return rows


def _fmt(v):
    return "" if v is None else f"{v:.6f}" if isinstance(v, float) else str(v)


def gap_report_csv(rows):
    lines = [",".join(GAP_COLUMNS)]
    lines += [",".join(_fmt(r[c]) for c in GAP_COLUMNS) for r in rows]
    return "\n".join(lines) + "\n"


def gap_report_table(rows):
    header = "".join(f"{c:>22}" for c in GAP_COLUMNS)
    body = ["".join(f"{_fmt(r[c]) or '-':>22}" for c in GAP_COLUMNS) for r in rows]
    return "\n".join([header, *body]) + "\n"
