"""Flat ``key = value`` experiment configuration files.

One key per line; ``#`` starts a comment. Every key matches a field of
:class:`ExperimentConfig`, and :meth:`ExperimentConfig.dumps` writes a file that
loads back to the same config.
"""

import dataclasses
import os
from dataclasses import dataclass, fields

import numpy as np

from .core import MODES, SELECTION_VIEWS, TrainConfig
from .data import (IMAGE_TRANSFORMS, VECTOR_TRANSFORMS, AugmentationPolicy, NoiseSpec,
                   generate_blobs, inject_noise, load_csv, load_idx)
from .errors import ConfigurationError, ParseError

OUTPUT_ROOT_ENV = "DNFER_OUTPUT_ROOT"
DATASET_SOURCES = ("blobs", "csv", "idx")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "dnfer"
    alpha: float = 0.5
    warm_epochs: int = 5
    epochs: int = 40
    batch_size: int = 128
    lr: float = 0.001
    lr_decay: float = 0.95
    seed: int = 0
    repeats: int = 1
    oversample: bool = False
    selection_view: str = "weak"
    hidden: tuple = (64, 64)

    dataset: str = "blobs"
    blobs_counts: tuple = (600, 300, 100)
    blobs_test_per_class: int = 100
    blobs_dim: int = 64
    blobs_separation: float = 4.0
    csv_train: str = ""
    csv_test: str = ""
    idx_images: str = ""
    idx_labels: str = ""
    idx_test_images: str = ""
    idx_test_labels: str = ""
    num_classes: int = 0
    holdout_fraction: float = 0.2

    noise_rate: float = 0.0

    weak_jitter: float = -1.0
    weak_shift: int = -1
    weak_flip: float = -1.0
    strong_transforms: tuple = ()
    strong_picks: int = 2
    strong_magnitude: float = 0.3

    out: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {', '.join(MODES)}; got {self.mode!r}")
        if self.repeats < 1:
            raise ConfigurationError("repeats must be >= 1")
        if self.dataset not in DATASET_SOURCES:
            raise ConfigurationError(f"dataset must be one of {DATASET_SOURCES}")
        if self.selection_view not in SELECTION_VIEWS:
            raise ConfigurationError(f"selection_view must be one of {SELECTION_VIEWS}")
        for name in self.strong_transforms:
            if name not in VECTOR_TRANSFORMS + IMAGE_TRANSFORMS:
                raise ConfigurationError(f"unknown transform {name!r}")
        NoiseSpec(self.noise_rate)
        self.train_config(self.seed)

    @property
    def seeds(self):
        return [self.seed + k for k in range(self.repeats)]

    def train_config(self, seed):
        return TrainConfig(alpha=self.alpha, warm_epochs=self.warm_epochs, max_epochs=self.epochs,
                           batch_size=self.batch_size, initial_lr=self.lr, lr_decay=self.lr_decay,
                           seed=seed, oversample=self.oversample,
                           selection_view=self.selection_view, mode=self.mode,
                           hidden=tuple(self.hidden))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    # -- data ------------------------------------------------------------------

    def load_clean_datasets(self, seed):
        """Train/test sets before label noise is injected."""
        n_cls = self.num_classes or None
        if self.dataset == "blobs":
            counts = tuple(self.blobs_counts)
            tr = generate_blobs(len(counts), counts, self.blobs_dim, self.blobs_separation, seed)
            te = generate_blobs(len(counts), self.blobs_test_per_class, self.blobs_dim,
                                self.blobs_separation, seed, split="test")
            return tr, te
        if self.dataset == "csv":
            if not self.csv_train:
                raise ConfigurationError("dataset=csv needs csv_train")
            tr = load_csv(self.csv_train, n_cls)
            te = load_csv(self.csv_test, n_cls or tr.num_classes, split="test") \
                if self.csv_test else None
        else:
            if not (self.idx_images and self.idx_labels):
                raise ConfigurationError("dataset=idx needs idx_images and idx_labels")
            tr = load_idx(self.idx_images, self.idx_labels, n_cls)
            te = None
            if self.idx_test_images:
                te = load_idx(self.idx_test_images, self.idx_test_labels,
                              n_cls or tr.num_classes, split="test")
        if te is None:
            tr, te = _holdout(tr, self.holdout_fraction, seed)
        if te.num_classes != tr.num_classes:
            k = max(te.num_classes, tr.num_classes)
            tr = dataclasses.replace(tr, num_classes=k)
            te = dataclasses.replace(te, num_classes=k)
        return tr, te

    def load_datasets(self, seed):
        """Return ``(noisy_train, test, flipped)`` for one repeat."""
        tr, te = self.load_clean_datasets(seed)
        if tr.true_labels is None:
            tr = dataclasses.replace(tr, true_labels=tr.labels.copy())
        if self.noise_rate > 0:
            tr, flipped = inject_noise(tr, NoiseSpec(self.noise_rate, seed=seed))
        else:
            flipped = tr.flipped
        return tr, te, flipped

    def policy_for(self, dataset):
        overrides = {"picks_per_sample": self.strong_picks, "magnitude": self.strong_magnitude}
        if self.weak_jitter >= 0:
            overrides["jitter_sigma"] = self.weak_jitter
        if self.weak_shift >= 0:
            overrides["shift_max"] = self.weak_shift
        if self.weak_flip >= 0:
            overrides["flip_prob"] = self.weak_flip
        if self.strong_transforms:
            overrides["transform_pool"] = tuple(self.strong_transforms)
        return AugmentationPolicy.for_dataset(dataset, **overrides)

    # -- serialization -----------------------------------------------------------

    def dumps(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (tuple, list)):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _holdout(dataset, fraction, seed):
    rng = np.random.default_rng([seed, 0x40])
    order = rng.permutation(len(dataset))
    n_test = max(1, int(round(fraction * len(dataset))))
    if n_test >= len(dataset):
        raise ConfigurationError("dataset too small for a holdout split")
    test = dataclasses.replace(dataset.subset(np.sort(order[:n_test])), split="test")
    return dataset.subset(np.sort(order[n_test:])), test


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_DEFAULTS = ExperimentConfig.__dataclass_fields__


def coerce(key, raw):
    """Convert a textual value to the type of field ``key``."""
    if key not in _FIELD_TYPES:
        raise ConfigurationError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    text = str(raw).strip()
    try:
        if kind in (bool, "bool"):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
        if kind in (tuple, "tuple"):
            items = [t.strip() for t in text.split(",") if t.strip()]
            default = _DEFAULTS[key].default
            if default and isinstance(default[0], int):
                return tuple(int(t) for t in items)
            return tuple(items)
        return text
    except ValueError:
        raise ConfigurationError(f"bad value for {key}: {text!r}") from None


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{source}: line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ParseError(f"{source}: line {lineno}: duplicate key {key!r}")
        try:
            values[key] = coerce(key, value)
        except ConfigurationError as exc:
            raise ParseError(f"{source}: line {lineno}: {exc}") from None
    return values


def load_config(path=None, overrides=None):
    """Merge a config file (optional) with explicit overrides into an ExperimentConfig."""
    values = {}
    if path:
        with open(path, encoding="utf-8") as f:
            values.update(parse_config_text(f.read(), os.fspath(path)))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig(**values)


def default_output_dir(command):
    return os.path.join(os.environ.get(OUTPUT_ROOT_ENV, "runs"), command)
