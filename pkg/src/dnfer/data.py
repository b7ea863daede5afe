"""Datasets, synthetic benchmarks, label noise, augmentation and batching.

A :class:`Dataset` keeps its samples column-wise (a feature matrix plus label
vectors). Image datasets store flattened pixels and remember ``image_shape``.
"""

import csv
import math
import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, InputError, ParseError
from .io import write_atomic

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    observed_label: int
    true_label: int | None
    sample_id: int


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    true_labels: np.ndarray | None = None
    sample_ids: np.ndarray | None = None
    split: str = "train"
    image_shape: tuple | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] == 0:
            raise InputError(f"dataset needs a non-empty 2-D feature matrix, got {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise InputError("non-finite feature values")
        n = feats.shape[0]
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (n,):
            raise InputError("label vector length differs from sample count")
        if self.num_classes < 1:
            raise ConfigurationError("num_classes must be positive")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise InputError(f"labels outside [0, {self.num_classes})")
        true = self.true_labels
        if true is not None:
            true = np.asarray(true, dtype=np.int64)
            if true.shape != (n,) or true.min() < 0 or true.max() >= self.num_classes:
                raise InputError("true_labels malformed")
        ids = np.arange(n) if self.sample_ids is None else np.asarray(self.sample_ids, dtype=np.int64)
        if ids.shape != (n,) or len(np.unique(ids)) != n or ids.min() < 0:
            raise InputError("sample_ids must be unique non-negative integers")
        if self.split not in ("train", "test"):
            raise ConfigurationError(f"unknown split {self.split!r}")
        if self.image_shape is not None and int(np.prod(self.image_shape)) != feats.shape[1]:
            raise InputError("image_shape does not match the feature width")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "true_labels", true)
        object.__setattr__(self, "sample_ids", ids)

    def __len__(self):
        return self.features.shape[0]

    def __getitem__(self, i):
        x = self.features[i]
        if self.image_shape is not None:
            x = x.reshape(self.image_shape)
        true = None if self.true_labels is None else int(self.true_labels[i])
        return LabeledSample(x, int(self.labels[i]), true, int(self.sample_ids[i]))

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def modality(self):
        return "vector" if self.image_shape is None else "image"

    @property
    def flipped(self):
        """Boolean noise mask, or None when the true labels are unknown."""
        if self.true_labels is None:
            return None
        return self.labels != self.true_labels

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, index):
        index = np.asarray(index)
        return replace(
            self,
            features=self.features[index],
            labels=self.labels[index],
            true_labels=None if self.true_labels is None else self.true_labels[index],
            sample_ids=self.sample_ids[index],
        )


# -- synthetic data ----------------------------------------------------------

def _class_means(num_classes, dim, separation, rng):
    if dim >= num_classes:
        # scaled basis vectors are pairwise exactly `separation` apart
        means = np.zeros((num_classes, dim))
        means[np.arange(num_classes), np.arange(num_classes)] = separation / math.sqrt(2.0)
        means -= means.mean(axis=0)
        q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
        rotation = q * np.sign(np.diag(r))
        return means @ rotation.T
    means = np.zeros((num_classes, dim))
    means[:, 0] = separation * (np.arange(num_classes) - (num_classes - 1) / 2.0)
    return means


def generate_blobs(num_classes, samples_per_class, dim, separation, seed, split="train"):
    """Gaussian clusters with unit within-class std.

    The class means depend only on ``seed``, so ``split="train"`` and
    ``split="test"`` with the same seed share one geometry but draw
    independent samples.
    """
    if dim < 1:
        raise ConfigurationError(f"dim must be >= 1, got {dim}")
    if num_classes < 2:
        raise ConfigurationError("need at least two classes")
    counts = np.broadcast_to(np.asarray(samples_per_class, dtype=np.int64), (num_classes,))
    if counts.min() < 1:
        raise ConfigurationError("every class needs at least one sample")
    means = _class_means(num_classes, dim, separation, np.random.default_rng([seed, 0]))
    rng = np.random.default_rng([seed, 1 if split == "train" else 2])
    labels = np.repeat(np.arange(num_classes), counts)
    features = means[labels] + rng.standard_normal((len(labels), dim))
    return Dataset(features, labels, num_classes, true_labels=labels.copy(), split=split)


# -- file formats ------------------------------------------------------------

def load_csv(path, num_classes=None, split="train"):
    """Read ``feature_0..feature_{d-1},label[,true_label]`` rows."""
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    has_true = bool(header) and header[-1] == "true_label"
    n_feat = len(header) - (2 if has_true else 1)
    expected = [f"feature_{i}" for i in range(n_feat)] + ["label"] + (["true_label"] if has_true else [])
    if n_feat < 1 or header != expected:
        raise ParseError(f"{path}: line 1: bad header {header}")
    if len(rows) == 1:
        raise ParseError(f"{path}: no data rows")
    feats, labels, trues = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            feats.append([float(v) for v in row[:n_feat]])
            labels.append(int(row[n_feat]))
            if has_true:
                trues.append(int(row[n_feat + 1]))
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from None
        if labels[-1] < 0 or (has_true and trues[-1] < 0):
            raise ParseError(f"{path}: line {lineno}: negative label")
        if num_classes is not None and max(labels[-1], trues[-1] if has_true else 0) >= num_classes:
            raise ParseError(f"{path}: line {lineno}: label >= num_classes ({num_classes})")
    if num_classes is None:
        num_classes = max(labels + trues) + 1
    feats = np.array(feats)
    if not np.all(np.isfinite(feats)):
        raise ParseError(f"{path}: non-finite feature value")
    return Dataset(feats, np.array(labels), num_classes,
                   true_labels=np.array(trues) if has_true else None, split=split)


def save_csv(path, dataset):
    header = [f"feature_{i}" for i in range(dataset.dim)] + ["label"]
    if dataset.true_labels is not None:
        header.append("true_label")
    lines = [",".join(header)]
    for i in range(len(dataset)):
        cells = [repr(float(v)) for v in dataset.features[i]] + [str(dataset.labels[i])]
        if dataset.true_labels is not None:
            cells.append(str(dataset.true_labels[i]))
        lines.append(",".join(cells))
    write_atomic(path, "\n".join(lines) + "\n")


def _read_idx_header(buf, magic, ndim, path):
    if len(buf) < 4:
        raise ParseError(f"{path}: byte 0: file shorter than the IDX magic")
    found = struct.unpack(">I", buf[:4])[0]
    if found != magic:
        raise ParseError(f"{path}: byte 0: magic 0x{found:08x}, expected 0x{magic:08x}")
    end = 4 + 4 * ndim
    if len(buf) < end:
        raise ParseError(f"{path}: byte 4: header truncated")
    return struct.unpack(f">{ndim}I", buf[4:end]), end


def load_idx(image_path, label_path, num_classes=None, split="train"):
    """Read an IDX3 image file and IDX1 label file; pixels are scaled to [0, 1]."""
    with open(image_path, "rb") as f:
        ibuf = f.read()
    with open(label_path, "rb") as f:
        lbuf = f.read()
    (n, h, w), off = _read_idx_header(ibuf, IDX_IMAGE_MAGIC, 3, image_path)
    if len(ibuf) - off != n * h * w:
        raise ParseError(f"{image_path}: byte {off}: expected {n * h * w} pixel bytes, "
                         f"found {len(ibuf) - off}")
    (n_lab,), loff = _read_idx_header(lbuf, IDX_LABEL_MAGIC, 1, label_path)
    if n_lab != n:
        raise ParseError(f"{label_path}: byte 4: {n_lab} labels for {n} images")
    if len(lbuf) - loff != n:
        raise ParseError(f"{label_path}: byte {loff}: expected {n} label bytes, found {len(lbuf) - loff}")
    if n == 0:
        raise ParseError(f"{image_path}: byte 4: zero images")
    pixels = np.frombuffer(ibuf, dtype=np.uint8, offset=off).reshape(n, h * w)
    labels = np.frombuffer(lbuf, dtype=np.uint8, offset=loff).astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        raise ParseError(f"{label_path}: byte {loff + bad[0]}: label {labels[bad[0]]} >= {num_classes}")
    return Dataset(pixels / 255.0, labels, num_classes, split=split, image_shape=(h, w))


# -- label noise -------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    rate: float
    seed: int = 0
    kind: str = "symmetric-uniform"

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigurationError(f"noise rate must lie in [0, 1], got {self.rate}")
        if self.kind != "symmetric-uniform":
            raise ConfigurationError(f"unsupported noise kind {self.kind!r}")


def inject_noise(dataset, spec):
    """Flip exactly round(rate * N) labels, each to a uniformly drawn other class.

    Returns ``(noisy_dataset, flipped)``.
    """
    if dataset.split != "train":
        raise InputError("label noise is only injected into training splits")
    if dataset.num_classes < 2 and spec.rate > 0:
        raise InputError("cannot flip labels with a single class")
    true = dataset.labels if dataset.true_labels is None else dataset.true_labels
    n = len(dataset)
    n_flip = int(math.floor(spec.rate * n + 0.5))
    rng = np.random.default_rng(spec.seed)
    chosen = rng.choice(n, size=n_flip, replace=False)
    # draw from the C-1 other classes by skipping over the true one
    offset = rng.integers(0, dataset.num_classes - 1, size=n_flip) if n_flip else np.zeros(0, np.int64)
    new = offset + (offset >= true[chosen])
    observed = true.copy()
    observed[chosen] = new
    noisy = replace(dataset, labels=observed, true_labels=true.copy())
    return noisy, observed != true


def save_noise_mask(path, dataset, flipped):
    lines = ["sample_id,flipped"]
    lines += [f"{sid},{int(f)}" for sid, f in zip(dataset.sample_ids, flipped)]
    write_atomic(path, "\n".join(lines) + "\n")


# -- augmentation ------------------------------------------------------------

VECTOR_TRANSFORMS = ("jitter", "dropout", "scale", "rotate2d")
IMAGE_TRANSFORMS = ("invert", "rotate", "translate", "contrast")


@dataclass(frozen=True)
class AugmentationPolicy:
    jitter_sigma: float = 0.05
    shift_max: int = 0
    flip_prob: float = 0.0
    transform_pool: tuple = VECTOR_TRANSFORMS
    picks_per_sample: int = 2
    magnitude: float = 0.3
    # per-feature spread used to scale the vector strong transforms
    feature_scale: float = 1.0

    def __post_init__(self):
        if self.jitter_sigma < 0 or self.shift_max < 0 or not 0 <= self.flip_prob <= 1:
            raise ConfigurationError("invalid weak augmentation parameters")
        if not 0 < self.magnitude <= 1:
            raise ConfigurationError(f"magnitude must lie in (0, 1], got {self.magnitude}")
        if not 1 <= self.picks_per_sample <= len(self.transform_pool):
            raise ConfigurationError("picks_per_sample must be within 1..len(transform_pool)")
        known = set(VECTOR_TRANSFORMS) | set(IMAGE_TRANSFORMS)
        for name in self.transform_pool:
            if name not in known:
                raise ConfigurationError(f"unknown transform {name!r}")

    @classmethod
    def for_dataset(cls, dataset, **overrides):
        """Default policy scaled to a dataset's feature spread."""
        if dataset.image_shape is not None:
            h = dataset.image_shape[0]
            params = dict(jitter_sigma=0.0, shift_max=max(1, round(4 * h / 28)),
                          flip_prob=0.5, transform_pool=IMAGE_TRANSFORMS)
        else:
            std = float(dataset.features.std(axis=0).mean())
            params = dict(jitter_sigma=0.05 * std, feature_scale=std)
        params.update(overrides)
        return cls(**params)


def _weak_vectors(x, policy, rng):
    if policy.jitter_sigma > 0:
        x = x + rng.normal(0.0, policy.jitter_sigma, size=x.shape)
    return x


def _weak_image(img, policy, rng):
    if policy.flip_prob > 0 and rng.random() < policy.flip_prob:
        img = img[:, ::-1]
    s = policy.shift_max
    if s > 0:
        padded = np.pad(img, s, mode="constant")
        dy, dx = rng.integers(0, 2 * s + 1, size=2)
        img = padded[dy:dy + img.shape[0], dx:dx + img.shape[1]]
    if policy.jitter_sigma > 0:
        img = img + rng.normal(0.0, policy.jitter_sigma, size=img.shape)
    return img


def _strong_vector(x, name, policy, rng):
    m = policy.magnitude
    if name == "jitter":
        return x + rng.normal(0.0, m * policy.feature_scale, size=x.shape)
    if name == "dropout":
        # inverted dropout keeps the expected feature vector unchanged
        return x * (rng.random(x.shape) >= m) / (1.0 - m) if m < 1.0 else np.zeros_like(x)
    if name == "scale":
        return x * rng.uniform(1.0 - m, 1.0 + m)
    if name == "rotate2d":
        if x.shape[0] < 2:
            return x
        i, j = rng.choice(x.shape[0], size=2, replace=False)
        theta = rng.uniform(-m * math.pi, m * math.pi)
        c, s = math.cos(theta), math.sin(theta)
        out = x.copy()
        out[i], out[j] = c * x[i] - s * x[j], s * x[i] + c * x[j]
        return out
    raise ConfigurationError(f"transform {name!r} does not apply to vectors")


def _strong_image(img, name, policy, rng):
    m = policy.magnitude
    if name == "invert":
        return 1.0 - img
    if name == "rotate":
        angle = rng.uniform(-30.0 * m, 30.0 * m)
        return ndimage.rotate(img, angle, reshape=False, order=1, mode="constant")
    if name == "translate":
        limit = m * img.shape[1] / 3.0
        dy, dx = rng.uniform(-limit, limit, size=2)
        return ndimage.shift(img, (dy, dx), order=1, mode="constant")
    if name == "contrast":
        factor = rng.uniform(1.0 - m, 1.0 + m)
        mean = img.mean()
        return np.clip(mean + factor * (img - mean), 0.0, 1.0)
    raise ConfigurationError(f"transform {name!r} does not apply to images")


def augment(features, policy, view, rng):
    """Return one augmented copy of a single sample (vector or 2-D image)."""
    x = np.asarray(features, dtype=np.float64)
    image = x.ndim == 2
    if view == "weak":
        return _weak_image(x, policy, rng) if image else _weak_vectors(x, policy, rng)
    if view != "strong":
        raise ConfigurationError(f"unknown view {view!r}")
    picks = rng.choice(len(policy.transform_pool), size=policy.picks_per_sample, replace=False)
    for k in picks:
        name = policy.transform_pool[k]
        x = _strong_image(x, name, policy, rng) if image else _strong_vector(x, name, policy, rng)
    return x


def augment_batch(features, policy, view, rng, image_shape=None):
    """Augment each row of ``features``; rows are consumed in order from ``rng``."""
    if view == "weak" and image_shape is None:
        return _weak_vectors(features, policy, rng)
    out = np.empty_like(features)
    for i, row in enumerate(features):
        sample = row if image_shape is None else row.reshape(image_shape)
        out[i] = augment(sample, policy, view, rng).reshape(-1)
    return out


# -- batching ----------------------------------------------------------------

@dataclass
class BatchViews:
    weak: np.ndarray
    strong: np.ndarray
    labels: np.ndarray
    sample_ids: np.ndarray
    true_labels: np.ndarray | None = None

    def __len__(self):
        return self.labels.shape[0]

    @property
    def flipped(self):
        if self.true_labels is None:
            return None
        return self.labels != self.true_labels


def epoch_order(dataset, oversample, rng):
    n = len(dataset)
    if not oversample:
        return rng.permutation(n)
    counts = dataset.class_counts()
    weights = 1.0 / counts[dataset.labels]
    return rng.choice(n, size=n, replace=True, p=weights / weights.sum())


def batch_iterator(dataset, batch_size, oversample=False, policy=None, seed=0, epoch=0):
    """Yield :class:`BatchViews` for one epoch.

    The sample order and every augmentation draw come from a generator seeded
    with ``(seed, epoch)``, so iteration is reproducible.
    """
    if batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1")
    if policy is None:
        policy = AugmentationPolicy.for_dataset(dataset)
    rng = np.random.default_rng([seed, epoch])
    order = epoch_order(dataset, oversample, rng)
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        x = dataset.features[idx]
        weak = augment_batch(x, policy, "weak", rng, dataset.image_shape)
        strong = augment_batch(x, policy, "strong", rng, dataset.image_shape)
        true = None if dataset.true_labels is None else dataset.true_labels[idx]
        yield BatchViews(weak, strong, dataset.labels[idx], dataset.sample_ids[idx], true)
