"""Training objectives: cross-entropy, symmetric KL, and their DNFER combination.

All terms are batch means so the mixing weight ``alpha`` has the same meaning
for any batch size.
"""

import numpy as np

from .errors import ConfigurationError, InputError

PROB_FLOOR = 1e-12


def _safe_log(p):
    return np.log(np.maximum(p, PROB_FLOOR))


def mask_flags(mask):
    """Boolean flags from a SelectionMask or any boolean array-like."""
    if isinstance(mask, np.ndarray):
        return mask.astype(bool, copy=False)
    return np.asarray(getattr(mask, "flags", mask), dtype=bool)


def _check_labels(labels, n_rows, n_classes):
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != n_rows:
        raise InputError(f"expected {n_rows} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise InputError(f"label out of range [0, {n_classes})")
    return labels.astype(np.int64, copy=False)


def cross_entropy(posteriors, labels):
    """Return ``(mean_loss, per_sample)`` with per_sample[i] = -ln p[i, y_i]."""
    probs = np.asarray(posteriors, dtype=np.float64)
    labels = _check_labels(labels, probs.shape[0], probs.shape[1])
    per_sample = -_safe_log(probs[np.arange(len(labels)), labels])
    mean = float(per_sample.mean()) if per_sample.size else 0.0
    return mean, per_sample


def kl_divergence_rows(p, q):
    """Row-wise KL(p_i || q_i) with both arguments floored inside the log ratio."""
    return np.sum(p * (_safe_log(p) - _safe_log(q)), axis=1)


def symmetric_kl(p, q):
    """Mean over rows of KL(p||q) + KL(q||p)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 2:
        raise InputError(f"posterior shapes differ: {p.shape} vs {q.shape}")
    if p.shape[0] == 0:
        return 0.0
    # (p - q) * (log p - log q) sums both directions in one pass and is
    # exactly symmetric in its arguments.
    per_row = np.sum((p - q) * (_safe_log(p) - _safe_log(q)), axis=1)
    return float(max(per_row.mean(), 0.0))


def supervision_loss(p_w, p_s, labels, mask):
    """CE on weak view + CE on strong view, each averaged over selected rows."""
    p_w = np.asarray(p_w, dtype=np.float64)
    p_s = np.asarray(p_s, dtype=np.float64)
    if p_w.shape[0] == 0:
        raise InputError("supervision loss of an empty batch")
    if p_w.shape != p_s.shape:
        raise InputError(f"view shapes differ: {p_w.shape} vs {p_s.shape}")
    flags = mask_flags(mask)
    if flags.shape != (p_w.shape[0],):
        raise InputError("selection mask is not aligned with the batch")
    labels = _check_labels(labels, p_w.shape[0], p_w.shape[1])
    if not flags.any():
        return 0.0
    l_weak, _ = cross_entropy(p_w[flags], labels[flags])
    l_strong, _ = cross_entropy(p_s[flags], labels[flags])
    return l_weak + l_strong


def consistency_loss(p_w, p_s):
    """Symmetric KL between the strong and weak views over every sample."""
    return symmetric_kl(p_s, p_w)


def total_loss(alpha, l_sup, l_cons):
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * l_cons + (1.0 - alpha) * l_sup
