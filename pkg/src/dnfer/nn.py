"""A small ReLU MLP with softmax output, hand-written gradients and Adam.

Weights are stored as ``(out, in)`` matrices, so a layer computes
``h @ W.T + b``.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError, NumericError, ParseError
from .io import write_atomic
from .losses import PROB_FLOOR, mask_flags, consistency_loss, supervision_loss, total_loss


@dataclass
class MlpModel:
    layer_dims: list
    weights: list
    biases: list

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ConfigurationError(f"bad layer_dims {self.layer_dims}")
        n_layers = len(self.layer_dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ConfigurationError("parameter count does not match layer_dims")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.layer_dims[l + 1], self.layer_dims[l])
            if w.shape != want or b.shape != (want[0],):
                raise ConfigurationError(
                    f"layer {l}: weight {w.shape} / bias {b.shape}, expected {want}")

    @classmethod
    def init(cls, layer_dims, rng):
        """Glorot-uniform weights, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(list(layer_dims), weights, biases)

    @property
    def num_layers(self):
        return len(self.weights)

    @property
    def num_classes(self):
        return self.layer_dims[-1]

    def params(self):
        """Flat list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def with_params(self, params):
        return MlpModel(self.layer_dims, list(params[0::2]), list(params[1::2]))

    def copy(self):
        return self.with_params([p.copy() for p in self.params()])


@dataclass
class GradientSet:
    weights: list
    biases: list
    loss: float
    l_sup: float = 0.0
    l_cons: float = 0.0

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, model, **kwargs):
        return cls([np.zeros_like(p) for p in model.params()],
                   [np.zeros_like(p) for p in model.params()], **kwargs)


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cache(model, inputs):
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0]:
        raise ConfigurationError(
            f"input shape {x.shape} incompatible with input dim {model.layer_dims[0]}")
    if not np.all(np.isfinite(x)):
        raise InputError("non-finite input features")
    activations = [x]
    pre = []
    h = x
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.T + b
        pre.append(z)
        if l < model.num_layers - 1:
            h = np.maximum(z, 0.0)
            activations.append(h)
    return softmax(pre[-1]), activations, pre


def forward(model, inputs):
    """Class posteriors for each input row."""
    probs, _, _ = _forward_cache(model, inputs)
    return probs


def _softmax_backward(p, g):
    return p * (g - np.sum(g * p, axis=1, keepdims=True))


def _mlp_backward(model, activations, pre, d_logits, grads_w, grads_b):
    dz = d_logits
    for l in range(model.num_layers - 1, -1, -1):
        grads_w[l] += dz.T @ activations[l]
        grads_b[l] += dz.sum(axis=0)
        if l > 0:
            dz = (dz @ model.weights[l]) * (pre[l - 1] > 0)
            if not np.all(np.isfinite(dz)):
                raise NumericError(f"non-finite gradient entering layer {l - 1}", layer=l - 1)


def _sup_logit_grad(p, labels, flags):
    n_sel = int(flags.sum())
    grad = np.zeros_like(p)
    if n_sel == 0:
        return grad
    rows = np.flatnonzero(flags)
    sub = p[rows].copy()
    sub[np.arange(len(rows)), labels[rows]] -= 1.0
    # a floored log has zero derivative
    sub[p[rows, labels[rows]] < PROB_FLOOR] = 0.0
    grad[rows] = sub / n_sel
    return grad


def _cons_prob_grad(a, b):
    """d/da of sum_l (a - b)(log a - log b) with floored logs."""
    la = np.log(np.maximum(a, PROB_FLOOR))
    lb = np.log(np.maximum(b, PROB_FLOOR))
    ratio = np.where(a >= PROB_FLOOR, (a - b) / np.maximum(a, PROB_FLOOR), 0.0)
    return la - lb + ratio


def backward(model, weak, strong, labels, selection, alpha):
    """Gradients of ``alpha * L_cons + (1 - alpha) * L_sup`` w.r.t. every parameter.

    ``selection`` is a boolean vector (or an object with ``.flags``) restricting
    the supervision term. The consistency term is differentiated through both
    views.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha must lie in [0, 1], got {alpha}")
    labels = np.asarray(labels, dtype=np.int64)
    flags = mask_flags(selection)
    p_w, act_w, pre_w = _forward_cache(model, weak)
    p_s, act_s, pre_s = _forward_cache(model, strong)
    for name, z in (("weak", pre_w[-1]), ("strong", pre_s[-1])):
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite logits on {name} view", layer=model.num_layers - 1)

    l_sup = supervision_loss(p_w, p_s, labels, flags)
    l_cons = consistency_loss(p_w, p_s)
    loss = total_loss(alpha, l_sup, l_cons)

    batch = p_w.shape[0]
    d_w = np.zeros_like(p_w)
    d_s = np.zeros_like(p_s)
    if alpha < 1.0:
        d_w += (1.0 - alpha) * _sup_logit_grad(p_w, labels, flags)
        d_s += (1.0 - alpha) * _sup_logit_grad(p_s, labels, flags)
    if alpha > 0.0:
        d_w += alpha * _softmax_backward(p_w, _cons_prob_grad(p_w, p_s)) / batch
        d_s += alpha * _softmax_backward(p_s, _cons_prob_grad(p_s, p_w)) / batch

    grads_w = [np.zeros_like(w) for w in model.weights]
    grads_b = [np.zeros_like(b) for b in model.biases]
    _mlp_backward(model, act_w, pre_w, d_w, grads_w, grads_b)
    _mlp_backward(model, act_s, pre_s, d_s, grads_w, grads_b)
    for l, (gw, gb) in enumerate(zip(grads_w, grads_b)):
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NumericError(f"non-finite gradient in layer {l}", layer=l)
    return GradientSet(grads_w, grads_b, float(loss), float(l_sup), float(l_cons))


def adam_step(model, grads, state, lr):
    """One bias-corrected Adam update; returns ``(new_model, new_state)``."""
    if lr <= 0:
        raise ConfigurationError(f"learning rate must be positive, got {lr}")
    params = model.params()
    g_list = grads.params() if isinstance(grads, GradientSet) else list(grads)
    if len(g_list) != len(params) or len(state.first_moment) != len(params):
        raise ConfigurationError("gradient / optimizer state do not match the model")
    t = state.step_count + 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, g_list, state.first_moment, state.second_moment):
        if g.shape != p.shape or m.shape != p.shape or v.shape != p.shape:
            raise ConfigurationError(f"shape mismatch: param {p.shape}, grad {g.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return model.with_params(new_params), AdamState(new_m, new_v, t, b1, b2, eps)


def lr_schedule(initial_lr, epoch, decay=0.95):
    return initial_lr * decay ** epoch


# -- checkpoints -------------------------------------------------------------

CHECKPOINT_MAGIC = b"DNFERCKP"
CHECKPOINT_VERSION = 1


def checkpoint_bytes(model, state=None):
    parts = [CHECKPOINT_MAGIC,
             struct.pack("<II", CHECKPOINT_VERSION, len(model.layer_dims)),
             struct.pack(f"<{len(model.layer_dims)}I", *model.layer_dims)]
    parts += [p.astype("<f8").tobytes() for p in model.params()]
    if state is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01")
        parts.append(struct.pack("<Qddd", state.step_count, state.beta1,
                                 state.beta2, state.epsilon))
        parts += [m.astype("<f8").tobytes() for m in state.first_moment]
        parts += [v.astype("<f8").tobytes() for v in state.second_moment]
    return b"".join(parts)


@dataclass
class _Reader:
    buf: bytes
    pos: int = field(default=0)

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise ParseError(f"checkpoint truncated at byte {self.pos} while reading {what}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def arrays(self, shapes, what):
        out = []
        for shape in shapes:
            count = int(np.prod(shape))
            raw = self.take(8 * count, what)
            out.append(np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape))
        return out


def parse_checkpoint(buf):
    r = _Reader(buf)
    magic = r.take(len(CHECKPOINT_MAGIC), "magic")
    if magic != CHECKPOINT_MAGIC:
        raise ParseError(f"bad checkpoint magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    version, n_dims = struct.unpack("<II", r.take(8, "header"))
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}")
    dims = list(struct.unpack(f"<{n_dims}I", r.take(4 * n_dims, "layer_dims")))
    shapes = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        shapes += [(fan_out, fan_in), (fan_out,)]
    params = r.arrays(shapes, "parameters")
    model = MlpModel(dims, params[0::2], params[1::2])
    flag = r.take(1, "optimizer flag")
    state = None
    if flag == b"\x01":
        step, b1, b2, eps = struct.unpack("<Qddd", r.take(32, "optimizer header"))
        m = r.arrays(shapes, "first moments")
        v = r.arrays(shapes, "second moments")
        state = AdamState(m, v, step, b1, b2, eps)
    elif flag != b"\x00":
        raise ParseError(f"bad optimizer flag at byte {r.pos - 1}")
    if r.pos != len(buf):
        raise ParseError(f"{len(buf) - r.pos} trailing bytes after checkpoint")
    return model, state


def save_checkpoint(path, model, state=None):
    write_atomic(path, checkpoint_bytes(model, state))


def load_checkpoint(path):
    with open(path, "rb") as f:
        return parse_checkpoint(f.read())
