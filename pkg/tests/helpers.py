"""Independent reference implementations used as test oracles.

Everything here is written with plain Python loops (or the most literal
numpy) so that it shares no code path with the package under test.
"""

import math

import numpy as np

from dnfer.nn import MlpModel


def brute_cross_entropy(probs, labels):
    losses = []
    for row, y in zip(probs, labels):
        losses.append(-math.log(max(float(row[y]), 1e-12)))
    return sum(losses) / len(losses), losses


def brute_kl(p, q):
    total = 0.0
    for a, b in zip(p, q):
        total += a * (math.log(max(a, 1e-12)) - math.log(max(b, 1e-12)))
    return total


def brute_symmetric_kl(p_rows, q_rows):
    vals = [brute_kl(p, q) + brute_kl(q, p) for p, q in zip(p_rows, q_rows)]
    return sum(vals) / len(vals)


def brute_thresholds(probs, labels, num_classes):
    out = {}
    for c in range(num_classes):
        members = [float(probs[i][c]) for i in range(len(labels)) if labels[i] == c]
        if members:
            out[c] = math.fsum(members) / len(members)
    return out


def brute_select(probs, labels, thresholds):
    return [float(probs[i][labels[i]]) >= thresholds[labels[i]] for i in range(len(labels))]


def brute_forward(model, x):
    """Row-by-row forward pass with explicit loops over units."""
    out = []
    for row in np.asarray(x, dtype=float):
        h = list(row)
        for l, (w, b) in enumerate(zip(model.weights, model.biases)):
            z = [sum(w[o, i] * h[i] for i in range(len(h))) + b[o] for o in range(w.shape[0])]
            h = [max(v, 0.0) for v in z] if l < len(model.weights) - 1 else z
        m = max(h)
        e = [math.exp(v - m) for v in h]
        s = sum(e)
        out.append([v / s for v in e])
    return np.array(out)


def brute_objective(model, weak, strong, labels, flags, alpha):
    """Total DNFER loss assembled from the brute-force pieces."""
    pw = brute_forward(model, weak)
    ps = brute_forward(model, strong)
    sel = [i for i, f in enumerate(flags) if f]
    if sel:
        l_sup = (brute_cross_entropy(pw[sel], [labels[i] for i in sel])[0]
                 + brute_cross_entropy(ps[sel], [labels[i] for i in sel])[0])
    else:
        l_sup = 0.0
    l_cons = brute_symmetric_kl(ps, pw)
    return alpha * l_cons + (1 - alpha) * l_sup


def finite_difference_grads(objective, model, h=1e-5):
    """Central differences of ``objective(model)`` for every parameter entry."""
    grads = []
    for p in model.params():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = objective(model)
            p[idx] = old - h
            down = objective(model)
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def random_model(dims, rng, scale=1.0):
    model = MlpModel.init(dims, rng)
    for b in model.biases:
        b[:] = rng.normal(0, 0.1 * scale, size=b.shape)
    return model


def reference_adam(params, grads_seq, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam over a sequence of gradient lists, written element-wise."""
    params = [p.copy() for p in params]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    for t, grads in enumerate(grads_seq, start=1):
        for k, g in enumerate(grads):
            m[k] = b1 * m[k] + (1.0 - b1) * g
            v[k] = b2 * v[k] + (1.0 - b2) * (g * g)
            m_hat = m[k] / (1.0 - b1 ** t)
            v_hat = v[k] / (1.0 - b2 ** t)
            params[k] = params[k] - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params
