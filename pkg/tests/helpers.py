"""Shared fixture builders and brute-force oracles.

The oracles deliberately re-derive every rule with explicit loops over
single contributions in float64, independent of the vectorized engine
paths they are used to check.
"""

import numpy as np

from raproscope import LayerSpec, build_graph

F32 = np.float32


def dense(nid, inputs, w, b=None):
    w = np.asarray(w, dtype=F32)
    b = None if b is None else np.asarray(b, dtype=F32)
    return LayerSpec(nid, "Dense", tuple(inputs), w=w, b=b)


def mlp_graph(rng, widths, bias=True, weight_scale=1.0):
    """Fully connected ReLU stack; the last Dense layer is the sink."""
    layers = []
    prev = "input"
    for i, (n_in, n_out) in enumerate(zip(widths, widths[1:])):
        w = rng.normal(0, weight_scale / np.sqrt(n_in), (n_in, n_out)).astype(F32)
        b = rng.normal(0, 0.1, n_out).astype(F32) if bias else None
        nid = f"fc{i}"
        layers.append(LayerSpec(nid, "Dense", (prev,), w=w, b=b))
        prev = nid
        if n_out != widths[-1] or i < len(widths) - 2:
            layers.append(LayerSpec(f"relu{i}", "ReLU", (prev,)))
            prev = f"relu{i}"
    return build_graph(layers, input_shape=(widths[0],), num_classes=widths[-1])


def random_chain_graph(rng, with_bias=True):
    """Random small conv/pool/dense chain ending in a Dense sink."""
    channels = int(rng.integers(1, 3))
    size = int(rng.integers(6, 11))
    layers = []
    prev = "input"
    shape = (channels, size, size)
    n_blocks = int(rng.integers(1, 4))
    idx = 0
    for _ in range(n_blocks):
        kind = rng.choice(["conv", "maxpool", "avgpool"])
        c, h, w = shape
        if kind == "conv" or h < 4:
            f = int(rng.integers(2, 5))
            k = 3 if h >= 3 else 1
            wt = rng.normal(0, 1.0 / np.sqrt(c * k * k), (f, c, k, k)).astype(F32)
            b = rng.normal(0, 0.1, f).astype(F32) if with_bias else None
            layers.append(
                LayerSpec(f"conv{idx}", "Conv2D", (prev,), stride=1, pad=k // 2, w=wt, b=b)
            )
            prev = f"conv{idx}"
            layers.append(LayerSpec(f"relu{idx}", "ReLU", (prev,)))
            prev = f"relu{idx}"
            shape = (f, h, w)
        elif kind == "maxpool" and h % 2 == 0:
            layers.append(LayerSpec(f"mp{idx}", "MaxPool2D", (prev,), kernel=2, stride=2))
            prev = f"mp{idx}"
            shape = (c, h // 2, w // 2)
        elif h % 2 == 0:
            layers.append(LayerSpec(f"ap{idx}", "AvgPool2D", (prev,), kernel=2, stride=2))
            prev = f"ap{idx}"
            shape = (c, h // 2, w // 2)
        idx += 1
    layers.append(LayerSpec("flat", "Flatten", (prev,)))
    n_feat = int(np.prod(shape))
    n_hidden = int(rng.integers(4, 9))
    wt = rng.normal(0, 1.0 / np.sqrt(n_feat), (n_feat, n_hidden)).astype(F32)
    b = rng.normal(0, 0.1, n_hidden).astype(F32) if with_bias else None
    layers.append(LayerSpec("fc0", "Dense", ("flat",), w=wt, b=b))
    layers.append(LayerSpec("relu_fc", "ReLU", ("fc0",)))
    n_cls = int(rng.integers(2, 5))
    wt = rng.normal(0, 1.0 / np.sqrt(n_hidden), (n_hidden, n_cls)).astype(F32)
    b = rng.normal(0, 0.1, n_cls).astype(F32) if with_bias else None
    layers.append(LayerSpec("fc1", "Dense", ("relu_fc",), w=wt, b=b))
    return build_graph(layers, input_shape=(channels, size, size), num_classes=n_cls)


# --- brute-force oracles (float64, explicit edge loops) -----------------


def oracle_lrp_epsilon(m, w, r_next, epsilon):
    """Proportional rule evaluated edge by edge."""
    m = np.asarray(m, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    r_next = np.asarray(r_next, dtype=np.float64)
    out = np.zeros(m.size)
    for j in range(w.shape[1]):
        z_sum = sum(m[i] * w[i, j] for i in range(m.size))
        denom = z_sum + epsilon * (1.0 if z_sum >= 0 else -1.0)
        for i in range(m.size):
            out[i] += (m[i] * w[i, j]) / denom * r_next[j]
    return out


def oracle_lrp_alphabeta(m, w, r_next, alpha, beta, stabilizer=1e-9):
    """Signed-split rule evaluated edge by edge."""
    m = np.asarray(m, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    r_next = np.asarray(r_next, dtype=np.float64)
    out = np.zeros(m.size)
    for j in range(w.shape[1]):
        zp = [max(m[i] * w[i, j], 0.0) for i in range(m.size)]
        zn = [min(m[i] * w[i, j], 0.0) for i in range(m.size)]
        sp = sum(zp)
        sn = sum(zn)
        sp = sp + stabilizer * (1.0 if sp >= 0 else -1.0)
        sn = sn + stabilizer * (1.0 if sn >= 0 else -1.0)
        for i in range(m.size):
            out[i] += (alpha * zp[i] / sp - beta * zn[i] / sn) * r_next[j]
    return out


def oracle_rap_layer(m, w, r_next, stabilizer=1e-9):
    """Relative-influence rule with uniform shift, evaluated edge by edge.

    The shift removes the realized over-allocation, which equals the
    negative-route total whenever every output has at least one positive
    contribution.
    """
    m = np.asarray(m, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    r_next = np.asarray(r_next, dtype=np.float64)
    n_in, n_out = w.shape
    z = np.array([[m[i] * w[i, j] for j in range(n_out)] for i in range(n_in)])
    zp = np.maximum(z, 0.0)
    zn = np.minimum(z, 0.0)

    def stab(d):
        return d + stabilizer * (1.0 if d >= 0 else -1.0)

    nu = np.zeros(n_out)
    for j in range(n_out):
        nu[j] = r_next[j] * np.abs(zn[:, j]).sum() / stab(
            np.abs(zp[:, j]).sum() + np.abs(zn[:, j]).sum()
        )
    bar = np.zeros(n_in)
    for i in range(n_in):
        for j in range(n_out):
            bar[i] += zp[i, j] / stab(zp[:, j].sum()) * r_next[j]
            bar[i] += zn[i, j] / stab(zn[:, j].sum()) * nu[j]
    over_allocation = bar.sum() - r_next.sum()
    gamma = int(np.count_nonzero(m))
    out = bar.copy()
    for i in range(n_in):
        if m[i] != 0:
            out[i] -= over_allocation / gamma
    return out


def oracle_rap_init(m, w_col, bias, logit):
    """Sink initialization evaluated contribution by contribution."""
    m = np.asarray(m, dtype=np.float64)
    w_col = np.asarray(w_col, dtype=np.float64)
    rel = np.array([m[i] * w_col[i] * (logit + bias) / logit for i in range(m.size)])
    total = rel.sum()
    abs_total = np.abs(rel).sum()
    if abs_total == 0:
        return np.zeros_like(rel)
    return np.abs(rel) * total / abs_total


def oracle_zbeta(x, w, r_next, low, high, stabilizer=1e-9):
    """Bounded-input rule evaluated edge by edge."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    r_next = np.asarray(r_next, dtype=np.float64)
    low = np.broadcast_to(np.asarray(low, dtype=np.float64), x.shape)
    high = np.broadcast_to(np.asarray(high, dtype=np.float64), x.shape)
    out = np.zeros(x.size)
    for j in range(w.shape[1]):
        terms = [
            x[i] * w[i, j]
            - low[i] * max(w[i, j], 0.0)
            - high[i] * min(w[i, j], 0.0)
            for i in range(x.size)
        ]
        denom = sum(terms)
        denom = denom + stabilizer * (1.0 if denom >= 0 else -1.0)
        for i in range(x.size):
            out[i] += terms[i] / denom * r_next[j]
    return out


def fig_cancellation_fixture():
    """Layer where one neuron carries the largest contributions but its
    positive and negative shares cancel under the signed-split rule.

    Returns (m, w, r_next): two inputs, two outputs, all |w| equal; the
    first input contributes +3 to output 0 and -3 to output 1.
    """
    m = np.array([3.0, 1.0], dtype=F32)
    w = np.array([[1.0, -1.0], [1.0, 1.0]], dtype=F32)
    r_next = np.array([1.0, 1.5], dtype=F32)
    return m, w, r_next
