"""Per-layer relevance redistribution rules.

Every rule answers the same question: given the relevance assigned to a
layer's outputs, how much belongs to each of its inputs?  Contributions
are the products z = m * w of recorded input activations with weights;
rules differ in how they weight positive versus negative contributions.

Conventions shared by all rules:

* inputs of arbitrary sign are supported by splitting both activations
  and weights into signed parts, so z+ = m+w+ + m-w- and
  z- = m+w- + m-w+;
* vanishing denominators are nudged by ``stabilizer * sign(d)`` with
  sign(0) taken as +1;
* layer biases receive no relevance except in the sink-layer
  initialization, which absorbs the target bias before normalizing.
"""

import numpy as np

from .. import tensor as T
from ..errors import ConfigError, DegenerateLayerError, DegenerateLogitError
from ..model import LayerSpec
from ..tensor import DTYPE


def _signp(x: np.ndarray) -> np.ndarray:
    """Sign with sign(0) = +1."""
    return np.where(np.asarray(x) >= 0, DTYPE(1), DTYPE(-1))


def _stabilized(d: np.ndarray, stabilizer: float) -> np.ndarray:
    return d + DTYPE(stabilizer) * _signp(d)


class AffineOps:
    """Forward/adjoint application of one affine node's weights.

    Wraps Dense and Conv2D weights (with positive/negative variants) and
    treats average pooling as a fixed all-positive uniform-weight
    convolution, so a single rule implementation covers all four kinds.
    """

    def __init__(self, spec: LayerSpec, in_shape):
        self.spec = spec
        self.in_shape = tuple(in_shape)
        if spec.kind in ("Dense", "Conv2D"):
            w = spec.w
            self._w = {
                "full": w,
                "pos": np.maximum(w, DTYPE(0)),
                "neg": np.minimum(w, DTYPE(0)),
            }
        elif spec.kind not in ("AvgPool2D", "GlobalAvgPool"):
            raise ConfigError(f"no affine interpretation for kind {spec.kind!r}")

    def apply(self, x: np.ndarray, variant: str = "full") -> np.ndarray:
        kind = self.spec.kind
        if kind == "Dense":
            return T.matmul(x[None, :], self._w[variant])[0]
        if kind == "Conv2D":
            return T.conv2d(x, self._w[variant], None, self.spec.stride, self.spec.pad)
        if kind == "AvgPool2D":
            if variant == "neg":
                return np.zeros_like(T.avgpool2d(x, self.spec.kernel, self.spec.stride))
            return T.avgpool2d(x, self.spec.kernel, self.spec.stride)
        if variant == "neg":
            return np.zeros(x.shape[0], dtype=DTYPE)
        return T.global_avgpool2d(x)

    def apply_t(self, s: np.ndarray, variant: str = "full") -> np.ndarray:
        kind = self.spec.kind
        if kind == "Dense":
            return T.matmul(self._w[variant], s[:, None])[:, 0]
        if kind == "Conv2D":
            return T.conv2d_input_grad(
                s, self._w[variant], self.in_shape, self.spec.stride, self.spec.pad
            )
        if variant == "neg":
            return np.zeros(self.in_shape, dtype=DTYPE)
        if kind == "AvgPool2D":
            k = self.spec.kernel
            spread = T.avgpool2d_spread(s, self.in_shape, k, self.spec.stride)
            return spread / DTYPE(k * k)
        c, h, w = self.in_shape
        return np.broadcast_to(s[:, None, None] / DTYPE(h * w), (c, h, w)).astype(DTYPE)


def _signed_parts(m: np.ndarray):
    return np.maximum(m, DTYPE(0)), np.minimum(m, DTYPE(0))


def _sum_pos(ops: AffineOps, mp, mn) -> np.ndarray:
    return ops.apply(mp, "pos") + ops.apply(mn, "neg")


def _sum_neg(ops: AffineOps, mp, mn) -> np.ndarray:
    return ops.apply(mp, "neg") + ops.apply(mn, "pos")


def _back_pos(ops: AffineOps, mp, mn, s) -> np.ndarray:
    return mp * ops.apply_t(s, "pos") + mn * ops.apply_t(s, "neg")


def _back_neg(ops: AffineOps, mp, mn, s) -> np.ndarray:
    return mp * ops.apply_t(s, "neg") + mn * ops.apply_t(s, "pos")


def lrp_epsilon_layer(
    r_next: np.ndarray,
    spec: LayerSpec,
    m: np.ndarray,
    epsilon: float = 1e-6,
    stabilizer: float = 1e-9,
) -> np.ndarray:
    """Proportional rule: each input receives z / (sum z + eps*sign) of
    its output's relevance."""
    ops = AffineOps(spec, m.shape)
    z_sum = ops.apply(m, "full")
    denom = z_sum + DTYPE(epsilon) * _signp(z_sum)
    denom = np.where(denom == 0, DTYPE(stabilizer), denom)
    s = r_next / denom
    return m * ops.apply_t(s, "full")


def lrp_alphabeta_layer(
    r_next: np.ndarray,
    spec: LayerSpec,
    m: np.ndarray,
    alpha: float = 2.0,
    beta: float = 1.0,
    stabilizer: float = 1e-9,
) -> np.ndarray:
    """Signed-split rule: positive and negative contributions are
    normalized separately and recombined as alpha*positive - beta*negative."""
    if abs(alpha - beta - 1.0) > 1e-12:
        raise ConfigError(f"alpha - beta must equal 1, got {alpha} - {beta}")
    ops = AffineOps(spec, m.shape)
    mp, mn = _signed_parts(m)
    sp = r_next / _stabilized(_sum_pos(ops, mp, mn), stabilizer)
    sn = r_next / _stabilized(_sum_neg(ops, mp, mn), stabilizer)
    return DTYPE(alpha) * _back_pos(ops, mp, mn, sp) - DTYPE(beta) * _back_neg(
        ops, mp, mn, sn
    )


def rap_absolute_influence_init(
    r_logit: float,
    spec: LayerSpec,
    m: np.ndarray,
    target: int,
    stabilizer: float = 1e-9,
) -> np.ndarray:
    """Sink-layer initialization: signed contributions, bias absorption,
    absolute normalization.

    Each penultimate neuron first receives relevance proportional to its
    contribution to the target logit, scaled by (R + b) / R to absorb
    the sink bias.  The signed values are then replaced by magnitudes
    rescaled so their total is preserved: the result carries one common
    sign and is ordered exactly like the absolute contributions.
    """
    if r_logit == 0:
        raise DegenerateLogitError("target logit is zero; cannot normalize relevance")
    w_col = spec.w[:, target]
    bias = DTYPE(0) if spec.b is None else spec.b[target]
    z = m * w_col
    rel = z * ((DTYPE(r_logit) + bias) / DTYPE(r_logit))
    total = rel.sum()
    abs_total = np.abs(rel).sum()
    if abs_total == 0:
        return np.zeros_like(rel)
    return np.abs(rel) * (total / abs_total)


def rap_layer_propagate(
    r_next: np.ndarray,
    spec: LayerSpec,
    m: np.ndarray,
    stabilizer: float = 1e-9,
) -> np.ndarray:
    """Relative-influence rule with uniform shifting.

    Three steps per layer transition:

    1. split off the share of each output's relevance that flowed in
       through negative contributions:
       nu = r * sum|z-| / (sum|z+| + sum|z-|);
    2. deliver the full relevance through positive contributions and nu
       through negative ones, each proportionally to magnitude; this
       over-allocates by the amount routed twice;
    3. subtract the realized over-allocation (delivered total minus
       incoming total) evenly from all activated inputs (m != 0),
       pushing the least influential into negative relevance.

    On layers where every output has at least one positive contribution
    the realized over-allocation equals sum(nu); measuring it directly
    keeps the output sum equal to the input sum even on outputs fed only
    by negative (or only bias) contributions, so conservation always
    holds.
    """
    ops = AffineOps(spec, m.shape)
    mp, mn = _signed_parts(m)
    z_pos = _sum_pos(ops, mp, mn)
    z_neg = _sum_neg(ops, mp, mn)
    nu = r_next * (-z_neg) / _stabilized(z_pos - z_neg, stabilizer)
    sp = r_next / _stabilized(z_pos, stabilizer)
    sn = nu / _stabilized(z_neg, stabilizer)
    delivered = _back_pos(ops, mp, mn, sp) + _back_neg(ops, mp, mn, sn)
    active = m != 0
    n_active = int(np.count_nonzero(active))
    if n_active == 0:
        raise DegenerateLayerError(f"layer {spec.id!r} has no activated neurons")
    over_allocation = delivered.sum(dtype=np.float64) - r_next.sum(dtype=np.float64)
    shift = DTYPE(over_allocation / n_active)
    return delivered - shift * active.astype(DTYPE)


def zbeta_input_layer(
    r_next: np.ndarray,
    spec: LayerSpec,
    x: np.ndarray,
    low: np.ndarray,
    high: np.ndarray,
    stabilizer: float = 1e-9,
) -> np.ndarray:
    """Bounded-input rule for the layer that touches the image.

    Pixel contributions are measured against the input domain bounds:
    z = x*w - low*w+ - high*w-, normalized per output.  Requires
    low <= high per channel.
    """
    low_img = _bounds_like(x, low)
    high_img = _bounds_like(x, high)
    if np.any(low_img > high_img):
        raise ConfigError("input bounds must satisfy low <= high")
    ops = AffineOps(spec, x.shape)
    z = (
        ops.apply(x, "full")
        - ops.apply(low_img, "pos")
        - ops.apply(high_img, "neg")
    )
    s = r_next / _stabilized(z, stabilizer)
    return (
        x * ops.apply_t(s, "full")
        - low_img * ops.apply_t(s, "pos")
        - high_img * ops.apply_t(s, "neg")
    )


def _bounds_like(x: np.ndarray, bound) -> np.ndarray:
    """Broadcast a scalar or per-channel bound to the input's shape."""
    b = np.asarray(bound, dtype=DTYPE).reshape(-1)
    if b.size == 1:
        return np.full(x.shape, b[0], dtype=DTYPE)
    if x.ndim == 3 and b.size == x.shape[0]:
        return np.broadcast_to(b[:, None, None], x.shape).astype(DTYPE)
    if x.ndim == 1 and b.size == x.size:
        return b.copy()
    raise ConfigError(
        f"bounds of size {b.size} do not broadcast to input shape {x.shape}"
    )


def add_split_epsilon(
    r_next: np.ndarray, a: np.ndarray, b: np.ndarray,
    epsilon: float = 1e-6, stabilizer: float = 1e-9,
) -> tuple[np.ndarray, np.ndarray]:
    """Proportional split of elementwise-sum relevance between branches."""
    denom = (a + b) + DTYPE(epsilon) * _signp(a + b)
    denom = np.where(denom == 0, DTYPE(stabilizer), denom)
    return a / denom * r_next, b / denom * r_next


def add_split_alphabeta(
    r_next: np.ndarray, a: np.ndarray, b: np.ndarray,
    alpha: float = 2.0, beta: float = 1.0, stabilizer: float = 1e-9,
) -> tuple[np.ndarray, np.ndarray]:
    """Signed-split of elementwise-sum relevance between branches."""
    ap, an = _signed_parts(a)
    bp, bn = _signed_parts(b)
    sp = r_next / _stabilized(ap + bp, stabilizer)
    sn = r_next / _stabilized(an + bn, stabilizer)
    ra = DTYPE(alpha) * ap * sp - DTYPE(beta) * an * sn
    rb = DTYPE(alpha) * bp * sp - DTYPE(beta) * bn * sn
    return ra, rb


def add_split_rap(
    r_next: np.ndarray, a: np.ndarray, b: np.ndarray, stabilizer: float = 1e-9
) -> tuple[np.ndarray, np.ndarray]:
    """Relative-influence split between branches with the uniform shift
    computed jointly over both branch tensors."""
    ap, an = _signed_parts(a)
    bp, bn = _signed_parts(b)
    z_pos = ap + bp
    z_neg = an + bn
    nu = r_next * (-z_neg) / _stabilized(z_pos - z_neg, stabilizer)
    sp = r_next / _stabilized(z_pos, stabilizer)
    sn = nu / _stabilized(z_neg, stabilizer)
    ra_bar = ap * sp + an * sn
    rb_bar = bp * sp + bn * sn
    active_a = a != 0
    active_b = b != 0
    n_active = int(np.count_nonzero(active_a)) + int(np.count_nonzero(active_b))
    if n_active == 0:
        raise DegenerateLayerError("Add node has no activated branch neurons")
    over_allocation = (
        ra_bar.sum(dtype=np.float64)
        + rb_bar.sum(dtype=np.float64)
        - r_next.sum(dtype=np.float64)
    )
    shift = DTYPE(over_allocation / n_active)
    return ra_bar - shift * active_a.astype(DTYPE), rb_bar - shift * active_b.astype(DTYPE)
