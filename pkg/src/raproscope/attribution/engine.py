"""Attribution dispatcher: walks the graph backwards applying one rule set.

Propagation methods (relative-influence, proportional, signed-split)
redistribute the target logit node by node in reverse topological
order; gradient-family methods reuse the analytic backward pass.
Relevance arriving at a node from several consumers is accumulated in
sorted consumer order, so results are independent of the traversal
order used to build equal graphs.
"""

import numpy as np

from .. import tensor as T
from ..errors import ShapeError, UnsupportedLayerError
from ..inference import ForwardTrace, backward, forward
from ..model import INPUT_ID, OUTPUT_ID, ModelGraph
from . import rules
from .config import (
    GRADIENT,
    GUIDED_BACKPROP,
    INPUT_X_GRADIENT,
    INTEGRATED_GRADIENTS,
    LRP_ALPHABETA,
    LRP_EPSILON,
    PROPAGATION_METHODS,
    RAP,
    AttributionConfig,
    RelevanceMap,
)


def attribute(
    graph: ModelGraph, trace: ForwardTrace, config: AttributionConfig
) -> RelevanceMap:
    """Compute the input attribution for one traced prediction.

    ``config.target`` of None explains the predicted class.  For the
    propagation methods the result carries per-node relevance maps and a
    conserved total; the gradient family only fills the input entry.
    """
    config.validate()
    if trace.activations[INPUT_ID].shape != graph.input_shape:
        raise ShapeError("trace does not belong to this graph (input shape differs)")
    target = trace.predicted if config.target is None else int(config.target)
    if not 0 <= target < graph.num_classes:
        raise IndexError(f"target class {target} out of range [0, {graph.num_classes})")
    logit = float(trace.logits[target])
    image = trace.activations[INPUT_ID]

    if config.method in PROPAGATION_METHODS:
        per_node, conserved = _propagate(graph, trace, config, target, logit)
        return RelevanceMap(config.method, target, logit, per_node, conserved)

    if config.method == GRADIENT:
        r0 = backward(graph, trace, target)
    elif config.method == INPUT_X_GRADIENT:
        r0 = image * backward(graph, trace, target)
    elif config.method == GUIDED_BACKPROP:
        r0 = backward(graph, trace, target, guided=True)
    elif config.method == INTEGRATED_GRADIENTS:
        r0 = integrated_gradients(graph, image, config, target=target)
    else:
        raise UnsupportedLayerError(OUTPUT_ID, config.method)
    return RelevanceMap(config.method, target, logit, {INPUT_ID: r0}, None)


def integrated_gradients(
    graph: ModelGraph,
    image: np.ndarray,
    config: AttributionConfig,
    target: int | None = None,
) -> np.ndarray:
    """Path-integrated gradient attribution.

    Averages the gradient along the straight path from the baseline to
    the image with a right-endpoint Riemann sum of ``ig_steps`` points,
    then scales elementwise by (image - baseline).
    """
    image = T.tensor(image)
    baseline = (
        np.zeros_like(image) if config.ig_baseline is None else T.tensor(config.ig_baseline)
    )
    if baseline.shape != image.shape:
        raise ShapeError(f"baseline shape {baseline.shape} != image shape {image.shape}")
    if target is None:
        target = forward(graph, image).predicted
    steps = int(config.ig_steps)
    diff = image - baseline
    total = np.zeros_like(image)
    for k in range(1, steps + 1):
        point = baseline + T.DTYPE(k / steps) * diff
        trace_k = forward(graph, point)
        total = total + backward(graph, trace_k, target)
    return diff * (total / T.DTYPE(steps))


def _propagate(
    graph: ModelGraph,
    trace: ForwardTrace,
    config: AttributionConfig,
    target: int,
    logit: float,
):
    method = config.method
    stab = config.stabilizer
    sink_id = graph.sink.id
    low = graph.input_low if config.input_low is None else config.input_low
    high = graph.input_high if config.input_high is None else config.input_high

    seed = np.zeros(graph.num_classes, dtype=T.DTYPE)
    seed[target] = T.DTYPE(logit)
    pieces: dict[str, list[tuple[str, np.ndarray]]] = {OUTPUT_ID: [("", seed)]}

    def emit(src: str, from_id: str, r: np.ndarray) -> None:
        pieces.setdefault(src, []).append((from_id, r))

    def collect(nid: str) -> np.ndarray:
        parts = sorted(pieces.pop(nid), key=lambda kv: kv[0])
        total = parts[0][1].astype(T.DTYPE)
        for _, p in parts[1:]:
            total = total + p
        return total

    per_node: dict[str, np.ndarray] = {}
    conserved_total = logit

    for nid in reversed(graph.order):
        if nid not in pieces:
            continue
        r = collect(nid)
        per_node[nid] = r
        spec = graph.nodes[nid]
        kind = spec.kind
        if kind == "Input":
            continue
        m = trace.activations[spec.inputs[0]] if spec.inputs else None
        if kind == "Output":
            emit(spec.inputs[0], nid, r)
        elif kind == "ReLU":
            emit(spec.inputs[0], nid, r)
        elif kind == "Flatten":
            emit(spec.inputs[0], nid, r.reshape(m.shape))
        elif kind == "MaxPool2D":
            emit(spec.inputs[0], nid, T.maxpool_scatter(r, trace.pool_argmax[nid], m.shape))
        elif kind == "Add":
            a, b = (trace.activations[s] for s in spec.inputs)
            if method == RAP:
                ra, rb = rules.add_split_rap(r, a, b, stab)
            elif method == LRP_EPSILON:
                ra, rb = rules.add_split_epsilon(r, a, b, config.epsilon, stab)
            else:
                ra, rb = rules.add_split_alphabeta(r, a, b, config.alpha, config.beta, stab)
            emit(spec.inputs[0], nid + ".a", ra)
            emit(spec.inputs[1], nid + ".b", rb)
        elif kind in ("Dense", "Conv2D", "AvgPool2D", "GlobalAvgPool"):
            if method == RAP and nid == sink_id:
                r_prev = rules.rap_absolute_influence_init(logit, spec, m, target, stab)
                conserved_total = float(np.sum(r_prev, dtype=np.float64))
            elif (
                method == RAP
                and kind in ("Dense", "Conv2D")
                and spec.inputs[0] == INPUT_ID
            ):
                r_prev = rules.zbeta_input_layer(r, spec, m, low, high, stab)
            elif method == RAP:
                r_prev = rules.rap_layer_propagate(r, spec, m, stab)
            elif method == LRP_EPSILON:
                r_prev = rules.lrp_epsilon_layer(r, spec, m, config.epsilon, stab)
            else:
                r_prev = rules.lrp_alphabeta_layer(
                    r, spec, m, config.alpha, config.beta, stab
                )
            emit(spec.inputs[0], nid, r_prev)
        else:
            raise UnsupportedLayerError(nid, method)

    for nid, r in per_node.items():
        T.check_finite(r, f"relevance at {nid}")
    return per_node, conserved_total
