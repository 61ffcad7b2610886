"""Tracing forward pass and analytic gradient pass over a ModelGraph.

Both passes are pure functions of (graph, image); traces record every
node's output so that propagation rules can replay any layer on its
recorded inputs.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ShapeError, UnsupportedLayerError
from .model import INPUT_ID, OUTPUT_ID, ModelGraph


@dataclass
class ForwardTrace:
    """Per-node activations of one forward pass."""

    activations: dict[str, np.ndarray]
    pool_argmax: dict[str, np.ndarray] = field(default_factory=dict)
    logits: np.ndarray = None
    predicted: int = 0

    def output_of(self, node_id: str) -> np.ndarray:
        return self.activations[node_id]


def forward(graph: ModelGraph, image: np.ndarray) -> ForwardTrace:
    """Run the graph on one image and record the full trace.

    The predicted class is the argmax of the logits; ties resolve to the
    lowest class index.
    """
    image = T.tensor(image)
    if image.shape != graph.input_shape:
        raise ShapeError(
            f"image shape {image.shape} != model input shape {graph.input_shape}"
        )
    acts: dict[str, np.ndarray] = {INPUT_ID: image}
    argmax: dict[str, np.ndarray] = {}
    for nid in graph.order[1:]:
        spec = graph.nodes[nid]
        xs = [acts[s] for s in spec.inputs]
        kind = spec.kind
        if kind == "Dense":
            out = T.matmul(xs[0][None, :], spec.w)[0]
            if spec.b is not None:
                out = out + spec.b
        elif kind == "Conv2D":
            out = T.conv2d(xs[0], spec.w, spec.b, spec.stride, spec.pad)
        elif kind == "MaxPool2D":
            out, idx = T.maxpool2d(xs[0], spec.kernel, spec.stride)
            argmax[nid] = idx
        elif kind == "AvgPool2D":
            out = T.avgpool2d(xs[0], spec.kernel, spec.stride)
        elif kind == "GlobalAvgPool":
            out = T.global_avgpool2d(xs[0])
        elif kind == "ReLU":
            out = T.relu(xs[0])
        elif kind == "Flatten":
            out = T.flatten(xs[0])
        elif kind == "Add":
            out = T.add(xs[0], xs[1])
        elif kind == "Output":
            out = xs[0]
        else:
            raise UnsupportedLayerError(nid, "forward")
        acts[nid] = out
    logits = acts[OUTPUT_ID]
    return ForwardTrace(
        activations=acts,
        pool_argmax=argmax,
        logits=logits,
        predicted=int(np.argmax(logits)),
    )


def backward(
    graph: ModelGraph, trace: ForwardTrace, target_class: int, guided: bool = False
) -> np.ndarray:
    """Gradient of logits[target_class] with respect to the input image.

    With ``guided`` set, negative upstream gradients are additionally
    zeroed at every ReLU.  The gradient at a ReLU kink (input exactly 0)
    is 0, and max pooling routes its gradient entirely to the recorded
    argmax winner.
    """
    if not 0 <= target_class < graph.num_classes:
        raise IndexError(
            f"target class {target_class} out of range [0, {graph.num_classes})"
        )
    seed = np.zeros(graph.num_classes, dtype=T.DTYPE)
    seed[target_class] = 1.0
    # Contributions are summed per node in sorted consumer order so the
    # result does not depend on graph traversal order.
    pieces: dict[str, list[tuple[str, np.ndarray]]] = {OUTPUT_ID: [("", seed)]}

    def collect(nid: str) -> np.ndarray:
        parts = sorted(pieces.pop(nid), key=lambda kv: kv[0])
        total = parts[0][1].astype(T.DTYPE)
        for _, p in parts[1:]:
            total = total + p
        return total

    def emit(src: str, from_id: str, g: np.ndarray) -> None:
        pieces.setdefault(src, []).append((from_id, g))

    grad_input = None
    for nid in reversed(graph.order):
        if nid not in pieces:
            continue
        g = collect(nid)
        spec = graph.nodes[nid]
        kind = spec.kind
        if kind == "Input":
            grad_input = g
            continue
        xs = [trace.activations[s] for s in spec.inputs]
        if kind == "Output":
            emit(spec.inputs[0], nid, g)
        elif kind == "Dense":
            emit(spec.inputs[0], nid, T.matmul(g[None, :], spec.w.T)[0])
        elif kind == "Conv2D":
            emit(
                spec.inputs[0],
                nid,
                T.conv2d_input_grad(g, spec.w, xs[0].shape, spec.stride, spec.pad),
            )
        elif kind == "MaxPool2D":
            emit(spec.inputs[0], nid, T.maxpool_scatter(g, trace.pool_argmax[nid], xs[0].shape))
        elif kind == "AvgPool2D":
            n = spec.kernel * spec.kernel
            emit(
                spec.inputs[0],
                nid,
                T.avgpool2d_spread(g, xs[0].shape, spec.kernel, spec.stride) / T.DTYPE(n),
            )
        elif kind == "GlobalAvgPool":
            c, h, w = xs[0].shape
            emit(
                spec.inputs[0],
                nid,
                np.broadcast_to(g[:, None, None] / T.DTYPE(h * w), (c, h, w)).astype(T.DTYPE),
            )
        elif kind == "ReLU":
            if guided:
                g = np.where(g > 0, g, T.DTYPE(0))
            mask = trace.activations[nid] > 0
            emit(spec.inputs[0], nid, np.where(mask, g, T.DTYPE(0)))
        elif kind == "Flatten":
            emit(spec.inputs[0], nid, g.reshape(xs[0].shape))
        elif kind == "Add":
            emit(spec.inputs[0], nid + ".a", g)
            emit(spec.inputs[1], nid + ".b", np.array(g, copy=True))
        else:
            raise UnsupportedLayerError(nid, "backward")
    return T.check_finite(grad_input, "input gradient")
