"""Model interchange format: load, validate, save, and fold batch norm.

A model is a JSON manifest plus one raw weight blob of contiguous
little-endian float32 values:

* manifest fields: ``version``, ``input_shape``, ``num_classes``,
  ``layers[]``, ``blob``, ``blob_sha256``, ``reference_input``,
  ``reference_logits``, and optional per-channel ``input_low`` /
  ``input_high`` bounds of the normalized input domain.
* each layer entry: ``id``, ``kind``, ``inputs``, kind-specific
  hyperparameters (``stride``, ``pad``, ``kernel``, ``eps``), and a
  ``weights`` table of ``{name: {"offset": bytes, "shape": [...]}}``
  references into the blob.

Weight layouts are fixed: Dense weights are row-major ``[in, out]``,
convolution kernels are ``[out_ch, in_ch, kh, kw]``.  The blob is an
exact partition of all declared tensors with no alignment padding.

Graphs are validated on construction (acyclic, one input, one Dense
sink, per-kind arity and shape agreement) and BatchNorm layers are
folded into the preceding affine layer at load time, so downstream
modules never see them.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ChecksumMismatchError,
    GraphCycleError,
    GraphStructureError,
    ModelFormatError,
    ShapeError,
    ShapeInconsistencyError,
    TensorSizeError,
    UnsupportedTopologyError,
)
from .tensor import DTYPE, _conv_out_size

INPUT_ID = "input"
OUTPUT_ID = "output"

LAYER_KINDS = (
    "Dense",
    "Conv2D",
    "MaxPool2D",
    "AvgPool2D",
    "ReLU",
    "Flatten",
    "Add",
    "BatchNorm",
    "GlobalAvgPool",
)

_BN_PARAMS = ("gamma", "beta", "mean", "var")


@dataclass
class LayerSpec:
    """One typed node of the model graph."""

    id: str
    kind: str
    inputs: tuple[str, ...]
    stride: int = 1
    pad: int = 0
    kernel: int | None = None
    w: np.ndarray | None = None
    b: np.ndarray | None = None
    bn: dict[str, np.ndarray] | None = None
    bn_eps: float = 1e-5
    out_shape: tuple[int, ...] = ()


@dataclass
class ModelGraph:
    """Validated, topologically ordered layer DAG.

    Treat instances as immutable; transformations return new graphs.
    """

    nodes: dict[str, LayerSpec]
    order: tuple[str, ...]
    input_shape: tuple[int, ...]
    num_classes: int
    input_low: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=DTYPE))
    input_high: np.ndarray = field(default_factory=lambda: np.ones(1, dtype=DTYPE))
    reference_input: np.ndarray | None = None
    reference_logits: np.ndarray | None = None
    _consumers: dict[str, tuple[str, ...]] = field(default_factory=dict, repr=False)

    @property
    def sink(self) -> LayerSpec:
        """The Dense layer producing the pre-softmax scores."""
        return self.nodes[self.nodes[OUTPUT_ID].inputs[0]]

    def consumers(self, node_id: str) -> tuple[str, ...]:
        return self._consumers.get(node_id, ())

    def layer_ids(self) -> tuple[str, ...]:
        """Computational node ids in topological order (no input/output alias)."""
        return tuple(n for n in self.order if n not in (INPUT_ID, OUTPUT_ID))


def _infer_shape(node: LayerSpec, in_shapes: list[tuple[int, ...]]) -> tuple[int, ...]:
    def fail(msg):
        raise ShapeInconsistencyError(f"node {node.id!r}: {msg}", node_id=node.id)

    kind = node.kind
    if kind == "Dense":
        (ishape,) = in_shapes
        if len(ishape) != 1:
            fail(f"Dense expects a vector input, got {ishape}")
        if node.w is None or node.w.ndim != 2:
            fail("Dense requires a 2-D weight matrix")
        if node.w.shape[0] != ishape[0]:
            fail(f"weight rows {node.w.shape[0]} != input size {ishape[0]}")
        if node.b is not None and node.b.shape != (node.w.shape[1],):
            fail(f"bias shape {node.b.shape} != out features {node.w.shape[1]}")
        return (node.w.shape[1],)
    if kind == "Conv2D":
        (ishape,) = in_shapes
        if len(ishape) != 3:
            fail(f"Conv2D expects [C,H,W] input, got {ishape}")
        if node.w is None or node.w.ndim != 4:
            fail("Conv2D requires a 4-D kernel")
        f, c, kh, kw = node.w.shape
        if c != ishape[0]:
            fail(f"kernel channels {c} != input channels {ishape[0]}")
        if node.b is not None and node.b.shape != (f,):
            fail(f"bias shape {node.b.shape} != filters {f}")
        try:
            ho = _conv_out_size(ishape[1], kh, node.stride, node.pad)
            wo = _conv_out_size(ishape[2], kw, node.stride, node.pad)
        except ShapeError as exc:
            fail(str(exc))
        return (f, ho, wo)
    if kind in ("MaxPool2D", "AvgPool2D"):
        (ishape,) = in_shapes
        if len(ishape) != 3:
            fail(f"{kind} expects [C,H,W] input, got {ishape}")
        if not node.kernel:
            fail(f"{kind} requires a kernel size")
        try:
            ho = _conv_out_size(ishape[1], node.kernel, node.stride, 0)
            wo = _conv_out_size(ishape[2], node.kernel, node.stride, 0)
        except ShapeError as exc:
            fail(str(exc))
        return (ishape[0], ho, wo)
    if kind == "GlobalAvgPool":
        (ishape,) = in_shapes
        if len(ishape) != 3:
            fail(f"GlobalAvgPool expects [C,H,W] input, got {ishape}")
        return (ishape[0],)
    if kind in ("ReLU", "BatchNorm"):
        (ishape,) = in_shapes
        if kind == "BatchNorm":
            n = ishape[0]
            for name in _BN_PARAMS:
                p = (node.bn or {}).get(name)
                if p is None or p.shape != (n,):
                    fail(f"BatchNorm parameter {name!r} must have shape ({n},)")
        return ishape
    if kind == "Flatten":
        (ishape,) = in_shapes
        return (int(math.prod(ishape)),)
    if kind == "Add":
        a, b = in_shapes
        if a != b:
            fail(f"Add branches disagree: {a} vs {b}")
        return a
    fail(f"unknown layer kind {kind!r}")


def build_graph(
    layers: list[LayerSpec],
    input_shape,
    num_classes: int,
    input_low=None,
    input_high=None,
    reference_input=None,
    reference_logits=None,
) -> ModelGraph:
    """Assemble and validate a ModelGraph from computational layers.

    Adds the implicit ``input`` source node and the ``output`` alias for
    the sink's logits, checks arity, acyclicity, reachability, and runs
    shape inference through every node.
    """
    input_shape = tuple(int(d) for d in input_shape)
    nodes: dict[str, LayerSpec] = {}
    for layer in layers:
        if layer.id in (INPUT_ID, OUTPUT_ID):
            raise GraphStructureError(
                f"layer id {layer.id!r} is reserved", node_id=layer.id
            )
        if layer.id in nodes:
            raise GraphStructureError(f"duplicate layer id {layer.id!r}", node_id=layer.id)
        if layer.kind not in LAYER_KINDS:
            raise GraphStructureError(
                f"node {layer.id!r} has unknown kind {layer.kind!r}", node_id=layer.id
            )
        arity = 2 if layer.kind == "Add" else 1
        if len(layer.inputs) != arity:
            raise GraphStructureError(
                f"node {layer.id!r} ({layer.kind}) needs {arity} input(s), "
                f"got {len(layer.inputs)}",
                node_id=layer.id,
            )
        nodes[layer.id] = layer

    nodes_all = {INPUT_ID: LayerSpec(INPUT_ID, "Input", (), out_shape=input_shape)}
    nodes_all.update(nodes)
    for layer in nodes.values():
        for src in layer.inputs:
            if src not in nodes_all:
                raise GraphStructureError(
                    f"node {layer.id!r} references unknown input {src!r}",
                    node_id=layer.id,
                )

    consumers: dict[str, list[str]] = {nid: [] for nid in nodes_all}
    for layer in nodes.values():
        for src in layer.inputs:
            consumers[src].append(layer.id)

    # Kahn topological sort, breaking ties by declaration order.
    declared = {nid: i for i, nid in enumerate(nodes_all)}
    pending = {nid: len(spec.inputs) for nid, spec in nodes_all.items()}
    ready = sorted((nid for nid, deg in pending.items() if deg == 0), key=declared.get)
    if ready != [INPUT_ID]:
        raise GraphStructureError("graph must have exactly one source (the input)")
    order: list[str] = []
    while ready:
        nid = ready.pop(0)
        order.append(nid)
        for nxt in consumers[nid]:
            pending[nxt] -= 1
            if pending[nxt] == 0:
                ready.append(nxt)
        ready.sort(key=declared.get)
    if len(order) != len(nodes_all):
        stuck = sorted(set(nodes_all) - set(order), key=declared.get)
        raise GraphCycleError(f"cycle through node {stuck[0]!r}", node_id=stuck[0])

    terminal = [nid for nid in order if not consumers[nid]]
    if len(terminal) != 1:
        raise GraphStructureError(
            f"graph must have exactly one sink, found {terminal or 'none'}"
        )
    sink_id = terminal[0]
    if nodes_all[sink_id].kind != "Dense":
        raise GraphStructureError(
            f"sink {sink_id!r} must be a Dense layer producing the class scores",
            node_id=sink_id,
        )

    for nid in order[1:]:
        spec = nodes_all[nid]
        in_shapes = [nodes_all[s].out_shape for s in spec.inputs]
        spec.out_shape = _infer_shape(spec, in_shapes)
    if nodes_all[sink_id].out_shape != (num_classes,):
        raise ShapeInconsistencyError(
            f"sink {sink_id!r} produces {nodes_all[sink_id].out_shape}, "
            f"expected ({num_classes},)",
            node_id=sink_id,
        )

    nodes_all[OUTPUT_ID] = LayerSpec(
        OUTPUT_ID, "Output", (sink_id,), out_shape=(num_classes,)
    )
    consumers[sink_id].append(OUTPUT_ID)
    consumers[OUTPUT_ID] = []
    order.append(OUTPUT_ID)

    n_chan = input_shape[0]
    low = np.full(n_chan, 0.0, dtype=DTYPE) if input_low is None else np.asarray(
        input_low, dtype=DTYPE
    ).reshape(-1)
    high = np.full(n_chan, 1.0, dtype=DTYPE) if input_high is None else np.asarray(
        input_high, dtype=DTYPE
    ).reshape(-1)
    if low.shape != high.shape or np.any(low > high):
        raise ModelFormatError("input bounds must satisfy low <= high per channel")

    return ModelGraph(
        nodes=nodes_all,
        order=tuple(order),
        input_shape=input_shape,
        num_classes=int(num_classes),
        input_low=low,
        input_high=high,
        reference_input=reference_input,
        reference_logits=reference_logits,
        _consumers={nid: tuple(lst) for nid, lst in consumers.items()},
    )


def fold_batchnorm(graph: ModelGraph) -> ModelGraph:
    """Merge every BatchNorm into its preceding Dense or Conv2D layer.

    With scale s = gamma / sqrt(var + eps), the affine layer's weights
    become w*s and its bias (b - mean)*s + beta; forward outputs are
    unchanged up to float rounding.
    """
    folded: dict[str, LayerSpec] = {}
    rename: dict[str, str] = {}
    for nid in graph.layer_ids():
        spec = graph.nodes[nid]
        if spec.kind != "BatchNorm":
            folded[nid] = replace(spec)
            continue
        pred_id = spec.inputs[0]
        pred = folded.get(pred_id)
        if pred is None or pred.kind not in ("Dense", "Conv2D"):
            raise UnsupportedTopologyError(
                f"BatchNorm {nid!r} must follow a Dense or Conv2D layer",
                node_id=nid,
            )
        if graph.consumers(pred_id) != (nid,):
            raise UnsupportedTopologyError(
                f"BatchNorm {nid!r} input {pred_id!r} feeds other nodes; cannot fold",
                node_id=nid,
            )
        bn = spec.bn or {}
        scale = (bn["gamma"] / np.sqrt(bn["var"] + DTYPE(spec.bn_eps))).astype(DTYPE)
        bias = pred.b if pred.b is not None else np.zeros(scale.shape, dtype=DTYPE)
        new_b = ((bias - bn["mean"]) * scale + bn["beta"]).astype(DTYPE)
        if pred.kind == "Dense":
            new_w = (pred.w * scale[None, :]).astype(DTYPE)
        else:
            new_w = (pred.w * scale[:, None, None, None]).astype(DTYPE)
        folded[pred_id] = replace(pred, w=new_w, b=new_b)
        rename[nid] = pred_id

    def resolve(src: str) -> str:
        while src in rename:
            src = rename[src]
        return src

    layers = [
        replace(spec, inputs=tuple(resolve(s) for s in spec.inputs))
        for spec in folded.values()
    ]
    return build_graph(
        layers,
        graph.input_shape,
        graph.num_classes,
        input_low=graph.input_low,
        input_high=graph.input_high,
        reference_input=graph.reference_input,
        reference_logits=graph.reference_logits,
    )


def _read_tensor(blob: bytes, ref: dict, label: str) -> np.ndarray:
    try:
        offset = int(ref["offset"])
        shape = tuple(int(d) for d in ref["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"tensor {label}: malformed reference ({exc})")
    count = int(math.prod(shape))
    end = offset + 4 * count
    if offset < 0 or end > len(blob):
        raise TensorSizeError(
            f"tensor {label}: bytes [{offset}, {end}) exceed blob of {len(blob)} bytes"
        )
    arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
    return np.ascontiguousarray(arr.reshape(shape))


def load_model(manifest_path) -> ModelGraph:
    """Load, validate, and fold a model from its JSON manifest.

    Raises FileNotFoundError for missing files, ChecksumMismatchError,
    TensorSizeError, ShapeInconsistencyError, or GraphCycleError for the
    corresponding defects, each naming the offending node or tensor.
    """
    from pathlib import Path

    manifest_path = Path(manifest_path)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("version") != 1:
        raise ModelFormatError(f"unsupported manifest version {manifest.get('version')!r}")

    blob_path = manifest_path.parent / manifest["blob"]
    blob = blob_path.read_bytes()
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest["blob_sha256"]:
        raise ChecksumMismatchError(
            f"blob {blob_path.name}: sha256 {digest} != declared {manifest['blob_sha256']}"
        )

    declared_bytes = 0
    layers: list[LayerSpec] = []
    for entry in manifest["layers"]:
        nid = entry["id"]
        kind = entry["kind"]
        weights = entry.get("weights", {})
        for name, ref in weights.items():
            declared_bytes += 4 * int(math.prod(ref["shape"]))
        spec = LayerSpec(
            id=nid,
            kind=kind,
            inputs=tuple(entry["inputs"]),
            stride=int(entry.get("stride", 1)),
            pad=int(entry.get("pad", 0)),
            kernel=int(entry["kernel"]) if "kernel" in entry else None,
        )
        if kind in ("Dense", "Conv2D"):
            if "w" not in weights:
                raise ModelFormatError(f"node {nid!r} lacks a weight tensor", node_id=nid)
            spec.w = _read_tensor(blob, weights["w"], f"{nid}.w")
            if "b" in weights:
                spec.b = _read_tensor(blob, weights["b"], f"{nid}.b")
        elif kind == "BatchNorm":
            spec.bn = {
                name: _read_tensor(blob, weights[name], f"{nid}.{name}")
                for name in _BN_PARAMS
            }
            spec.bn_eps = float(entry.get("eps", 1e-5))
        layers.append(spec)
    if declared_bytes != len(blob):
        raise TensorSizeError(
            f"blob holds {len(blob)} bytes but the manifest declares {declared_bytes}"
        )

    ref_input = manifest.get("reference_input")
    if ref_input is not None:
        ref_input = np.asarray(ref_input, dtype=DTYPE).reshape(manifest["input_shape"])
    ref_logits = manifest.get("reference_logits")
    if ref_logits is not None:
        ref_logits = np.asarray(ref_logits, dtype=DTYPE)

    graph = build_graph(
        layers,
        manifest["input_shape"],
        manifest["num_classes"],
        input_low=manifest.get("input_low"),
        input_high=manifest.get("input_high"),
        reference_input=ref_input,
        reference_logits=ref_logits,
    )
    return fold_batchnorm(graph)


def save_model(graph: ModelGraph, manifest_path, blob_name: str | None = None) -> None:
    """Write a graph back out as manifest + blob (bit-exact weights)."""
    from pathlib import Path

    manifest_path = Path(manifest_path)
    blob_name = blob_name or manifest_path.stem + ".bin"

    chunks: list[bytes] = []
    offset = 0

    def put(arr: np.ndarray) -> dict:
        nonlocal offset
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        ref = {"offset": offset, "shape": list(arr.shape)}
        chunks.append(raw)
        offset += len(raw)
        return ref

    entries = []
    for nid in graph.layer_ids():
        spec = graph.nodes[nid]
        entry: dict = {"id": nid, "kind": spec.kind, "inputs": list(spec.inputs)}
        if spec.kind == "Conv2D":
            entry["stride"] = spec.stride
            entry["pad"] = spec.pad
        if spec.kind in ("MaxPool2D", "AvgPool2D"):
            entry["kernel"] = spec.kernel
            entry["stride"] = spec.stride
        weights = {}
        if spec.w is not None:
            weights["w"] = put(spec.w)
        if spec.b is not None:
            weights["b"] = put(spec.b)
        if spec.bn is not None:
            entry["eps"] = spec.bn_eps
            for name in _BN_PARAMS:
                weights[name] = put(spec.bn[name])
        if weights:
            entry["weights"] = weights
        entries.append(entry)

    blob = b"".join(chunks)
    manifest = {
        "version": 1,
        "input_shape": list(graph.input_shape),
        "num_classes": graph.num_classes,
        "input_low": [float(v) for v in graph.input_low],
        "input_high": [float(v) for v in graph.input_high],
        "layers": entries,
        "blob": blob_name,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "reference_input": None
        if graph.reference_input is None
        else [float(v) for v in graph.reference_input.reshape(-1)],
        "reference_logits": None
        if graph.reference_logits is None
        else [float(v) for v in graph.reference_logits.reshape(-1)],
    }
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    (manifest_path.parent / blob_name).write_bytes(blob)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
