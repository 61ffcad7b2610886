"""Serialization of attribution results (.rel files).

A .rel file is one UTF-8 JSON header line followed by raw little-endian
float32 tensor data.  The header records the method, its configuration,
the explained class, its logit, the conservation residual, and a table
of named tensors with byte offsets into the binary section.  The input
attribution is always stored under the name ``input``; per-layer maps
are included on request.
"""

import json

import numpy as np

from ..errors import ConfigError
from .config import AttributionConfig, RelevanceMap


def save_relevance(
    path,
    rmap: RelevanceMap,
    config: AttributionConfig,
    save_layers: bool = False,
) -> None:
    """Write a RelevanceMap to ``path``; byte-identical for equal inputs."""
    names = ["input"]
    if save_layers:
        names += [n for n in rmap.per_node if n != "input"]
    tensors = []
    offset = 0
    chunks = []
    for name in names:
        arr = np.ascontiguousarray(rmap.per_node[name], dtype="<f4")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        raw = arr.tobytes()
        chunks.append(raw)
        offset += len(raw)
    residual = rmap.conservation_residual
    header = {
        "format": "raproscope-rel",
        "version": 1,
        "method": rmap.method,
        "config": config.as_dict(),
        "target": int(rmap.target),
        "logit": float(rmap.logit),
        "conservation_residual": None if residual is None else float(residual),
        "tensors": tensors,
    }
    line = json.dumps(header, sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(line.encode("utf-8"))
        fh.write(b"\n")
        for raw in chunks:
            fh.write(raw)


def load_relevance(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a .rel file back into (header, {name: tensor})."""
    with open(path, "rb") as fh:
        line = fh.readline()
        body = fh.read()
    header = json.loads(line.decode("utf-8"))
    if header.get("format") != "raproscope-rel" or header.get("version") != 1:
        raise ConfigError(f"{path}: not a supported relevance file")
    tensors = {}
    for ref in header["tensors"]:
        count = int(np.prod(ref["shape"])) if ref["shape"] else 1
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=int(ref["offset"]))
        tensors[ref["name"]] = np.ascontiguousarray(arr.reshape(ref["shape"]))
    return header, tensors
