"""raproscope: relevance-propagation attribution for feed-forward networks.

The package decomposes a network's class score into per-pixel relevance
via relative-influence propagation and several baseline methods, loads
models from a framework-neutral manifest + blob format, evaluates
attributions with bounding-box, segmentation, and perturbation
protocols, and renders diverging-colormap heatmaps.
"""

from .attribution import AttributionConfig, RelevanceMap, attribute
from .evaluation import EvalSample, PerturbationCurve, load_dataset
from .inference import ForwardTrace, backward, forward
from .model import LayerSpec, ModelGraph, build_graph, fold_batchnorm, load_model, save_model
from .render import channel_sum, render_heatmap

__version__ = "0.1.0"

__all__ = [
    "AttributionConfig",
    "RelevanceMap",
    "attribute",
    "EvalSample",
    "PerturbationCurve",
    "load_dataset",
    "ForwardTrace",
    "backward",
    "forward",
    "LayerSpec",
    "ModelGraph",
    "build_graph",
    "fold_batchnorm",
    "load_model",
    "save_model",
    "channel_sum",
    "render_heatmap",
    "__version__",
]
