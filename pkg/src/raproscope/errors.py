"""Exception taxonomy shared across the package."""


class RaproscopeError(Exception):
    """Base class for every error this package raises on purpose."""


class ShapeError(RaproscopeError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(RaproscopeError):
    """A tensor contains non-finite values where finite ones are required."""


class ConfigError(RaproscopeError):
    """An attribution or evaluation setting is invalid."""


class ModelFormatError(RaproscopeError):
    """A model manifest or weight blob is malformed.

    ``node_id`` names the offending layer when one can be identified.
    """

    def __init__(self, message: str, node_id: str | None = None):
        super().__init__(message)
        self.node_id = node_id


class ChecksumMismatchError(ModelFormatError):
    """The weight blob does not match the manifest's SHA-256."""


class TensorSizeError(ModelFormatError):
    """A declared tensor extent does not fit the weight blob."""


class ShapeInconsistencyError(ModelFormatError):
    """Declared weight shapes disagree with the surrounding layers."""


class GraphStructureError(ModelFormatError):
    """The layer graph violates a structural requirement."""


class GraphCycleError(GraphStructureError):
    """The layer graph contains a cycle."""


class UnsupportedTopologyError(ModelFormatError):
    """A layer sits in a position the engine cannot handle (e.g. BatchNorm
    whose input is not a Dense or Conv2D layer)."""


class UnsupportedLayerError(RaproscopeError):
    """A propagation method met a layer kind it has no rule for."""

    def __init__(self, node_id: str, method: str):
        super().__init__(f"no rule for node {node_id!r} under method {method!r}")
        self.node_id = node_id
        self.method = method


class DegenerateLogitError(RaproscopeError):
    """The target logit is zero, so relevance cannot be normalized."""


class DegenerateLayerError(RaproscopeError):
    """A layer has no activated neurons, so the uniform shift is undefined."""


class UndefinedRatioError(RaproscopeError):
    """The outside-inside ratio denominator is zero."""


class DegenerateBboxError(RaproscopeError):
    """A bounding box leaves the inside or outside pixel set empty."""
