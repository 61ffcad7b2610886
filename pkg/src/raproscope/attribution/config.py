"""Attribution method registry, configuration, and result container."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError

RAP = "rap"
LRP_EPSILON = "lrp-eps"
LRP_ALPHABETA = "lrp-ab"
GRADIENT = "grad"
INPUT_X_GRADIENT = "ixg"
INTEGRATED_GRADIENTS = "ig"
GUIDED_BACKPROP = "gbp"

METHODS = (
    RAP,
    LRP_EPSILON,
    LRP_ALPHABETA,
    GRADIENT,
    INPUT_X_GRADIENT,
    INTEGRATED_GRADIENTS,
    GUIDED_BACKPROP,
)

PROPAGATION_METHODS = (RAP, LRP_EPSILON, LRP_ALPHABETA)


@dataclass
class AttributionConfig:
    """Settings shared by all attribution methods.

    ``target`` of None means "explain the predicted class".  The alpha
    and beta weights of the signed-split rule must satisfy
    alpha - beta = 1 so the two parts rebuild the full contribution.
    ``input_low`` and ``input_high`` default to the per-channel bounds
    stored in the model manifest.
    """

    method: str = RAP
    epsilon: float = 1e-6
    alpha: float = 2.0
    beta: float = 1.0
    ig_steps: int = 50
    ig_baseline: np.ndarray | None = None
    input_low: np.ndarray | None = None
    input_high: np.ndarray | None = None
    stabilizer: float = 1e-9
    target: int | None = None

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; pick one of {METHODS}")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.stabilizer <= 0:
            raise ConfigError("stabilizer must be > 0")
        if self.method == LRP_ALPHABETA and abs(self.alpha - self.beta - 1.0) > 1e-12:
            raise ConfigError(
                f"alpha - beta must equal 1, got alpha={self.alpha}, beta={self.beta}"
            )
        if self.ig_steps < 1:
            raise ConfigError("ig_steps must be >= 1")
        if self.input_low is not None and self.input_high is not None:
            low = np.asarray(self.input_low, dtype=np.float32)
            high = np.asarray(self.input_high, dtype=np.float32)
            if low.shape != high.shape or np.any(low > high):
                raise ConfigError("input bounds must satisfy low <= high per channel")

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "beta": self.beta,
            "ig_steps": self.ig_steps,
            "stabilizer": self.stabilizer,
        }


@dataclass
class RelevanceMap:
    """Per-node relevance of one propagation run.

    ``per_node`` maps node id to the relevance assigned to that node's
    output activations; the entry for the input node is the attribution.
    ``conserved_total`` is the amount a conservation-bearing method
    should deliver to the input (None for the gradient family).
    """

    method: str
    target: int
    logit: float
    per_node: dict[str, np.ndarray] = field(default_factory=dict)
    conserved_total: float | None = None

    @property
    def input_relevance(self) -> np.ndarray:
        return self.per_node["input"]

    @property
    def conservation_residual(self) -> float | None:
        """Relative gap between the input-relevance sum and the conserved total."""
        if self.conserved_total is None:
            return None
        total = float(np.sum(self.input_relevance, dtype=np.float64))
        denom = max(abs(self.conserved_total), 1e-12)
        return abs(total - self.conserved_total) / denom
