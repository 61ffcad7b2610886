"""Relevance and gradient attribution methods."""

from .config import (
    GRADIENT,
    GUIDED_BACKPROP,
    INPUT_X_GRADIENT,
    INTEGRATED_GRADIENTS,
    LRP_ALPHABETA,
    LRP_EPSILON,
    METHODS,
    PROPAGATION_METHODS,
    RAP,
    AttributionConfig,
    RelevanceMap,
)
from .engine import attribute, integrated_gradients
from .relfile import load_relevance, save_relevance
from .rules import (
    add_split_alphabeta,
    add_split_epsilon,
    add_split_rap,
    lrp_alphabeta_layer,
    lrp_epsilon_layer,
    rap_absolute_influence_init,
    rap_layer_propagate,
    zbeta_input_layer,
)

__all__ = [
    "GRADIENT",
    "GUIDED_BACKPROP",
    "INPUT_X_GRADIENT",
    "INTEGRATED_GRADIENTS",
    "LRP_ALPHABETA",
    "LRP_EPSILON",
    "METHODS",
    "PROPAGATION_METHODS",
    "RAP",
    "AttributionConfig",
    "RelevanceMap",
    "attribute",
    "integrated_gradients",
    "load_relevance",
    "save_relevance",
    "add_split_alphabeta",
    "add_split_epsilon",
    "add_split_rap",
    "lrp_alphabeta_layer",
    "lrp_epsilon_layer",
    "rap_absolute_influence_init",
    "rap_layer_propagate",
    "zbeta_input_layer",
]
