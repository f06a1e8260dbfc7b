"""From-scratch capsule network with dynamic routing and exact gradients."""

from .checkpoint import load_checkpoint, save_checkpoint
from .model import (
    CONFIG_FIELDS,
    ForwardCache,
    ModelConfig,
    ModelParams,
    PARAM_FIELDS,
    backward,
    backward_batch,
    forward,
    forward_batch,
    init_params,
    margin_loss,
    primary_caps_forward,
    reduced_config,
)
from .ops import (
    RoutingState,
    conv2d_forward,
    dynamic_routing,
    predict_vectors,
    routing_softmax,
    squash,
)
from .training import (
    AdamState,
    TrainHyper,
    fit,
    init_adam,
    predict,
    predict_batch,
    train_step,
)

__all__ = [
    "AdamState",
    "CONFIG_FIELDS",
    "ForwardCache",
    "ModelConfig",
    "ModelParams",
    "PARAM_FIELDS",
    "RoutingState",
    "TrainHyper",
    "backward",
    "backward_batch",
    "conv2d_forward",
    "dynamic_routing",
    "fit",
    "forward",
    "forward_batch",
    "init_adam",
    "init_params",
    "load_checkpoint",
    "margin_loss",
    "predict",
    "predict_batch",
    "predict_vectors",
    "primary_caps_forward",
    "reduced_config",
    "routing_softmax",
    "save_checkpoint",
    "squash",
    "train_step",
]
