"""Small deterministic differentiable-network core (numpy)."""

from .gradcheck import GradCheckReport, grad_check, numeric_gradient, relative_error
from .layers import LAYER_KINDS, LayerSpec
from .network import ForwardCache, Network, NetworkSpec, classifier_spec, regressor_spec
from .optim import OptimizerState, adam_step, lr_at
from .serialization import load_checkpoint, save_checkpoint
from .tensor import Tensor

__all__ = [
    "Tensor",
    "LayerSpec",
    "LAYER_KINDS",
    "NetworkSpec",
    "Network",
    "ForwardCache",
    "classifier_spec",
    "regressor_spec",
    "OptimizerState",
    "adam_step",
    "lr_at",
    "grad_check",
    "GradCheckReport",
    "numeric_gradient",
    "relative_error",
    "save_checkpoint",
    "load_checkpoint",
]
