"""MLP-based actor relation learning for group activity recognition, with GCN and
Transformer baselines, analytic cost accounting and a planted-relation benchmark."""

from .autograd import Tensor, grad_check, no_grad
from .baselines import build_model, build_unified_model
from .relation import ModelConfig, RelationModel, build_mlp_air

__all__ = [
    "ModelConfig",
    "RelationModel",
    "Tensor",
    "build_mlp_air",
    "build_model",
    "build_unified_model",
    "grad_check",
    "no_grad",
]
__version__ = "0.1.0"
