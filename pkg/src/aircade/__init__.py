"""Spatiotemporal causal-decoupling air quality forecaster on a small numpy autodiff core."""

from .attention import ALL_ONES, AttentionMask, DiffusionAttentionLayer, diffusion_attention, dk_msa
from .backbone import Parameter, Tape, Tensor, grad_check, no_grad
from .config import ModelConfig, TrainConfig
from .model import AirCadeModel, count_parameters, model_forward

__version__ = "0.1.0"

__all__ = [
    "ALL_ONES",
    "AirCadeModel",
    "AttentionMask",
    "DiffusionAttentionLayer",
    "ModelConfig",
    "Parameter",
    "Tape",
    "Tensor",
    "TrainConfig",
    "count_parameters",
    "diffusion_attention",
    "dk_msa",
    "grad_check",
    "model_forward",
    "no_grad",
]
