"""CXV: convolutional linear-attention vision transformers on a numpy autodiff engine."""

from .attention import AttentionConfig, AttentionKind, MultiHeadAttention
from .config import RunConfig, load_config, parse_config
from .errors import CXVError
from .kernels import BACKEND
from .model import ModelConfig, Variant, build_model, count_macs, count_params, named_config, profile
from .optim import AdamWState, DualOptController, SGDState
from .tensor import Tensor, backward, no_grad, precision

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig", "AttentionKind", "MultiHeadAttention", "RunConfig", "load_config", "parse_config",
    "CXVError", "BACKEND", "ModelConfig", "Variant", "build_model", "count_macs", "count_params",
    "named_config", "profile", "AdamWState", "DualOptController", "SGDState", "Tensor", "backward",
    "no_grad", "precision",
]
