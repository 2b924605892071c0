"""Hybrid Transformer / selective-SSM text encoder with padding-safe masking.

A desk-scale, numpy-based implementation: interleaved attention and gated
state-space blocks behind one pattern string, an MLM training loop, exact
padding invariance, and diagnostic probes for drift and length scaling.
"""

from .encoder import EncoderConfig, EncoderParams, count_parameters, encoder_forward, parse_pattern
from .errors import HybencError
from .model import ClassifierModel, MLMModel
from .optim import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "ClassifierModel",
    "EncoderConfig",
    "EncoderParams",
    "HybencError",
    "MLMModel",
    "TrainConfig",
    "count_parameters",
    "encoder_forward",
    "parse_pattern",
    "__version__",
]
