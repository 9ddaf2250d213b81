"""Encoder-decoder transformers with Evaluator Adjuster Units and gated residual connections."""
from .eau import EvaluatorAdjusterUnit, eau_forward, eau_intermediates
from .grc import GatedResidualConnection, grc_forward
from .model import ModelConfig, TransformerModel, build_model, count_params, greedy_decode
from .tensor import Tape, Tensor

__version__ = "0.1.0"

__all__ = ["EvaluatorAdjusterUnit", "GatedResidualConnection", "ModelConfig", "Tape", "Tensor",
           "TransformerModel", "build_model", "count_params", "eau_forward", "eau_intermediates",
           "greedy_decode", "grc_forward"]
