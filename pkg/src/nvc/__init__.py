"""Deterministic desk-scale neural video codec.

Conditional coding at a single 1/8-resolution latent with implicit temporal
modeling, a 64-entry rate module bank, training-free int16 integerization,
a normative bitstream container, and a complexity benchmark lab.
"""

from .errors import (
    ConfigError,
    DecodeError,
    EncodeError,
    InvalidArgumentError,
    NvcError,
    PlanningError,
)
from .model import CodecConfig, FrameContext, ModelWeights, generate_weights
from .pipeline import (
    CodecSettings,
    SessionState,
    decode_video,
    drift_report,
    encode_video,
)
from .rate import QpSchedule, RateModuleBank, seed_bank
from .tensor import ConvSpec, Tensor

__version__ = "0.1.0"

__all__ = [
    "CodecConfig",
    "CodecSettings",
    "ConfigError",
    "ConvSpec",
    "DecodeError",
    "EncodeError",
    "FrameContext",
    "InvalidArgumentError",
    "ModelWeights",
    "NvcError",
    "PlanningError",
    "QpSchedule",
    "RateModuleBank",
    "SessionState",
    "Tensor",
    "decode_video",
    "drift_report",
    "encode_video",
    "generate_weights",
    "seed_bank",
]
