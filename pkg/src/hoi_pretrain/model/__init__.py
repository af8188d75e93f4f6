from .core import (
    DecoderState,
    EmptyRPQError,
    EncoderOutput,
    HOIPretrainModel,
    Predictions,
    ShapeError,
    WrongStateError,
    component_of,
    dn_attention_mask,
)
from .layers import sine_position_encoding

__all__ = [
    "DecoderState",
    "EmptyRPQError",
    "EncoderOutput",
    "HOIPretrainModel",
    "Predictions",
    "ShapeError",
    "WrongStateError",
    "component_of",
    "dn_attention_mask",
    "sine_position_encoding",
]
