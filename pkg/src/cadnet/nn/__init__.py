"""Small deterministic float64 neural kernel with reverse-mode gradients."""

from .params import ParamSet, glorot_uniform
from .functional import sigmoid, softmax, layer_norm_forward, layer_norm_backward
from .layers import (
    dense_forward, dense_backward, init_dense,
    gru_forward, gru_backward, init_gru,
    lstm_forward, lstm_backward, init_lstm,
    bidirectional_forward, bidirectional_backward,
    bidirectional_forward_batch, bidirectional_backward_batch,
    TransformerConfig, init_transformer, transformer_forward, transformer_backward,
)
from .encoders import (SequenceEncoderConfig, VARIANTS, init_encoder, encoder_forward,
                       encoder_backward, encoder_forward_many, encoder_backward_many)
from .gradcheck import finite_diff_check, numerical_gradient

__all__ = [
    "ParamSet", "glorot_uniform", "sigmoid", "softmax",
    "layer_norm_forward", "layer_norm_backward",
    "dense_forward", "dense_backward", "init_dense",
    "gru_forward", "gru_backward", "init_gru",
    "lstm_forward", "lstm_backward", "init_lstm",
    "bidirectional_forward", "bidirectional_backward",
    "bidirectional_forward_batch", "bidirectional_backward_batch",
    "TransformerConfig", "init_transformer", "transformer_forward", "transformer_backward",
    "SequenceEncoderConfig", "VARIANTS", "init_encoder", "encoder_forward", "encoder_backward",
    "encoder_forward_many", "encoder_backward_many",
    "finite_diff_check", "numerical_gradient",
]
