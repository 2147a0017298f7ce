"""Small float64 neural-network toolkit: autodiff, layers, Adam, gradient checking."""

from .autograd import Tensor, ShapeError, as_tensor, concat, masked_softmax, sigmoid, tanh
from .gradcheck import grad_check
from .layers import (MLP, Attention, Dense, Embedding, GRU, Module, ParamSet, attention_pool,
                     bce_loss, bce_with_logits, dense_forward, gru_encode, gru_encode_many,
                     mean_pool, self_attention)
from .optim import Adam, OptState, adam_step
from .recurrent import EmptySequenceError

__all__ = [
    "Tensor", "ShapeError", "EmptySequenceError", "as_tensor", "concat", "masked_softmax",
    "sigmoid", "tanh", "grad_check", "MLP", "Attention", "Dense", "Embedding", "GRU", "Module",
    "ParamSet", "attention_pool", "bce_loss", "bce_with_logits", "dense_forward", "gru_encode",
    "gru_encode_many", "mean_pool", "self_attention", "Adam", "OptState", "adam_step",
]
