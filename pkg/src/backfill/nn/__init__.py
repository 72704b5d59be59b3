from .gradcheck import grad_check, numeric_grad
from .layers import (
    ParamSet,
    declare_ffn,
    declare_gru,
    declare_node_ffn,
    ffn,
    gconv,
    gru_cell,
    mult_attention,
    node_ffn,
    normalized_adjacency,
)
from .optim import Adam
from .tensor import DTensor, no_grad

__all__ = [
    "Adam", "DTensor", "ParamSet", "declare_ffn", "declare_gru", "declare_node_ffn", "ffn",
    "gconv", "grad_check", "gru_cell", "mult_attention", "no_grad", "node_ffn",
    "normalized_adjacency", "numeric_grad",
]
