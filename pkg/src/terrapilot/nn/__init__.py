"""Numerics substrate: autodiff tensors, layers, Adam, gradient checking,
and the checkpoint container."""

from . import tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, finite_diff_check
from .layers import (ParamStore, cross_entropy, freeze, gru_step, init_attention,
                     init_gru, init_linear, init_mlp2, l2_loss, linear,
                     masked_cross_attention, mlp2, onehot)
from .optim import adam_step
from .tensor import Tensor, as_tensor, set_finite_checks

__all__ = [
    "tensor", "Tensor", "as_tensor", "set_finite_checks",
    "ParamStore", "linear", "mlp2", "masked_cross_attention", "gru_step",
    "cross_entropy", "l2_loss", "onehot", "freeze",
    "init_linear", "init_mlp2", "init_attention", "init_gru",
    "adam_step", "finite_diff_check", "GradCheckReport",
    "save_checkpoint", "load_checkpoint",
]
