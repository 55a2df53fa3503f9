"""Minimal float64 tensor engine with reverse-mode differentiation."""
from .core import (ContractError, DimensionError, Tensor, as_tensor, backward, build_record,
                   is_grad_enabled, leaves, no_grad, replay)
from .gradcheck import finite_difference_check
from .nn import SGD, Adam, Module, cosine_lr, make_optimizer, make_rng
from .ops import (add, batched_matmul, concat_channels, conv_1x1, conv_3x3, depthwise_conv_3x3, exp,
                  gelu, hadamard, im2col_3x3, l1_loss, l2_normalize, layer_norm, mean_all,
                  mean_spatial, mse_loss, pixel_shuffle, pixel_unshuffle, reshape, scale, sigmoid,
                  silu, slice_channels, softmax, softmax_over_axis, softplus, sub, sum_all, take_last,
                  transpose)
from .kernels import backend_name, set_backend
from .scan import selective_scan

__all__ = [name for name in dir() if not name.startswith("_")]
