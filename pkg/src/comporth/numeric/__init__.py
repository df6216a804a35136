"""Minimal differentiable kernels: NHWC convolutions, dense layers,
activations, losses, Adam and counter-based noise."""
from .ops import (
    bce_logits_sum, bce_logits_sum_grad, bce_sum, bce_sum_grad, check_finite,
    conv2d, conv2d_grad, conv2d_transpose, conv2d_transpose_grad, dense,
    dense_grad, gaussian_kl, gaussian_kl_grad, relu, relu_grad, sigmoid,
    sigmoid_grad, softmax, softmax_cross_entropy, softmax_grad,
)
from .optim import adam_step
from .params import ParamStore, load_checkpoint, save_checkpoint
from .rng import generator, seeded_normal
