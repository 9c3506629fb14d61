"""From-scratch CNN-3 and residual LSTM."""

from .kernels import channel_average_pool, channel_average_pool_backward
from .model import (
    GradCheckResult,
    NetDetector,
    TrainConfig,
    TrainResult,
    cnn3_forward,
    forward_logit,
    grad_check,
    linear_grad_check,
    loss_and_grad,
    lstm_forward,
    predict_logits,
    predict_proba,
    train,
)
from .params import Params, init_params, truncated_normal, xavier_uniform

__all__ = [
    "GradCheckResult", "NetDetector", "Params", "TrainConfig", "TrainResult", "channel_average_pool",
    "channel_average_pool_backward", "cnn3_forward", "forward_logit", "grad_check", "init_params",
    "linear_grad_check", "loss_and_grad", "lstm_forward", "predict_logits", "predict_proba", "train",
    "truncated_normal", "xavier_uniform",
]
