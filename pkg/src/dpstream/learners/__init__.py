"""Black-box DP base learners: a small fully connected network trained with DP-SGD.

A network with no hidden layers is multinomial logistic regression (or a
logistic-squashed linear regressor), so the same code covers the linear
learner.
"""
from .backend import available_backends, get_backend, set_backend
from .dpsgd import (
    DPLearner,
    LearnerSpec,
    TransferLearner,
    clip_gradient,
    finetune_dp,
    init_params,
    n_steps,
    noise_multiplier,
    pretrain_public,
    step_noise_std,
    train_dp,
)
from .model import TrainedModel

__all__ = [
    "DPLearner",
    "LearnerSpec",
    "TrainedModel",
    "TransferLearner",
    "available_backends",
    "clip_gradient",
    "finetune_dp",
    "get_backend",
    "init_params",
    "n_steps",
    "noise_multiplier",
    "pretrain_public",
    "set_backend",
    "step_noise_std",
    "train_dp",
]
