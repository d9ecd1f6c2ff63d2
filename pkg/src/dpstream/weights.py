"""Noisy member weights for general classification, focused classification and regression.

Each ``noisy_weight_*`` call is one Laplace query against a validation
subset and is recorded in the budget ledger when one is supplied. Raw
statistics are kept on :class:`NoisyWeight` for tests and never copied into a
released ensemble.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, InvalidParameterError, TypeMismatchError
from .privacy import laplace_sample, sensitivity_ba, sensitivity_err

POSITIVE_THRESHOLD = 0.5


@dataclass(frozen=True)
class GeneralClassification:
    """Hinge-of-MSE weights; ``class_priors`` are public estimates indexed by class id."""

    class_priors: tuple = (0.5, 0.5)

    def __post_init__(self):
        priors = tuple(float(p) for p in self.class_priors)
        object.__setattr__(self, "class_priors", priors)
        if len(priors) < 2 or any(p < 0 for p in priors) or abs(sum(priors) - 1.0) > 1e-9:
            raise InvalidParameterError(f"class priors must be >= 0, at least two, and sum to 1; got {priors}")

    @property
    def n_classes(self):
        return len(self.class_priors)


@dataclass(frozen=True)
class FocusedClassification:
    """Balanced-accuracy weights for a binary task with public class-share estimates."""

    a1: float = 0.7
    p: float = 0.3
    min_val_size: int = 1
    a2: float = field(default=None)
    n: float = field(default=None)

    def __post_init__(self):
        if self.a2 is None:
            object.__setattr__(self, "a2", 1.0 - self.a1)
        if self.n is None:
            object.__setattr__(self, "n", 1.0 - self.p)
        if not 0 <= self.a1 <= 1 or abs(self.a1 + self.a2 - 1.0) > 1e-12:
            raise InvalidParameterError(f"need a1 in [0, 1] and a1 + a2 = 1; got a1={self.a1}, a2={self.a2}")
        if not 0 < self.p < 1 or abs(self.p + self.n - 1.0) > 1e-12:
            raise InvalidParameterError(f"need p in (0, 1) and p + n = 1; got p={self.p}, n={self.n}")
        if int(self.min_val_size) < 1:
            raise InvalidParameterError(f"min_val_size must be >= 1, got {self.min_val_size}")

    n_classes = 2

    @property
    def sensitivity(self):
        return sensitivity_ba(self.a1, self.p, self.min_val_size)


@dataclass(frozen=True)
class Regression:
    mu: float = 1e-5

    def __post_init__(self):
        if not self.mu > 0:
            raise InvalidParameterError(f"mu must be > 0, got {self.mu}")


@dataclass(frozen=True)
class NoisyWeight:
    value: float
    raw_statistic: float


def _val_xy(val):
    X, y = np.atleast_2d(np.asarray(val[0], dtype=np.float64)), np.asarray(val[1])
    if len(y) == 0:
        raise InvalidInputError("validation subset is empty")
    return X, y


def _classifier_scores(model, X):
    if not model.is_classifier:
        raise TypeMismatchError("expected a classifier")
    return model.predict(X)


def err_general(model, val):
    """Sum over the validation subset of (1 - score of the true class)^2."""
    X, y = _val_xy(val)
    scores = _classifier_scores(model, X)
    true_scores = scores[np.arange(len(y)), y.astype(np.intp)]
    return float(np.sum((1.0 - true_scores) ** 2))


def mse_random(class_priors):
    """MSE of a predictor that scores each class by its prior."""
    p = np.asarray(class_priors, dtype=np.float64)
    return float(np.sum(p * (1.0 - p) ** 2))


def _noise(scale, epsilon_weight, rng):
    return 0.0 if math.isinf(epsilon_weight) else laplace_sample(scale / epsilon_weight, rng)


def _record(ledger, chunk_id):
    if ledger is not None:
        ledger.record_validation_query(chunk_id)


def _check_eps(epsilon_weight):
    if not epsilon_weight > 0:
        raise InvalidParameterError(f"epsilon_weight must be > 0, got {epsilon_weight}")


def noisy_weight_general(model, val, class_priors, epsilon_weight, rng, ledger=None, chunk_id=None):
    _check_eps(epsilon_weight)
    err = err_general(model, val)
    _record(ledger, chunk_id)
    noisy_err = max(0.0, err + _noise(sensitivity_err(), epsilon_weight, rng))
    mse = noisy_err / len(val[1])
    return NoisyWeight(max(0.0, mse_random(class_priors) - mse), err)


def counts_focused(model, val):
    """(true positives, true negatives) with class 1 as the positive class."""
    X, y = _val_xy(val)
    scores = _classifier_scores(model, X)
    if scores.shape[1] != 2:
        raise TypeMismatchError("focused weighting needs a binary classifier")
    pred_pos = scores[:, 1] >= POSITIVE_THRESHOLD
    pos = y.astype(np.intp) == 1
    return int(np.sum(pred_pos & pos)), int(np.sum(~pred_pos & ~pos))


def balanced_accuracy_estimate(tp, tn, val_size, scheme):
    return scheme.a1 * tp / (scheme.p * val_size) + scheme.a2 * tn / (scheme.n * val_size)


def noisy_weight_focused(model, val, scheme, epsilon_weight, rng, ledger=None, chunk_id=None):
    _check_eps(epsilon_weight)
    tp, tn = counts_focused(model, val)
    ba = balanced_accuracy_estimate(tp, tn, len(val[1]), scheme)
    _record(ledger, chunk_id)
    return NoisyWeight(max(0.0, ba + _noise(scheme.sensitivity, epsilon_weight, rng)), ba)


def err_regression(model, val):
    """Sum of squared errors, each term clamped to [0, 1]."""
    X, y = _val_xy(val)
    y = y.astype(np.float64)
    if np.any((y < 0) | (y > 1)):
        raise InvalidInputError("regression targets must be normalised to [0, 1]")
    if model.is_classifier:
        raise TypeMismatchError("expected a regressor")
    yhat = model.predict(X)
    return float(np.sum(np.clip((y - yhat) ** 2, 0.0, 1.0)))


def noisy_weight_regression(model, val, mu, epsilon_weight, rng, ledger=None, chunk_id=None):
    _check_eps(epsilon_weight)
    err = err_regression(model, val)
    _record(ledger, chunk_id)
    noisy_err = max(0.0, err + _noise(sensitivity_err(), epsilon_weight, rng))
    return NoisyWeight(1.0 / (noisy_err / len(val[1]) + mu), err)


def noisy_weight(scheme, model, val, epsilon_weight, rng, ledger=None, chunk_id=None):
    """Dispatch to the weighting rule of ``scheme``."""
    if isinstance(scheme, GeneralClassification):
        return noisy_weight_general(model, val, scheme.class_priors, epsilon_weight, rng, ledger, chunk_id)
    if isinstance(scheme, FocusedClassification):
        return noisy_weight_focused(model, val, scheme, epsilon_weight, rng, ledger, chunk_id)
    if isinstance(scheme, Regression):
        return noisy_weight_regression(model, val, scheme.mu, epsilon_weight, rng, ledger, chunk_id)
    raise TypeError(f"unknown weight scheme {scheme!r}")
