"""DP-SGD training, public pretraining and freeze-prefix fine-tuning.

Accounting is deliberately elementary: each of the ``T`` noisy steps is a
Gaussian mechanism at ``(eps/T, delta/T)`` and the steps compose
sequentially, so the trained model is ``(eps, delta)``-DP with respect to its
training subset. No subsampling amplification is claimed.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, InvalidInputError, InvalidParameterError
from . import _reference as ref
from .backend import clipped_grad_sum
from .model import KINDS, TrainedModel


@dataclass(frozen=True)
class LearnerSpec:
    hidden_layers: tuple = (20, 10)
    clip_norm: float = 1.0
    epochs: int = 30
    minibatch_size: int = 100
    learning_rate: float = 0.1
    freeze_prefix: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if not self.clip_norm > 0:
            raise InvalidParameterError(f"clip_norm must be > 0, got {self.clip_norm}")
        if self.epochs < 1 or self.minibatch_size < 1:
            raise InvalidParameterError("epochs and minibatch_size must be >= 1")
        if not self.learning_rate > 0:
            raise InvalidParameterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if any(h < 1 for h in self.hidden_layers):
            raise InvalidParameterError(f"hidden layer widths must be >= 1, got {self.hidden_layers}")
        if not 0 <= self.freeze_prefix < self.n_layers:
            raise InvalidParameterError(
                f"freeze_prefix must lie in [0, {self.n_layers}) for {self.n_layers} layers, got {self.freeze_prefix}"
            )

    @property
    def n_layers(self):
        return len(self.hidden_layers) + 1

    def sizes(self, n_features, n_outputs):
        return (int(n_features), *self.hidden_layers, int(n_outputs))


def clip_gradient(g, clip_norm):
    """Scale ``g`` so that its L2 norm is at most ``clip_norm``."""
    g = np.asarray(g, dtype=np.float64)
    return g / max(1.0, float(np.linalg.norm(g)) / clip_norm)


def n_steps(n_samples, spec):
    return spec.epochs * math.ceil(n_samples / spec.minibatch_size)


def noise_multiplier(epsilon, delta, steps):
    """Gaussian-mechanism multiplier for one of ``steps`` equal shares of the budget."""
    if math.isinf(epsilon):
        return 0.0
    if not epsilon > 0:
        raise InvalidParameterError(f"epsilon must be > 0, got {epsilon}")
    if not delta > 0:
        raise ConfigurationError("DP-SGD needs delta > 0 (Gaussian mechanism); got delta = 0")
    eps_step = epsilon / steps
    delta_step = delta / steps
    sigma = math.sqrt(2.0 * math.log(1.25 / delta_step)) / eps_step if eps_step > 0 else math.inf
    if not math.isfinite(sigma):
        raise ConfigurationError(
            f"{steps} noisy steps leave eps/step = {eps_step:g}; reduce epochs or raise minibatch_size"
        )
    return sigma


def step_noise_std(epsilon, delta, steps, clip_norm, minibatch_size):
    """Standard deviation of the noise added to each averaged minibatch gradient."""
    return noise_multiplier(epsilon, delta, steps) * clip_norm / minibatch_size


def init_params(sizes, rng):
    """Glorot-style scaled-uniform weights and zero biases."""
    params = np.zeros(ref.n_params(sizes))
    offsets, _ = ref.layer_offsets(sizes)
    for (w0, b0), n_in, n_out in zip(offsets, sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (n_in + n_out))
        params[w0:b0] = rng.uniform(-limit, limit, size=n_in * n_out)
    return params


def _as_xy(data):
    X, y = data[0], data[1]
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y)
    if len(X) == 0:
        raise InvalidInputError("cannot train on an empty subset")
    if len(X) != len(y):
        raise InvalidInputError(f"{len(X)} feature rows but {len(y)} targets")
    return X, y


def _descend(params, sizes, kind, X, y, spec, noise_std, first_trainable, shuffle_rng, noise_rng):
    """Minibatch clipped gradient descent; mutates and returns ``params``."""
    start = ref.layer_offsets(sizes)[0][first_trainable][0]
    n = len(X)
    B = spec.minibatch_size
    for _ in range(spec.epochs):
        order = shuffle_rng.permutation(n)
        for lo in range(0, n, B):
            idx = order[lo:lo + B]
            grad, _ = clipped_grad_sum(params, sizes, X[idx], y[idx], kind, spec.clip_norm, first_trainable)
            update = grad[start:] / B
            if noise_std > 0:
                update += noise_rng.normal(0.0, noise_std, size=update.shape)
            params[start:] -= spec.learning_rate * update
    return params


def _child_rngs(rng, noise_rng):
    # batch order never depends on the noise level, so a noiseless run and a
    # noisy run with the same rng visit identical minibatches
    init_rng, shuffle_rng, own_noise = rng.spawn(3)
    return init_rng, shuffle_rng, own_noise if noise_rng is None else noise_rng


def train_dp(data, spec, epsilon, delta, rng, *, noise_rng=None, kind="classifier", n_outputs=2, init=None):
    """Train a model on ``data = (X, y)`` with DP-SGD at ``(epsilon, delta)``.

    ``rng`` drives initialisation and batch order, ``noise_rng`` (default: a
    child of ``rng``) the Gaussian noise. ``epsilon = math.inf`` trains
    without noise but keeps clipping. ``init`` overrides the initial
    parameters.
    """
    X, y = _as_xy(data)
    if kind not in KINDS:
        raise ConfigurationError(f"unknown model kind {kind!r}")
    n_outputs = 1 if kind == "regressor" else n_outputs
    sizes = spec.sizes(X.shape[1], n_outputs)
    init_rng, shuffle_rng, noise_rng = _child_rngs(rng, noise_rng)
    params = init_params(sizes, init_rng) if init is None else np.array(init, dtype=np.float64)
    std = step_noise_std(epsilon, delta, n_steps(len(X), spec), spec.clip_norm, spec.minibatch_size)
    params = _descend(params, sizes, KINDS[kind], X, y, spec, std, 0, shuffle_rng, noise_rng)
    return TrainedModel(kind, sizes, params, epsilon, delta if math.isfinite(epsilon) else 0.0)


def pretrain_public(data, spec, rng, *, public=False, kind="classifier", n_outputs=2):
    """Non-private training on data explicitly flagged as public."""
    if not public:
        raise ConfigurationError("pretrain_public refuses data that is not flagged public")
    return train_dp(data, spec, math.inf, 0.0, rng, kind=kind, n_outputs=n_outputs)


def finetune_dp(pretrained, data, spec, epsilon, delta, rng, *, noise_rng=None):
    """DP-SGD on the layers after ``spec.freeze_prefix``, starting from ``pretrained``.

    Frozen layers are copied bit for bit; the clipping norm and the noise
    cover only the trainable suffix.
    """
    X, y = _as_xy(data)
    sizes = spec.sizes(X.shape[1], pretrained.n_outputs)
    if tuple(sizes) != pretrained.sizes:
        raise ConfigurationError(f"pretrained architecture {pretrained.sizes} does not match {tuple(sizes)}")
    std = step_noise_std(epsilon, delta, n_steps(len(X), spec), spec.clip_norm, spec.minibatch_size)
    _, shuffle_rng, noise_rng = _child_rngs(rng, noise_rng)
    params = np.array(pretrained.params, dtype=np.float64)
    params = _descend(params, sizes, KINDS[pretrained.kind], X, y, spec, std, spec.freeze_prefix, shuffle_rng, noise_rng)
    return TrainedModel(pretrained.kind, sizes, params, epsilon, delta if math.isfinite(epsilon) else 0.0)


@dataclass
class DPLearner:
    """Trains every ensemble member from scratch on its own chunk."""

    spec: LearnerSpec
    kind: str = "classifier"
    n_outputs: int = 2

    def fit(self, data, epsilon, delta, rng, noise_rng=None):
        return train_dp(data, self.spec, epsilon, delta, rng, noise_rng=noise_rng, kind=self.kind,
                        n_outputs=self.n_outputs)


@dataclass
class TransferLearner:
    """Fine-tunes the trailing layers of a publicly pretrained model."""

    pretrained: TrainedModel
    spec: LearnerSpec = field(default_factory=LearnerSpec)

    def __post_init__(self):
        if self.spec.freeze_prefix < 1:
            raise ConfigurationError("transfer learning needs freeze_prefix >= 1")

    @property
    def kind(self):
        return self.pretrained.kind

    def fit(self, data, epsilon, delta, rng, noise_rng=None):
        return finetune_dp(self.pretrained, data, self.spec, epsilon, delta, rng, noise_rng=noise_rng)
