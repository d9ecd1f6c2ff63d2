"""Pure numpy kernels for the fully connected network.

Parameters live in one flat float64 vector; layer ``l`` stores its weight
matrix (``sizes[l] x sizes[l+1]``, row-major) followed by its bias.
Hidden layers use ReLU. The output is a softmax for classifiers
(cross-entropy loss) and a sigmoid for regressors (squared-error loss).

The per-example gradient of a dense layer is the outer product of its input
activation and its output delta, so its squared Frobenius norm factorises as
``(|a|^2 + 1) * |delta|^2`` (the ``+1`` is the bias). That lets the clipped
sum be formed without materialising per-example gradients.
"""
import numpy as np

CLASSIFIER = 0
REGRESSOR = 1


def layer_offsets(sizes):
    """Start offsets of each layer's (weights, bias) block plus the total size."""
    offsets = []
    pos = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        offsets.append((pos, pos + n_in * n_out))
        pos += n_in * n_out + n_out
    return offsets, pos


def n_params(sizes):
    return layer_offsets(sizes)[1]


def unpack(params, sizes):
    offsets, _ = layer_offsets(sizes)
    layers = []
    for (w0, b0), n_in, n_out in zip(offsets, sizes[:-1], sizes[1:]):
        layers.append((params[w0:b0].reshape(n_in, n_out), params[b0:b0 + n_out]))
    return layers


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def forward(params, sizes, X, kind):
    """Network outputs for a batch: class probabilities or values in [0, 1]."""
    a = np.asarray(X, dtype=np.float64)
    layers = unpack(params, sizes)
    for W, b in layers[:-1]:
        a = np.maximum(a @ W + b, 0.0)
    W, b = layers[-1]
    z = a @ W + b
    if kind == CLASSIFIER:
        return _softmax(z)
    return _sigmoid(z[:, 0])


def _activations(layers, X):
    acts = [X]
    a = X
    for W, b in layers[:-1]:
        a = np.maximum(a @ W + b, 0.0)
        acts.append(a)
    W, b = layers[-1]
    return acts, a @ W + b


def _output_delta(z, y, kind):
    if kind == CLASSIFIER:
        delta = _softmax(z)
        delta[np.arange(len(y)), y.astype(np.intp)] -= 1.0
        return delta
    yhat = _sigmoid(z[:, 0])
    return (2.0 * (yhat - y) * yhat * (1.0 - yhat))[:, None]


def example_losses(params, sizes, X, y, kind):
    X = np.asarray(X, dtype=np.float64)
    out = forward(params, sizes, X, kind)
    if kind == CLASSIFIER:
        return -np.log(np.maximum(out[np.arange(len(y)), np.asarray(y, dtype=np.intp)], 1e-300))
    return (out - y) ** 2


def clipped_grad_sum(params, sizes, X, y, kind, clip_norm, first_trainable=0):
    """Sum over the batch of per-example gradients, each clipped to ``clip_norm``.

    Only layers ``first_trainable, ..., L-1`` contribute; entries of frozen
    layers stay zero and do not count towards the clipping norm. Returns
    ``(grad, norms)`` where ``norms`` are the unclipped per-example norms.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    layers = unpack(params, sizes)
    acts, z = _activations(layers, X)
    n_layers = len(layers)

    delta = _output_delta(z, y, kind)
    deltas = [None] * n_layers
    sq = np.zeros(len(X))
    for l in range(n_layers - 1, first_trainable - 1, -1):
        deltas[l] = delta
        sq += (np.einsum("ij,ij->i", acts[l], acts[l]) + 1.0) * np.einsum("ij,ij->i", delta, delta)
        if l > first_trainable:
            delta = (delta @ layers[l][0].T) * (acts[l] > 0.0)
    norms = np.sqrt(sq)
    scale = 1.0 / np.maximum(1.0, norms / clip_norm)

    grad = np.zeros_like(params, dtype=np.float64)
    offsets, _ = layer_offsets(sizes)
    for l in range(first_trainable, n_layers):
        w0, b0 = offsets[l]
        sd = deltas[l] * scale[:, None]
        grad[w0:b0] = (acts[l].T @ sd).ravel()
        grad[b0:b0 + sizes[l + 1]] = sd.sum(axis=0)
    return grad, norms


def example_gradient(params, sizes, x, y, kind, first_trainable=0):
    """Unclipped gradient of one example's loss (full-length, zeros for frozen layers)."""
    grad, _ = clipped_grad_sum(params, sizes, np.atleast_2d(x), np.atleast_1d(y), kind, np.inf, first_trainable)
    return grad
