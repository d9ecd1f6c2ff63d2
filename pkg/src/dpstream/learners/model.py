"""Trained fully connected models and their JSON serialization."""
import json
import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from . import _reference as ref

MODEL_FORMAT = "dpstream.model"
MODEL_VERSION = 1

KINDS = {"classifier": ref.CLASSIFIER, "regressor": ref.REGRESSOR}


def _encode_eps(value):
    return "inf" if math.isinf(value) else float(value)


def _decode_eps(value):
    return math.inf if value == "inf" else float(value)


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """Immutable black-box predictor certified at ``(certified_epsilon, certified_delta)``.

    Classifiers return per-class scores in [0, 1] summing to one; regressors
    return a value in [0, 1].
    """

    kind: str
    sizes: tuple
    params: np.ndarray
    certified_epsilon: float
    certified_delta: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown model kind {self.kind!r}")
        params = np.array(self.params, dtype=np.float64)
        if params.shape != (ref.n_params(self.sizes),):
            raise ConfigurationError(f"expected {ref.n_params(self.sizes)} parameters for {self.sizes}, got {params.shape}")
        params.flags.writeable = False
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))

    @property
    def is_classifier(self):
        return self.kind == "classifier"

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    @property
    def n_outputs(self):
        return self.sizes[-1]

    def predict(self, X):
        """Scores of shape ``(n, n_classes)`` or values of shape ``(n,)``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return ref.forward(self.params, self.sizes, X, KINDS[self.kind])

    def layer_slice(self, layer):
        offsets, total = ref.layer_offsets(self.sizes)
        start = offsets[layer][0]
        stop = offsets[layer + 1][0] if layer + 1 < len(offsets) else total
        return slice(start, stop)

    def to_dict(self):
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": self.kind,
            "arch": {
                "sizes": list(self.sizes),
                "hidden_activation": "relu",
                "output_activation": "softmax" if self.is_classifier else "sigmoid",
            },
            "params": [float(v) for v in self.params],
            "certified_epsilon": _encode_eps(self.certified_epsilon),
            "certified_delta": float(self.certified_delta),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
            raise ConfigurationError(f"unsupported model document {doc.get('format')!r} v{doc.get('version')}")
        return cls(
            kind=doc["kind"],
            sizes=tuple(doc["arch"]["sizes"]),
            params=np.array(doc["params"], dtype=np.float64),
            certified_epsilon=_decode_eps(doc["certified_epsilon"]),
            certified_delta=float(doc["certified_delta"]),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))
