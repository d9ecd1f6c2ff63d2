"""Temporal ensemble: weighted prediction and the per-chunk update.

A released ensemble holds only models and their noisy weights.
"""
import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, TypeMismatchError
from .learners import TrainedModel
from .privacy import UpdateMode
from .weights import noisy_weight

ENSEMBLE_FORMAT = "dpstream.ensemble"
ENSEMBLE_VERSION = 1


@dataclass(frozen=True)
class EnsembleMember:
    model: TrainedModel
    time_index: int
    weight: float


@dataclass
class Ensemble:
    members: list
    capacity: int
    mode: UpdateMode = UpdateMode.OLDEST
    current_time: int = 0

    def __post_init__(self):
        self.mode = UpdateMode.parse(self.mode)
        if not 1 <= len(self.members) <= self.capacity:
            raise InvalidInputError(f"ensemble needs 1..{self.capacity} members, got {len(self.members)}")
        taus = [m.time_index for m in self.members]
        if any(a >= b for a, b in zip(taus, taus[1:])):
            raise InvalidInputError(f"member time indices must be strictly ascending, got {taus}")
        kinds = {m.model.kind for m in self.members}
        if len(kinds) != 1:
            raise TypeMismatchError(f"members mix model kinds {sorted(kinds)}")

    @property
    def time_indices(self):
        return tuple(m.time_index for m in self.members)

    @property
    def weights(self):
        return np.array([m.weight for m in self.members], dtype=np.float64)

    @property
    def kind(self):
        return self.members[0].model.kind

    def _normalised_weights(self):
        w = self.weights
        total = w.sum()
        if total > 0:
            return w / total, False
        return np.full(len(w), 1.0 / len(w)), True

    def predict_class_scores(self, X, return_fallback=False):
        """Weighted average of member class scores, shape ``(n, n_classes)``.

        When every weight is zero the members are averaged uniformly; pass
        ``return_fallback=True`` to learn whether that happened.
        """
        if self.kind != "classifier":
            raise TypeMismatchError("predict_class_scores needs classifier members")
        single = np.ndim(X) == 1
        X = np.atleast_2d(X)
        w, fallback = self._normalised_weights()
        scores = sum(wi * m.model.predict(X) for wi, m in zip(w, self.members))
        scores = np.clip(scores, 0.0, 1.0)
        scores = scores[0] if single else scores
        return (scores, fallback) if return_fallback else scores

    def predict_class(self, X):
        """Argmax class; ties go to the lowest class index."""
        scores = self.predict_class_scores(X)
        return np.argmax(scores, axis=-1)

    def predict_regression(self, X, return_fallback=False):
        """Weighted average of member values; same zero-weight fallback as classification."""
        if self.kind != "regressor":
            raise TypeMismatchError("predict_regression needs regressor members")
        single = np.ndim(X) == 1
        X = np.atleast_2d(X)
        w, fallback = self._normalised_weights()
        values = np.clip(sum(wi * m.model.predict(X) for wi, m in zip(w, self.members)), 0.0, 1.0)
        values = values[0] if single else values
        return (values, fallback) if return_fallback else values

    def predict(self, X):
        return self.predict_class(X) if self.kind == "classifier" else self.predict_regression(X)

    def to_dict(self):
        return {
            "format": ENSEMBLE_FORMAT,
            "version": ENSEMBLE_VERSION,
            "time": self.current_time,
            "mode": self.mode.value,
            "k": self.capacity,
            "members": [
                {"tau": m.time_index, "weight": float(m.weight), "model_blob": m.model.to_dict()}
                for m in self.members
            ],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("format") != ENSEMBLE_FORMAT or doc.get("version") != ENSEMBLE_VERSION:
            raise InvalidInputError(f"unsupported ensemble document {doc.get('format')!r} v{doc.get('version')}")
        members = [
            EnsembleMember(TrainedModel.from_dict(m["model_blob"]), int(m["tau"]), float(m["weight"]))
            for m in doc["members"]
        ]
        return cls(members, int(doc["k"]), doc["mode"], int(doc["time"]))


def _weigh(models, val, scheme, params, ledger, chunk_id, noise_rng):
    rngs = noise_rng.spawn(len(models))
    return [
        noisy_weight(scheme, model, val, params.epsilon_weight, r, ledger, chunk_id).value
        for model, r in zip(models, rngs)
    ]


def _split_rng(rng, noise_rng):
    if noise_rng is None:
        rng, noise_rng = rng.spawn(2)
    return rng, noise_rng


def bootstrap(chunks, scheme, params, learner, ledger, rng, noise_rng=None):
    """First full ensemble from the first ``k`` chunks.

    One model per chunk; all ``k`` weights come from the last chunk's
    validation subset. Capacity and update mode are taken from the ledger.
    ``rng`` drives initialisation and batch order, ``noise_rng`` (default: a
    child of ``rng``) every privacy noise draw.
    """
    k = ledger.k
    if len(chunks) != k:
        raise InvalidInputError(f"bootstrap needs exactly k={k} chunks, got {len(chunks)}")
    rng, noise_rng = _split_rng(rng, noise_rng)
    fit_rngs = rng.spawn(k)
    noise_rngs = noise_rng.spawn(k + 1)
    models = []
    for chunk, r, nr in zip(chunks, fit_rngs, noise_rngs):
        ledger.record_training(chunk.time_index)
        models.append(learner.fit(chunk.train, params.epsilon_train, params.delta, r, noise_rng=nr))
    last = chunks[-1]
    weights = _weigh(models, last.val, scheme, params, ledger, last.time_index, noise_rngs[-1])
    members = [EnsembleMember(m, c.time_index, w) for m, c, w in zip(models, chunks, weights)]
    return Ensemble(members, k, ledger.mode, last.time_index)


def update(ensemble, train, val, scheme, params, learner, ledger, rng, noise_rng=None):
    """Advance the ensemble by one chunk.

    Oldest mode reweighs the ``k - 1`` survivors and the new model on the new
    validation subset (``k`` queries) and drops the oldest member. Worst mode
    reweighs all ``k + 1`` candidates and drops the smallest weight, the
    oldest one among ties; the new model itself may be the one dropped.
    """
    t_new = ensemble.current_time + 1
    rng, noise_rng = _split_rng(rng, noise_rng)
    train_noise, weight_noise = noise_rng.spawn(2)
    ledger.record_training(t_new)
    new_model = learner.fit(train, params.epsilon_train, params.delta, rng, noise_rng=train_noise)

    if ensemble.mode is UpdateMode.OLDEST:
        keep = ensemble.members[1:] if len(ensemble.members) == ensemble.capacity else ensemble.members
        candidates = [(m.model, m.time_index) for m in keep] + [(new_model, t_new)]
    else:
        candidates = [(m.model, m.time_index) for m in ensemble.members] + [(new_model, t_new)]
    weights = _weigh([c[0] for c in candidates], val, scheme, params, ledger, t_new, weight_noise)
    members = [EnsembleMember(m, tau, w) for (m, tau), w in zip(candidates, weights)]
    if len(members) > ensemble.capacity:
        # argmin returns the first, i.e. oldest, of tied minima
        del members[int(np.argmin(weights))]
    return Ensemble(members, ensemble.capacity, ensemble.mode, t_new)
