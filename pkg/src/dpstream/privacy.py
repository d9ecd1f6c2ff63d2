"""Laplace noise, sensitivity constants, budget calibration and the budget ledger.

The ledger is the operational form of the history-level guarantee: every
chunk's training subset may feed at most one model, and every chunk's
validation subset may answer at most ``k`` (oldest replacement) or ``k + 1``
(worst replacement) Laplace queries. As long as both caps hold, the privacy
loss of the whole release history is ``max(eps_train, cap * eps_weight)``
regardless of how many ensembles were released.
"""
import enum
import json
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import BudgetViolationError, InvalidParameterError


class UpdateMode(str, enum.Enum):
    OLDEST = "oldest"
    WORST = "worst"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise InvalidParameterError(f"unknown update mode {value!r}; expected 'oldest' or 'worst'") from None


def queries_per_chunk(k, mode):
    """Validation queries one chunk answers under ``mode``."""
    return k if UpdateMode.parse(mode) is UpdateMode.OLDEST else k + 1


@dataclass(frozen=True)
class PrivacyParams:
    epsilon_total: float
    epsilon_train: float
    epsilon_weight: float
    delta: float

    def __post_init__(self):
        for name in ("epsilon_total", "epsilon_train", "epsilon_weight"):
            value = getattr(self, name)
            if not value > 0:
                raise InvalidParameterError(f"{name} must be > 0, got {value}")
        if not 0 <= self.delta < 1:
            raise InvalidParameterError(f"delta must lie in [0, 1), got {self.delta}")

    @property
    def private(self):
        return math.isfinite(self.epsilon_total)


def calibrate(epsilon_total, delta, k, mode):
    """Split a total budget: the full epsilon trains, ``eps/k`` or ``eps/(k+1)`` weighs.

    ``epsilon_total = math.inf`` is the non-private sentinel and yields
    infinite training and weighting budgets.
    """
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise InvalidParameterError(f"k must be a positive integer, got {k!r}")
    if not epsilon_total > 0:
        raise InvalidParameterError(f"epsilon must be > 0, got {epsilon_total}")
    n_queries = queries_per_chunk(int(k), mode)
    return PrivacyParams(
        epsilon_total=float(epsilon_total),
        epsilon_train=float(epsilon_total),
        epsilon_weight=float(epsilon_total) / n_queries,
        delta=float(delta),
    )


def _check_scale(scale):
    if not (scale > 0 and math.isfinite(scale)):
        raise InvalidParameterError(f"Laplace scale must be a positive finite number, got {scale}")


def _inverse_cdf(u, scale):
    # u in (0, 1); centred so that u = 0.5 maps to 0
    c = u - 0.5
    return -scale * np.sign(c) * np.log1p(-2.0 * np.abs(c))


def laplace_sample(scale, rng):
    """One zero-mean Laplace draw with the given scale, by inverse CDF."""
    _check_scale(scale)
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return float(_inverse_cdf(u, scale))


def laplace_samples(scale, rng, size):
    """Vectorised :func:`laplace_sample`; consumes the generator identically."""
    _check_scale(scale)
    u = rng.random(size)
    zero = u == 0.0
    while np.any(zero):
        u[zero] = rng.random(int(zero.sum()))
        zero = u == 0.0
    return _inverse_cdf(u, scale)


def sensitivity_err():
    """Sensitivity of a sum of per-sample losses bounded in [0, 1]."""
    return 1.0


def sensitivity_ba(a1, p, val_size):
    """Sensitivity of the public-prior balanced accuracy estimate.

    ``val_size`` should be the configured minimum validation size so the
    exact size of each validation subset never has to be treated as public.
    """
    if not 0 < p < 1:
        raise InvalidParameterError(f"positive-class prior p must lie in (0, 1), got {p}")
    if not 0 <= a1 <= 1:
        raise InvalidParameterError(f"a1 must lie in [0, 1], got {a1}")
    if val_size < 1:
        raise InvalidParameterError(f"val_size must be >= 1, got {val_size}")
    return max(a1 / p, (1.0 - a1) / (1.0 - p)) / val_size


class BudgetLedger:
    """Per-chunk count of training uses and validation Laplace queries.

    Single writer per experiment run. Recording raises
    :class:`BudgetViolationError` before a count can exceed its cap.
    """

    def __init__(self, k, mode):
        if k < 1:
            raise InvalidParameterError(f"k must be >= 1, got {k}")
        self.k = int(k)
        self.mode = UpdateMode.parse(mode)
        self.times_trained_on = defaultdict(int)
        self.validation_laplace_queries = defaultdict(int)

    @property
    def query_cap(self):
        return queries_per_chunk(self.k, self.mode)

    def record_training(self, chunk_id):
        if self.times_trained_on[chunk_id] >= 1:
            raise BudgetViolationError(f"training subset of chunk {chunk_id} already trained a model")
        self.times_trained_on[chunk_id] += 1
        return self

    def record_validation_query(self, chunk_id):
        if self.validation_laplace_queries[chunk_id] >= self.query_cap:
            raise BudgetViolationError(
                f"validation subset of chunk {chunk_id} already answered {self.query_cap} queries "
                f"(cap for k={self.k}, mode={self.mode.value})"
            )
        self.validation_laplace_queries[chunk_id] += 1
        return self

    def chunk_ids(self):
        return sorted(set(self.times_trained_on) | set(self.validation_laplace_queries))

    def audit(self):
        """Raise if any counter is above its cap; return the number of chunks seen."""
        for cid in self.chunk_ids():
            if self.times_trained_on.get(cid, 0) > 1:
                raise BudgetViolationError(f"chunk {cid} trained {self.times_trained_on[cid]} times")
            if self.validation_laplace_queries.get(cid, 0) > self.query_cap:
                raise BudgetViolationError(
                    f"chunk {cid} answered {self.validation_laplace_queries[cid]} validation queries"
                )
        return len(self.chunk_ids())

    def to_records(self):
        return [
            {
                "chunk_id": cid,
                "times_trained_on": self.times_trained_on.get(cid, 0),
                "validation_laplace_queries": self.validation_laplace_queries.get(cid, 0),
            }
            for cid in self.chunk_ids()
        ]

    def to_json(self):
        return json.dumps({"k": self.k, "mode": self.mode.value, "chunks": self.to_records()}, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        ledger = cls(doc["k"], doc["mode"])
        for rec in doc["chunks"]:
            ledger.times_trained_on[rec["chunk_id"]] = rec["times_trained_on"]
            ledger.validation_laplace_queries[rec["chunk_id"]] = rec["validation_laplace_queries"]
        ledger.audit()
        return ledger


def history_guarantee(ledger, params):
    """(epsilon, delta) guarantee for the full release history.

    Depends only on the ensemble size and the budget split, never on how many
    updates the ledger has recorded; the audit makes sure the caps that
    justify this were respected.
    """
    ledger.audit()
    return max(params.epsilon_train, ledger.query_cap * params.epsilon_weight), params.delta
