"""Drifting rotating-hyperplane streams, CSV ingestion, chunk splitting and preprocessing."""
import csv
import enum
import logging
import math
from collections import namedtuple
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, InvalidInputError, SchemaError

log = logging.getLogger(__name__)

Subset = namedtuple("Subset", ["X", "y"])

DEFAULT_RATIOS = (0.7, 0.2, 0.1)
MIN_CHUNK_SIZE = 10


@dataclass(frozen=True, eq=False)
class DataChunk:
    """Samples that arrived at one stream time, with optional train/val/test index sets."""

    time_index: int
    X: np.ndarray
    y: np.ndarray
    train_idx: np.ndarray = None
    val_idx: np.ndarray = None
    test_idx: np.ndarray = None
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.y)

    @property
    def is_split(self):
        return self.train_idx is not None

    def _subset(self, idx):
        if idx is None:
            raise InvalidInputError(f"chunk {self.time_index} has not been split")
        return Subset(self.X[idx], self.y[idx])

    @property
    def train(self):
        return self._subset(self.train_idx)

    @property
    def val(self):
        return self._subset(self.val_idx)

    @property
    def test(self):
        return self._subset(self.test_idx)

    def with_features(self, X):
        return replace(self, X=X)


class DriftType(str, enum.Enum):
    GRADUAL = "gradual"
    RAPID = "rapid"
    RECURRENT = "recurrent"
    ABRUPT = "abrupt"


@dataclass(frozen=True)
class HyperplaneParams:
    n_features: int = 20
    n_drift_features: int = 0
    mag_change: float = 0.0
    noise_percentage: float = 0.0
    sigma_percentage: float = 0.0
    drift_type: DriftType = DriftType.GRADUAL
    event_period: int = 5

    def __post_init__(self):
        object.__setattr__(self, "drift_type", DriftType(self.drift_type))
        if self.n_features < 1:
            raise ConfigurationError(f"n_features must be >= 1, got {self.n_features}")
        if not 0 <= self.n_drift_features <= self.n_features:
            raise ConfigurationError(
                f"n_drift_features must lie in [0, n_features={self.n_features}], got {self.n_drift_features}"
            )
        if self.mag_change < 0:
            raise ConfigurationError(f"mag_change must be >= 0, got {self.mag_change}")
        for name in ("noise_percentage", "sigma_percentage"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        if self.event_period < 1:
            raise ConfigurationError(f"event_period must be >= 1, got {self.event_period}")


PRESETS = {
    "gradual": HyperplaneParams(20, 10, 0.1, 0.05, 0.1, DriftType.GRADUAL),
    "rapid": HyperplaneParams(20, 20, 0.4, 0.1, 0.4, DriftType.RAPID),
    "recurrent": HyperplaneParams(20, 20, 0.4, 0.1, 0.4, DriftType.RECURRENT),
    "abrupt": HyperplaneParams(20, 0, 0.0, 0.0, 0.0, DriftType.ABRUPT),
}


def preset(name, **overrides):
    try:
        params = PRESETS[name.lower()]
    except KeyError:
        raise ConfigurationError(f"unknown hyperplane preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(params, **overrides)


def hyperplane_concept(X, weights):
    """Positive iff ``w . x >= sum(w) / 2``; ``weights`` may be one vector or one per row."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim == 1:
        return (X @ weights >= weights.sum() / 2.0).astype(np.int64)
    return (np.einsum("ij,ij->i", X, weights) >= weights.sum(axis=1) / 2.0).astype(np.int64)


def generate_hyperplane_stream(params, n_chunks, chunk_size, seed):
    """Generate ``n_chunks`` chunks (time indices 1..n) of a rotating-hyperplane stream.

    Features are uniform on the unit cube. Within a chunk each drifting
    weight moves linearly by ``direction * mag_change`` in total; after each
    chunk every direction reverses with probability ``sigma_percentage``.
    Recurrent streams restore the initial weights and directions at chunks
    ``1 + m * event_period``. Abrupt streams toggle label complementing at
    every ``event_period``-th chunk, so chunks ``period .. 2*period - 1`` are
    complemented, the next ``period`` are not, and so on.

    Each chunk's ``info`` holds the weight vector at its first sample
    (``concept_weights``) and whether its labels are complemented.
    """
    if chunk_size < MIN_CHUNK_SIZE:
        raise ConfigurationError(f"chunk_size must be >= {MIN_CHUNK_SIZE}, got {chunk_size}")
    if n_chunks < 0:
        raise ConfigurationError(f"n_chunks must be >= 0, got {n_chunks}")
    d, nd = params.n_features, params.n_drift_features
    rng = np.random.default_rng(seed)
    w_init = rng.random(d)
    dir_init = rng.choice([-1.0, 1.0], size=d)
    w, dirs = w_init.copy(), dir_init.copy()
    complemented = False
    positions = np.arange(chunk_size, dtype=np.float64)[:, None]
    chunks = []
    for t in range(1, n_chunks + 1):
        if params.drift_type is DriftType.RECURRENT and t > 1 and (t - 1) % params.event_period == 0:
            w, dirs = w_init.copy(), dir_init.copy()
        if params.drift_type is DriftType.ABRUPT and t % params.event_period == 0:
            complemented = not complemented
        X = rng.random((chunk_size, d))
        step = np.zeros(d)
        step[:nd] = dirs[:nd] * params.mag_change / chunk_size
        y = hyperplane_concept(X, w + positions * step) if nd else hyperplane_concept(X, w)
        flip = rng.random(chunk_size) < params.noise_percentage
        y = np.where(flip, 1 - y, y)
        if complemented:
            y = 1 - y
        chunks.append(DataChunk(t, X, y, info={"concept_weights": w.copy(), "labels_complemented": complemented}))
        w = w + chunk_size * step
        reverse = rng.random(d) < params.sigma_percentage
        dirs = np.where(reverse, -dirs, dirs)
    return chunks


def _as_rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def split_sizes(n, ratios=DEFAULT_RATIOS):
    """(train, val, test) sizes from floored cumulative boundaries, remainder to train.

    Test takes ``floor(n * r_test)``, validation and test together take
    ``floor(n * (r_val + r_test))``, so every part is within one sample of
    its ratio.
    """
    n_test = math.floor(n * ratios[2] + 1e-9)
    n_held = math.floor(n * (ratios[1] + ratios[2]) + 1e-9)
    return n - n_held, n_held - n_test, n_test


def split_chunk(chunk, ratios=DEFAULT_RATIOS, seed=0):
    """Seeded shuffle, then partition into train / validation / test."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidInputError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(chunk)
    if n < MIN_CHUNK_SIZE:
        raise InvalidInputError(f"chunk {chunk.time_index} has {n} samples; need at least {MIN_CHUNK_SIZE}")
    n_train, n_val, _ = split_sizes(n, ratios)
    order = _as_rng(seed).permutation(n)
    return replace(
        chunk,
        train_idx=np.sort(order[:n_train]),
        val_idx=np.sort(order[n_train:n_train + n_val]),
        test_idx=np.sort(order[n_train + n_val:]),
    )


# -- CSV ---------------------------------------------------------------------

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"


class RowParseError(InvalidInputError):
    def __init__(self, line, column, value):
        super().__init__(f"line {line}: cannot parse column {column!r} value {value!r}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class CsvSchema:
    """Column roles of a chunked CSV dataset.

    ``features`` is a sequence of ``(column, kind)`` pairs. Regression
    targets are min-max normalised with the public ``target_bounds``.
    Classification labels map to ids in the order of ``classes``, or in
    sorted order of the distinct labels when ``classes`` is not given.
    """

    features: tuple
    label: str
    time: str
    task: str = "classification"
    target_bounds: tuple = (0.0, 1.0)
    classes: tuple = None

    def __post_init__(self):
        feats = tuple((str(name), str(kind).lower()) for name, kind in self.features)
        object.__setattr__(self, "features", feats)
        for name, kind in feats:
            if kind not in (CONTINUOUS, CATEGORICAL):
                raise SchemaError(f"feature {name!r} has unknown kind {kind!r}")
        if self.task not in ("classification", "regression"):
            raise SchemaError(f"task must be 'classification' or 'regression', got {self.task!r}")
        lo, hi = self.target_bounds
        if not hi > lo:
            raise SchemaError(f"target_bounds must satisfy lo < hi, got {self.target_bounds}")

    @property
    def kinds(self):
        return [kind for _, kind in self.features]

    @property
    def columns(self):
        return [name for name, _ in self.features] + [self.label, self.time]


def hyperplane_schema(n_features):
    """Schema matching files written by :func:`write_stream_csv`."""
    return CsvSchema(tuple((f"f{j}", CONTINUOUS) for j in range(n_features)), "label", "time")


def _sort_key(values):
    try:
        floats = {v: float(v) for v in values}
    except ValueError:
        return lambda v: v
    return floats.__getitem__


def ingest_csv(path, schema):
    """Read a chunked CSV: one chunk per distinct time value, ascending."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        missing = [c for c in schema.columns if c not in reader.fieldnames]
        if missing:
            raise SchemaError(f"{path}: missing column {missing[0]!r}")
        rows = []
        for row in reader:
            feats = []
            for name, kind in schema.features:
                value = row[name]
                if kind == CONTINUOUS:
                    try:
                        value = float(value)
                    except (TypeError, ValueError):
                        raise RowParseError(reader.line_num, name, value) from None
                feats.append(value)
            label = row[schema.label]
            if schema.task == "regression":
                try:
                    label = float(label)
                except (TypeError, ValueError):
                    raise RowParseError(reader.line_num, schema.label, label) from None
            rows.append((row[schema.time], feats, label, reader.line_num))
    if not rows:
        return []

    if schema.task == "classification":
        classes = schema.classes or tuple(sorted({r[2] for r in rows}, key=_sort_key({r[2] for r in rows})))
        class_ids = {str(c): i for i, c in enumerate(classes)}
        unknown = [r for r in rows if r[2] not in class_ids]
        if unknown:
            raise RowParseError(unknown[0][3], schema.label, unknown[0][2])
    else:
        lo, hi = schema.target_bounds

    all_continuous = all(k == CONTINUOUS for k in schema.kinds)
    times = {r[0] for r in rows}
    chunks = []
    for t_index, tv in enumerate(sorted(times, key=_sort_key(times)), start=1):
        group = [r for r in rows if r[0] == tv]
        X = np.array([r[1] for r in group], dtype=np.float64 if all_continuous else object)
        if schema.task == "classification":
            y = np.array([class_ids[r[2]] for r in group], dtype=np.int64)
        else:
            raw = np.array([r[2] for r in group], dtype=np.float64)
            out = (raw < lo) | (raw > hi)
            if np.any(out):
                log.warning("time %s: %d targets outside public bounds %s clamped", tv, int(out.sum()), (lo, hi))
            y = (np.clip(raw, lo, hi) - lo) / (hi - lo)
        chunks.append(DataChunk(t_index, X, y, info={"time_value": tv}))
    return chunks


def write_stream_csv(chunks, path):
    """Write chunks as ``f0..f{d-1},label,time`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        d = chunks[0].X.shape[1] if chunks else 0
        writer.writerow([f"f{j}" for j in range(d)] + ["label", "time"])
        for chunk in chunks:
            for x, label in zip(chunk.X, chunk.y):
                writer.writerow([repr(float(v)) for v in x] + [label.item() if hasattr(label, "item") else label,
                                                              chunk.time_index])


# -- preprocessing -------------------------------------------------------------

class Preprocessor:
    """Standardises continuous columns and one-hot encodes categorical ones.

    Statistics come from the data passed to :meth:`fit` only; categories
    unseen at fit time encode as all zeros.
    """

    def __init__(self, kinds):
        self.kinds = list(kinds)
        self.means = {}
        self.scales = {}
        self.categories = {}

    def fit(self, X):
        X = np.asarray(X, dtype=object if CATEGORICAL in self.kinds else np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.kinds):
            raise InvalidInputError(f"expected {len(self.kinds)} columns, got shape {X.shape}")
        for j, kind in enumerate(self.kinds):
            if kind == CONTINUOUS:
                col = X[:, j].astype(np.float64)
                sd = col.std()
                self.means[j] = col.mean()
                self.scales[j] = sd if sd > 0 else 1.0
            else:
                self.categories[j] = sorted({str(v) for v in X[:, j]})
        return self

    @property
    def n_outputs(self):
        return sum(len(self.categories[j]) if k == CATEGORICAL else 1 for j, k in enumerate(self.kinds))

    def transform(self, X):
        X = np.asarray(X, dtype=object if CATEGORICAL in self.kinds else np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.kinds):
            raise InvalidInputError(f"expected {len(self.kinds)} columns, got shape {X.shape}")
        blocks = []
        for j, kind in enumerate(self.kinds):
            if kind == CONTINUOUS:
                blocks.append(((X[:, j].astype(np.float64) - self.means[j]) / self.scales[j])[:, None])
            else:
                cats = self.categories[j]
                col = np.array([str(v) for v in X[:, j]])
                blocks.append((col[:, None] == np.array(cats)[None, :]).astype(np.float64))
        return np.hstack(blocks) if blocks else np.zeros((len(X), 0))


def fit_preprocessor(train_subset, schema_or_kinds):
    kinds = schema_or_kinds.kinds if isinstance(schema_or_kinds, CsvSchema) else schema_or_kinds
    X = train_subset[0] if isinstance(train_subset, tuple) else train_subset
    return Preprocessor(kinds).fit(X)


def apply_preprocessor(prep, samples):
    return prep.transform(samples)
