"""Experiment harness: the six competitor methods, metrics, repetition and result files.

Seeding: a run seed drives every privacy noise draw. Stream generation,
splits, initialisation and batch order come from the data seed, which is
``stream_seed`` when configured and the run seed otherwise. With a fixed
``stream_seed`` the runs differ only in their privacy noise.
"""
import csv
import dataclasses
import enum
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import ensemble as ens
from .errors import BudgetViolationError, ConfigurationError, UndefinedMetricError
from .learners import DPLearner, LearnerSpec, TransferLearner, pretrain_public
from .privacy import BudgetLedger, UpdateMode, calibrate, history_guarantee
from .rng import derive_rng, derive_seed
from .streams import (
    DEFAULT_RATIOS,
    CsvSchema,
    Preprocessor,
    generate_hyperplane_stream,
    ingest_csv,
    preset,
    split_chunk,
)
from .weights import FocusedClassification, GeneralClassification, Regression

log = logging.getLogger(__name__)


class Method(str, enum.Enum):
    EPT = "EPT"
    EP = "EP"
    PT1 = "PT1"
    PTK = "PTk"
    ET = "ET"
    E = "E"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for m in cls:
            if m.value.lower() == str(value).strip().lower():
                return m
        raise ConfigurationError(f"unknown method {value!r}; choose from {[m.value for m in cls]}")

    @property
    def private(self):
        return self in (Method.EPT, Method.EP, Method.PT1, Method.PTK)

    @property
    def is_ensemble(self):
        return self in (Method.EPT, Method.EP, Method.ET, Method.E)


@dataclass(frozen=True)
class TransferConfig:
    """Stream layout for transfer learning: public chunks, then a discarded time buffer."""

    public_chunks: int = 1
    buffer_chunks: int = 0
    freeze_prefix: int = 1

    def __post_init__(self):
        if self.public_chunks < 1 or self.buffer_chunks < 0:
            raise ConfigurationError("transfer needs public_chunks >= 1 and buffer_chunks >= 0")
        if self.freeze_prefix < 1:
            raise ConfigurationError("transfer needs freeze_prefix >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    method: Method = Method.EP
    source: str = "hyperplane"
    preset: str = "rapid"
    n_chunks: int = 20
    chunk_size: int = 1000
    csv_path: str = None
    csv_schema: CsvSchema = None
    scheme: object = field(default_factory=GeneralClassification)
    k: int = 5
    epsilon: float = 1.0
    delta: float = 1e-4
    update_mode: UpdateMode = UpdateMode.OLDEST
    learner: LearnerSpec = field(default_factory=LearnerSpec)
    transfer: TransferConfig = None
    skip_chunks: int = 0
    n_runs: int = 10
    seed: int = 0
    stream_seed: int = None
    metrics: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        object.__setattr__(self, "update_mode", UpdateMode.parse(self.update_mode))
        if self.method in (Method.EPT, Method.ET) and self.transfer is None:
            raise ConfigurationError(f"{self.method.value} needs a transfer configuration")
        if self.method in (Method.EP, Method.E) and self.transfer is not None:
            raise ConfigurationError(f"{self.method.value} trains without transfer; remove the transfer settings")
        if self.source not in ("hyperplane", "csv"):
            raise ConfigurationError(f"source must be 'hyperplane' or 'csv', got {self.source!r}")
        if self.source == "csv" and (self.csv_path is None or self.csv_schema is None):
            raise ConfigurationError("csv source needs csv_path and a schema")
        if self.k < 1 or self.n_runs < 1:
            raise ConfigurationError("k and n_runs must be >= 1")
        if not self.epsilon > 0 or not 0 <= self.delta < 1:
            raise ConfigurationError(f"need epsilon > 0 and delta in [0, 1), got {self.epsilon}, {self.delta}")
        if self.method.private and math.isfinite(self.epsilon) and not self.delta > 0:
            raise ConfigurationError("private methods train with DP-SGD and need delta > 0")
        if self.transfer is not None and self.transfer.freeze_prefix >= self.learner.n_layers:
            raise ConfigurationError(
                f"freeze_prefix {self.transfer.freeze_prefix} leaves no trainable layer in {self.learner.n_layers}"
            )
        if self.metrics is None:
            object.__setattr__(self, "metrics", default_metrics(self.scheme))
        if self.source == "hyperplane":
            preset(self.preset)

    @property
    def task(self):
        return "regression" if isinstance(self.scheme, Regression) else "classification"

    @property
    def layout_chunks(self):
        """Chunks before the private stream starts (public data plus time buffer)."""
        if self.transfer is not None:
            return self.transfer.public_chunks + self.transfer.buffer_chunks
        return self.skip_chunks


def default_metrics(scheme):
    if isinstance(scheme, Regression):
        return ("one_minus_mse",)
    if isinstance(scheme, FocusedClassification):
        return ("balanced_accuracy", "accuracy")
    return ("accuracy",)


# -- metrics -------------------------------------------------------------------

def metric_accuracy(predictions, labels):
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    return float(np.mean(predictions == labels))


def metric_balanced_accuracy(predictions, labels, a1, a2=None):
    """``a1 * TPR + a2 * TNR`` with class 1 positive; rates use the true class counts."""
    a2 = 1.0 - a1 if a2 is None else a2
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    pos, neg = labels == 1, labels != 1
    if not pos.any() or not neg.any():
        raise UndefinedMetricError("balanced accuracy needs both classes in the evaluation labels")
    tpr = np.mean(predictions[pos] == 1)
    tnr = np.mean(predictions[neg] != 1)
    return float(a1 * tpr + a2 * tnr)


def metric_one_minus_mse(predictions, targets):
    predictions, targets = np.asarray(predictions, dtype=float), np.asarray(targets, dtype=float)
    return float(1.0 - np.mean((targets - predictions) ** 2))


def _evaluate(config, predict, subset):
    rows = []
    X, y = subset
    out = predict(X)
    for name in config.metrics:
        if name == "accuracy":
            value = metric_accuracy(out, y)
        elif name == "balanced_accuracy":
            a1 = getattr(config.scheme, "a1", 0.5)
            try:
                value = metric_balanced_accuracy(out, y, a1)
            except UndefinedMetricError:
                value = math.nan
        elif name == "one_minus_mse":
            value = metric_one_minus_mse(out, y)
        else:
            raise ConfigurationError(f"unknown metric {name!r}")
        rows.append((name, value))
    return rows


# -- stream preparation ----------------------------------------------------------

def _prepare_stream(config, data_seed):
    if config.source == "hyperplane":
        chunks = generate_hyperplane_stream(
            preset(config.preset), config.n_chunks, config.chunk_size, derive_seed(data_seed, "stream")
        )
        kinds = ["continuous"] * chunks[0].X.shape[1] if chunks else []
    else:
        chunks = ingest_csv(config.csv_path, config.csv_schema)
        kinds = config.csv_schema.kinds
    chunks = [split_chunk(c, DEFAULT_RATIOS, derive_rng(data_seed, "split", c.time_index)) for c in chunks]

    n_layout = config.layout_chunks
    public = chunks[:config.transfer.public_chunks] if config.transfer is not None else []
    private = chunks[n_layout:]
    if len(private) < config.k + 1:
        raise ConfigurationError(
            f"private stream has {len(private)} chunks; need at least k + 1 = {config.k + 1} for one prediction"
        )
    if public:
        fit_X = np.concatenate([c.X for c in public])
    else:
        fit_X = private[0].train.X
    prep = Preprocessor(kinds).fit(fit_X)
    public = [c.with_features(prep.transform(c.X)) for c in public]
    private = [c.with_features(prep.transform(c.X)) for c in private]
    return public, private


def _learner(config, public, data_seed):
    if isinstance(config.scheme, Regression):
        kind, n_outputs = "regressor", 1
    else:
        kind, n_outputs = "classifier", config.scheme.n_classes
    use_transfer = config.transfer is not None and config.method not in (Method.EP, Method.E)
    if not use_transfer:
        return DPLearner(dataclasses.replace(config.learner, freeze_prefix=0), kind, n_outputs)
    X = np.concatenate([c.X for c in public])
    y = np.concatenate([c.y for c in public])
    base_spec = dataclasses.replace(config.learner, freeze_prefix=0)
    pretrained = pretrain_public((X, y), base_spec, derive_rng(data_seed, "pretrain"), public=True,
                                 kind=kind, n_outputs=n_outputs)
    return TransferLearner(pretrained, dataclasses.replace(config.learner, freeze_prefix=config.transfer.freeze_prefix))


# -- methods -------------------------------------------------------------------

@dataclass
class RunResult:
    rows: list = field(default_factory=list)
    ledger_audit: dict = field(default_factory=dict)
    guarantees: list = field(default_factory=list)


def _predictor(model_or_ensemble):
    def predict(X):
        if isinstance(model_or_ensemble, ens.Ensemble):
            return model_or_ensemble.predict(X)
        out = model_or_ensemble.predict(X)
        return np.argmax(out, axis=1) if model_or_ensemble.is_classifier else out
    return predict


def _union(chunks):
    return np.concatenate([c.train.X for c in chunks]), np.concatenate([c.train.y for c in chunks])


def run_method(config, seed, run_id=0):
    """One run of ``config.method``; returns metric rows and the ledger audit."""
    data_seed = config.stream_seed if config.stream_seed is not None else seed
    public, private = _prepare_stream(config, data_seed)
    learner = _learner(config, public, data_seed)
    epsilon = config.epsilon if config.method.private else math.inf
    ledger = BudgetLedger(config.k, config.update_mode)
    result = RunResult()
    method = config.method.value

    def emit(model, chunk):
        for metric, value in _evaluate(config, _predictor(model), chunk.test):
            result.rows.append((method, run_id, chunk.time_index, metric, value))

    def fit_rng(t):
        return derive_rng(data_seed, "fit", t)

    def noise_rng(t):
        return derive_rng(seed, "noise", t)

    k = config.k
    if config.method.is_ensemble:
        params = calibrate(epsilon, config.delta, k, config.update_mode)
        current = ens.bootstrap(private[:k], config.scheme, params, learner, ledger,
                                fit_rng(private[k - 1].time_index), noise_rng(private[k - 1].time_index))
        for chunk in private[k:]:
            emit(current, chunk)
            current = ens.update(current, chunk.train, chunk.val, config.scheme, params, learner, ledger,
                                 fit_rng(chunk.time_index), noise_rng(chunk.time_index))
            result.guarantees.append(history_guarantee(ledger, params))
    elif config.method is Method.PT1:
        for prev, chunk in zip(private[k - 1:], private[k:]):
            ledger.record_training(prev.time_index)
            model = learner.fit(prev.train, epsilon, config.delta, fit_rng(prev.time_index),
                                noise_rng=noise_rng(prev.time_index))
            emit(model, chunk)
    else:
        # non-overlapping windows: train on k chunks, predict the next k (truncated at the tail)
        start = 0
        while start + k < len(private):
            window = private[start:start + k]
            for c in window:
                ledger.record_training(c.time_index)
            t_last = window[-1].time_index
            model = learner.fit(_union(window), epsilon, config.delta, fit_rng(t_last), noise_rng=noise_rng(t_last))
            for chunk in private[start + k:start + 2 * k]:
                emit(model, chunk)
            start += k

    try:
        ledger.audit()
    except BudgetViolationError:
        log.error("ledger audit failed for %s run %s", method, run_id)
        raise
    result.ledger_audit = {"k": ledger.k, "mode": ledger.mode.value, "chunks": ledger.to_records()}
    return result


# -- repetition and aggregation ----------------------------------------------------

def _run_one(args):
    config, r = args
    return run_method(config, config.seed + r, run_id=r)


def run_repeated(config, n_jobs=1):
    """``config.n_runs`` runs with seeds ``seed + r``; returns (rows, audits, summary)."""
    tasks = [(config, r) for r in range(config.n_runs)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    rows = [row for res in results for row in res.rows]
    audits = {f"{config.method.value}/run{r}": res.ledger_audit for r, res in enumerate(results)}
    return rows, audits, summarize(rows)


def summarize(rows):
    """Mean and standard error (sample sd / sqrt(n)) per (method, time, metric).

    Missing values (NaN) are excluded and counted in ``n_missing``.
    """
    groups = {}
    for method, _, time, metric, value in rows:
        groups.setdefault((method, time, metric), []).append(value)
    summary = []
    for (method, time, metric), values in groups.items():
        vals = np.array([v for v in values if not math.isnan(v)], dtype=np.float64)
        n = len(vals)
        mean = float(vals.mean()) if n else math.nan
        stderr = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else (0.0 if n == 1 else math.nan)
        summary.append({"method": method, "time": time, "metric": metric, "mean": mean, "stderr": stderr,
                        "n_missing": len(values) - n})
    return summary


# -- config files ----------------------------------------------------------------

CONFIG_KEYS = {
    "method", "source", "preset", "n_chunks", "chunk_size",
    "csv_path", "csv_features", "csv_label", "csv_time", "csv_classes", "task", "target_min", "target_max",
    "scheme", "class_priors", "a1", "p", "min_val_size", "mu",
    "k", "epsilon", "delta", "update_mode",
    "hidden_layers", "clip_norm", "epochs", "minibatch_size", "learning_rate",
    "public_chunks", "buffer_chunks", "freeze_prefix",
    "n_runs", "seed", "stream_seed", "metrics",
}


def parse_config_text(text):
    """Parse ``key = value`` lines (``#`` comments) into a dict of strings."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigurationError(f"config line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigurationError(f"config line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _epsilon(text):
    return math.inf if text.strip().lower() in ("inf", "infinity") else float(text)


def configs_from_dict(values, base_dir="."):
    """Build one :class:`ExperimentConfig` per listed method.

    Transfer settings apply to EPT, ET, PT1 and PTk; E and EP in the same
    file skip the public and buffer chunks so every method predicts the same
    stream times.
    """
    v = dict(values)
    try:
        scheme_name = v.get("scheme", "general").lower()
        if scheme_name == "general":
            scheme = GeneralClassification(_floats(v.get("class_priors", "0.5,0.5")))
        elif scheme_name == "focused":
            scheme = FocusedClassification(a1=float(v.get("a1", 0.7)), p=float(v.get("p", 0.3)),
                                           min_val_size=int(v.get("min_val_size", 1)))
        elif scheme_name == "regression":
            scheme = Regression(float(v.get("mu", 1e-5)))
        else:
            raise ConfigurationError(f"unknown scheme {scheme_name!r}")

        hidden = v.get("hidden_layers", "20,10").strip()
        learner = LearnerSpec(
            hidden_layers=_ints(hidden) if hidden and hidden.lower() != "none" else (),
            clip_norm=float(v.get("clip_norm", 1.0)),
            epochs=int(v.get("epochs", 30)),
            minibatch_size=int(v.get("minibatch_size", 100)),
            learning_rate=float(v.get("learning_rate", 0.1)),
        )

        transfer = None
        if "public_chunks" in v or "freeze_prefix" in v:
            transfer = TransferConfig(int(v.get("public_chunks", 1)), int(v.get("buffer_chunks", 0)),
                                      int(v.get("freeze_prefix", 1)))

        schema, csv_path = None, None
        source = v.get("source", "hyperplane")
        if source == "csv":
            if "csv_path" not in v:
                raise ConfigurationError("csv source needs csv_path")
            csv_path = v["csv_path"] if os.path.isabs(v["csv_path"]) else os.path.join(base_dir, v["csv_path"])
            features = []
            for item in v.get("csv_features", "").split(","):
                if item.strip():
                    name, _, kind = item.partition(":")
                    features.append((name.strip(), (kind or "continuous").strip()))
            classes = tuple(c.strip() for c in v["csv_classes"].split(",")) if "csv_classes" in v else None
            schema = CsvSchema(
                tuple(features), v.get("csv_label", "label"), v.get("csv_time", "time"),
                task="regression" if isinstance(scheme, Regression) else "classification",
                target_bounds=(float(v.get("target_min", 0.0)), float(v.get("target_max", 1.0))),
                classes=classes,
            )
        metrics = tuple(m.strip() for m in v["metrics"].split(",")) if "metrics" in v else None

        common = dict(
            source=source,
            preset=v.get("preset", "rapid"),
            n_chunks=int(v.get("n_chunks", 20)),
            chunk_size=int(v.get("chunk_size", 1000)),
            csv_path=csv_path,
            csv_schema=schema,
            scheme=scheme,
            k=int(v.get("k", 5)),
            epsilon=_epsilon(v.get("epsilon", "1.0")),
            delta=float(v.get("delta", 1e-4)),
            update_mode=v.get("update_mode", "oldest"),
            learner=learner,
            n_runs=int(v.get("n_runs", 10)),
            seed=int(v.get("seed", 0)),
            stream_seed=int(v["stream_seed"]) if "stream_seed" in v else None,
            metrics=metrics,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"bad config value: {exc}") from None

    configs = []
    for name in v.get("method", "EP").split(","):
        method = Method.parse(name)
        if method in (Method.EP, Method.E):
            skip = transfer.public_chunks + transfer.buffer_chunks if transfer else 0
            configs.append(ExperimentConfig(method=method, transfer=None, skip_chunks=skip, **common))
        else:
            configs.append(ExperimentConfig(method=method, transfer=transfer, **common))
    return configs


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return configs_from_dict(parse_config_text(fh.read()), base_dir=os.path.dirname(os.path.abspath(path)))


def config_echo(config):
    """Resolved configuration as ``key = value`` lines, stable across runs."""
    doc = dataclasses.asdict(config)
    doc["method"] = config.method.value
    doc["update_mode"] = config.update_mode.value
    doc["scheme"] = {"type": type(config.scheme).__name__, **dataclasses.asdict(config.scheme)}
    lines = []
    for key in sorted(doc):
        lines.append(f"{key} = {json.dumps(doc[key], sort_keys=True, default=str)}")
    return "\n".join(lines) + "\n"


# -- output ------------------------------------------------------------------------

RESULT_COLUMNS = ["method", "run", "time", "metric", "value"]
SUMMARY_COLUMNS = ["method", "time", "metric", "mean", "stderr"]


def _fmt(value):
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


def emit_results(rows, summary, audits, configs, out_dir):
    """Write results.csv, summary.csv, ledger_audit.json and config_echo.conf."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        paths = {name: os.path.join(out_dir, name)
                 for name in ("results.csv", "summary.csv", "ledger_audit.json", "config_echo.conf")}
        with open(paths["results.csv"], "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(RESULT_COLUMNS)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
        with open(paths["summary.csv"], "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(SUMMARY_COLUMNS)
            for rec in summary:
                writer.writerow([_fmt(rec[c]) for c in SUMMARY_COLUMNS])
        with open(paths["ledger_audit.json"], "w", encoding="utf-8") as fh:
            json.dump(audits, fh, indent=2, sort_keys=True)
        with open(paths["config_echo.conf"], "w", encoding="utf-8") as fh:
            fh.write("\n".join(f"[{c.method.value}]\n{config_echo(c)}" for c in configs))
    except OSError as exc:
        raise OSError(f"cannot write results to {exc.filename or out_dir}: {exc.strerror}") from exc
    return paths


def read_results(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != RESULT_COLUMNS:
            raise ConfigurationError(f"{path}: unexpected header {header}")
        return [(m, int(r), int(t), metric, float(v)) for m, r, t, metric, v in reader]


def run_experiment(configs, out_dir=None, n_jobs=1):
    """Run every config, optionally writing the result files; returns (rows, summary, audits)."""
    rows, audits = [], {}
    for config in configs:
        log.info("running %s (eps=%s, k=%d, %d runs)", config.method.value, config.epsilon, config.k, config.n_runs)
        r, a, _ = run_repeated(config, n_jobs=n_jobs)
        rows.extend(r)
        audits.update(a)
    summary = summarize(rows)
    if out_dir is not None:
        emit_results(rows, summary, audits, configs, out_dir)
    return rows, summary, audits


def report(result_dirs):
    """Long-format summary rows keyed by epsilon, k and method across result directories."""
    table = []
    for d in result_dirs:
        settings = _read_echo(os.path.join(d, "config_echo.conf"))
        rows = read_results(os.path.join(d, "results.csv"))
        for rec in summarize(rows):
            cfg = settings.get(rec["method"], {})
            table.append({"epsilon": cfg.get("epsilon"), "k": cfg.get("k"), **rec})
    return table


def _read_echo(path):
    settings, current = {}, None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("[") and line.endswith("]"):
                current = settings.setdefault(line[1:-1], {})
            elif "=" in line and current is not None:
                key, value = (s.strip() for s in line.split("=", 1))
                if key in ("epsilon", "k", "delta", "update_mode"):
                    current[key] = json.loads(value) if value != "Infinity" else math.inf
    return settings
