"""Differentially private temporal ensembles for drifting data streams."""
from .ensemble import Ensemble, EnsembleMember, bootstrap, update
from .errors import (
    BudgetViolationError,
    ConfigurationError,
    DPStreamError,
    InvalidInputError,
    InvalidParameterError,
    SchemaError,
    TypeMismatchError,
    UndefinedMetricError,
)
from .harness import ExperimentConfig, Method, TransferConfig, load_config, run_experiment, run_method
from .learners import DPLearner, LearnerSpec, TrainedModel, TransferLearner
from .privacy import BudgetLedger, PrivacyParams, UpdateMode, calibrate, history_guarantee
from .streams import DataChunk, HyperplaneParams, generate_hyperplane_stream, ingest_csv, preset, split_chunk
from .weights import FocusedClassification, GeneralClassification, Regression, noisy_weight

__version__ = "0.1.0"
