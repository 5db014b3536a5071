"""quatvio: quaternion error-state visual-inertial estimation toolkit.

A loosely coupled IMU + visual odometry estimator built around an
error-state Kalman filter, with an optional sigma-point refinement of the
orientation uncertainty and an adaptive measurement covariance driven by
visual quality metrics. Includes a closed-form simulator, dataset-style
CSV loaders, evaluation metrics, and a CLI harness.
"""

__version__ = "0.1.0"

from .dynamics import ImuNoiseModel, ImuSample, NominalState
from .errors import (
    ConfigError,
    DataError,
    DegenerateAlignmentError,
    DivergenceError,
    EmptyAssociationError,
    EmptySequenceError,
    InsufficientDataError,
    InvalidInputError,
    InvalidStepError,
    NumericalError,
    ParseError,
    QuatvioError,
)
from .filtering import FilterMode, FilterState, MeasurementNoise, SutParams
from .adaptive import AdaptiveParams, GrayscaleFrame, QualityMetrics
from .evaluation import ErrorReport, TrajectorySample
from .io import SequenceBundle, VisualMeasurement
from .pipeline import PipelineResult, RunConfig, compare_modes, run_pipeline, sweep
from .simulate import CorruptionEpisode, ScenarioSpec, simulate

__all__ = [
    "__version__",
    "AdaptiveParams",
    "ConfigError",
    "CorruptionEpisode",
    "DataError",
    "DegenerateAlignmentError",
    "DivergenceError",
    "EmptyAssociationError",
    "EmptySequenceError",
    "ErrorReport",
    "FilterMode",
    "FilterState",
    "GrayscaleFrame",
    "ImuNoiseModel",
    "ImuSample",
    "InsufficientDataError",
    "InvalidInputError",
    "InvalidStepError",
    "MeasurementNoise",
    "NominalState",
    "NumericalError",
    "ParseError",
    "PipelineResult",
    "QualityMetrics",
    "QuatvioError",
    "RunConfig",
    "ScenarioSpec",
    "SequenceBundle",
    "SutParams",
    "TrajectorySample",
    "VisualMeasurement",
    "compare_modes",
    "run_pipeline",
    "simulate",
    "sweep",
]
