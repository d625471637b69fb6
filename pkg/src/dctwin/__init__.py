"""Self-calibrating digital twin of a datacenter cluster.

The twin replays a recorded workload through a discrete-event model of the
cluster, predicts power draw window by window, scores those predictions
against observed telemetry, and re-fits the power curve exponent from
trailing history while the next window is already running. Persistent
artifacts live in a workspace directory; an HTTP API and a small CLI sit on
top of it.
"""

from .calibrator import (
    AllCandidatesFailed,
    CalibrationSkipped,
    DegenerateHistory,
    InsufficientHistory,
    NoOverlap,
    calibrate,
    default_grid,
    estimation_bias,
    mape,
    threshold_compliance,
)
from .model import (
    Acceleration,
    CalibrationResult,
    ConfigError,
    DCTwinError,
    DomainError,
    Fragment,
    HostSpec,
    InvalidTopology,
    InvalidWorkload,
    PowerModelParams,
    Recommendation,
    RecommendationKind,
    RecommendationStatus,
    RunMetadata,
    SampleSource,
    TelemetrySample,
    Topology,
    Window,
    WindowReport,
    WorkloadTask,
)
from .orchestrator import (
    AccuracyTarget,
    CalibrationSettings,
    RecommendationSettings,
    TwinConfig,
    load_config,
    run_loop,
    run_to_completion,
)
from .power import energy_kwh, host_power, hourly_efficiency, predict_cluster_power
from .simengine import SimConfig, SimState, cluster_tflops, simulate_window
from .workspace import Workspace

__version__ = "0.1.0"

__all__ = [
    "Acceleration",
    "AccuracyTarget",
    "AllCandidatesFailed",
    "CalibrationResult",
    "CalibrationSettings",
    "CalibrationSkipped",
    "ConfigError",
    "DCTwinError",
    "DegenerateHistory",
    "DomainError",
    "Fragment",
    "HostSpec",
    "InsufficientHistory",
    "InvalidTopology",
    "InvalidWorkload",
    "NoOverlap",
    "PowerModelParams",
    "Recommendation",
    "RecommendationKind",
    "RecommendationSettings",
    "RecommendationStatus",
    "RunMetadata",
    "SampleSource",
    "SimConfig",
    "SimState",
    "TelemetrySample",
    "Topology",
    "TwinConfig",
    "Window",
    "WindowReport",
    "Workspace",
    "WorkloadTask",
    "calibrate",
    "cluster_tflops",
    "default_grid",
    "energy_kwh",
    "estimation_bias",
    "host_power",
    "hourly_efficiency",
    "load_config",
    "mape",
    "predict_cluster_power",
    "run_loop",
    "run_to_completion",
    "simulate_window",
    "threshold_compliance",
    "__version__",
]
