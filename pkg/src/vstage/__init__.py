"""Calibrated low-latency auralization for virtual stage experiments."""

from .adapt import AdaptationPlan, FeasibilityReport, adapt, check_feasibility
from .engine import Engine, SimulatedDevice
from .errors import (
    BlockSizeError,
    EmptyBandError,
    InfeasibleLatencyError,
    InfeasibleShiftError,
    InsufficientDecayError,
    InvalidMeasurementError,
    ManifestError,
    ReferenceNullError,
    SampleRateMismatchError,
    VstageError,
)
from .measure import LatencyMeasurement, exponential_sweep, find_delay, measure_round_trip
from .session import SessionConfig, load_session_config
from .signals import (
    ImpulseResponse,
    IrKind,
    SampledSignal,
    convolve,
    fractional_delay,
    spectrum,
)
from .streaming import PartitionedConvolver

__version__ = "0.1.0"

__all__ = [
    "AdaptationPlan",
    "BlockSizeError",
    "EmptyBandError",
    "Engine",
    "FeasibilityReport",
    "ImpulseResponse",
    "InfeasibleLatencyError",
    "InfeasibleShiftError",
    "InsufficientDecayError",
    "InvalidMeasurementError",
    "IrKind",
    "LatencyMeasurement",
    "ManifestError",
    "PartitionedConvolver",
    "ReferenceNullError",
    "SampleRateMismatchError",
    "SampledSignal",
    "SessionConfig",
    "SimulatedDevice",
    "VstageError",
    "adapt",
    "check_feasibility",
    "convolve",
    "exponential_sweep",
    "find_delay",
    "fractional_delay",
    "load_session_config",
    "measure_round_trip",
    "spectrum",
]
