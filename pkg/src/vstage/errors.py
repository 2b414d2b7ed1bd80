"""Exception types shared across the package."""

from __future__ import annotations


class VstageError(Exception):
    """Base class for errors raised by this package."""


class SampleRateMismatchError(VstageError, ValueError):
    """Two signals that must share a sample rate do not."""


class BlockSizeError(VstageError, ValueError):
    """A streaming call received a block of the wrong length."""


class InfeasibleShiftError(VstageError, ValueError):
    """A time advance would discard signal energy above the allowed floor.

    Carries the measured loss so callers can report how far the request
    missed the budget.
    """

    def __init__(self, message: str, *, loss_db: float | None = None,
                 shift_seconds: float | None = None):
        super().__init__(message)
        self.loss_db = loss_db
        self.shift_seconds = shift_seconds


class EmptyBandError(VstageError, ValueError):
    """A frequency band selection matched no partials."""


class ReferenceNullError(VstageError, ValueError):
    """The reference direction of a directivity pattern radiates nothing."""


class InsufficientDecayError(VstageError, ValueError):
    """An impulse response does not decay far enough for the requested fit."""


class InvalidMeasurementError(VstageError, RuntimeError):
    """A measurement produced no usable result (e.g. correlation peak in noise)."""


class ManifestError(VstageError, ValueError):
    """A manifest or session document failed validation."""


class InfeasibleLatencyError(VstageError, ValueError):
    """The interface latency exceeds what the stage geometry can absorb.

    Carries the per-player feasibility reports so callers can show which
    path fails and by how much.
    """

    def __init__(self, message: str, *, reports: dict | None = None):
        super().__init__(message)
        self.reports = reports or {}
