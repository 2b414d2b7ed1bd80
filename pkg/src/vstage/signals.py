"""Sampled-signal types, offline convolution, spectra, and band-limited delay.

Offline operations here are pure functions: they take immutable inputs and
return fresh objects. Sample data is float64 shaped (n_samples, n_channels)
with one or two channels; amplitudes are digital full-scale units unless a
caller says otherwise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import i0 as _bessel_i0

from .errors import InfeasibleShiftError, SampleRateMismatchError

# Windowed-sinc interpolator defaults: 64 taps per side and a Kaiser window
# sized for at least 90 dB of stopband rejection.
INTERP_TAPS_PER_SIDE = 64
INTERP_STOPBAND_DB = 90.0

# A time advance may discard leading samples whose energy stays this far
# below the total; discarding anything louder is an error.
ENERGY_LOSS_FLOOR_DB = 60.0


def _as_sample_array(data: Any) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, np.newaxis]
    if arr.ndim != 2 or arr.shape[1] not in (1, 2):
        raise ValueError(
            f"expected mono or stereo sample data, got shape {np.shape(data)}")
    if arr.shape[0] < 1:
        raise ValueError("signal must hold at least one sample")
    if not np.all(np.isfinite(arr)):
        raise ValueError("signal contains non-finite samples")
    return arr


@dataclass
class SampledSignal:
    """A finite waveform with an authoritative sample rate.

    Parameters
    ----------
    data : array_like
        Samples, either 1-D (mono) or (n_samples, n_channels) with one or
        two channels. Stored as float64.
    sample_rate : float
        Sampling frequency in Hz. Must be positive.
    """

    data: np.ndarray
    sample_rate: float

    def __post_init__(self):
        self.data = _as_sample_array(self.data)
        rate = float(self.sample_rate)
        if not (np.isfinite(rate) and rate > 0):
            raise ValueError(f"sample rate must be positive, got {self.sample_rate!r}")
        self.sample_rate = rate

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        """Length in seconds."""
        return self.n_samples / self.sample_rate

    def channel(self, index: int) -> np.ndarray:
        """One channel as a 1-D view."""
        return self.data[:, index]

    @property
    def mono(self) -> np.ndarray:
        """The single channel of a mono signal as a 1-D view."""
        if self.n_channels != 1:
            raise ValueError("signal is not mono")
        return self.data[:, 0]

    def with_data(self, data: np.ndarray) -> "SampledSignal":
        return SampledSignal(data, self.sample_rate)


class IrKind(str, enum.Enum):
    """Lifecycle stage of an impulse response."""

    RAW_SIMULATED = "raw_simulated"
    ADAPTED = "adapted"
    ANECHOIC = "anechoic"


@dataclass
class ImpulseResponse:
    """An impulse response plus the bookkeeping the render path relies on.

    ``kind`` tracks whether the response came straight out of a room
    simulation, is an anechoic/free-field measurement, or has already been
    made playback-ready. Playback-ready (``adapted``) responses must carry
    the provenance of that adaptation.
    """

    data: SampledSignal
    kind: IrKind = IrKind.RAW_SIMULATED
    direct_sound_skipped: bool = False
    source_id: Any = None
    listener_id: Any = None
    adaptation: dict | None = None

    def __post_init__(self):
        self.kind = IrKind(self.kind)
        if not isinstance(self.data, SampledSignal):
            raise TypeError("ImpulseResponse.data must be a SampledSignal")
        if self.kind is IrKind.ADAPTED and self.adaptation is None:
            raise ValueError("adapted impulse responses must record their adaptation")

    @property
    def sample_rate(self) -> float:
        return self.data.sample_rate

    @property
    def n_samples(self) -> int:
        return self.data.n_samples

    @property
    def n_channels(self) -> int:
        return self.data.n_channels

    def channel(self, index: int) -> np.ndarray:
        return self.data.channel(index)


def _taps_of(h: Any, channel: int) -> tuple[np.ndarray, float | None]:
    """Extract one channel of filter taps and, if known, their sample rate."""
    if isinstance(h, ImpulseResponse):
        return h.data.channel(channel), h.data.sample_rate
    if isinstance(h, SampledSignal):
        return h.channel(channel), h.sample_rate
    taps = np.asarray(h, dtype=np.float64)
    if taps.ndim != 1:
        raise ValueError("filter taps must be one-dimensional")
    return taps, None


def convolve(x: SampledSignal, h: Any, channel: int = 0) -> SampledSignal:
    """Full linear convolution of a signal with one impulse-response channel.

    FFT-based; the result has ``len(x) + len(h) - 1`` samples. When ``h``
    carries a sample rate it must match ``x``.
    """
    taps, h_rate = _taps_of(h, channel)
    if h_rate is not None and h_rate != x.sample_rate:
        raise SampleRateMismatchError(
            f"impulse response at {h_rate} Hz cannot filter a signal at "
            f"{x.sample_rate} Hz")
    if taps.size == 0:
        raise ValueError("empty filter")
    cols = [fftconvolve(x.channel(c), taps) for c in range(x.n_channels)]
    return SampledSignal(np.stack(cols, axis=1), x.sample_rate)


def spectrum(x: SampledSignal, n_fft: int) -> np.ndarray:
    """Complex spectrum of a signal, zero-padded to ``n_fft`` points.

    Returns a 1-D array for mono input, otherwise (n_fft, n_channels).
    """
    if n_fft < x.n_samples:
        raise ValueError(
            f"n_fft={n_fft} would truncate a {x.n_samples}-sample signal")
    spec = np.fft.fft(x.data, n=n_fft, axis=0)
    return spec[:, 0] if x.n_channels == 1 else spec


def _kaiser_beta(stopband_db: float) -> float:
    # Kaiser's empirical window design formula.
    a = float(stopband_db)
    if a > 50.0:
        return 0.1102 * (a - 8.7)
    if a >= 21.0:
        return 0.5842 * (a - 21.0) ** 0.4 + 0.07886 * (a - 21.0)
    return 0.0


def shift_kernel(fractional: float,
                 taps_per_side: int = INTERP_TAPS_PER_SIDE,
                 stopband_db: float = INTERP_STOPBAND_DB) -> np.ndarray:
    """Windowed-sinc interpolation kernel for a sub-sample shift.

    The kernel is ``2 * taps_per_side + 1`` long and centred ``fractional``
    samples late of its middle tap, with the Kaiser window centred on the
    sinc peak so a pure integer shift degenerates to a unit impulse.
    """
    half = int(taps_per_side)
    if half < 1:
        raise ValueError("taps_per_side must be at least 1")
    beta = _kaiser_beta(stopband_db)
    u = np.arange(-half, half + 1, dtype=np.float64) - fractional
    window = np.zeros_like(u)
    inside = np.abs(u) <= half
    window[inside] = _bessel_i0(
        beta * np.sqrt(1.0 - (u[inside] / half) ** 2)) / _bessel_i0(beta)
    return np.sinc(u) * window


def _shift_columns(data: np.ndarray, n: int, kernel: np.ndarray | None,
                   half: int) -> np.ndarray:
    """Shift every column by ``n`` integer samples plus the kernel fraction."""
    n_in = data.shape[0]
    if kernel is None:
        out_len = max(1, n_in + max(n, 0))
        shifted = np.zeros((out_len, data.shape[1]))
        src_start = max(0, -n)
        dst_start = max(0, n)
        count = n_in - src_start
        if count > 0:
            shifted[dst_start:dst_start + count] = data[src_start:n_in]
        return shifted

    out_len = max(1, n_in + max(n, 0) + half)
    shifted = np.zeros((out_len, data.shape[1]))
    for c in range(data.shape[1]):
        y = np.convolve(data[:, c], kernel)          # y[i] sits at time i - half + n
        start = half - n                             # y index landing at time zero
        src = y[max(start, 0):start + out_len]
        dst = max(0, -start)
        shifted[dst:dst + src.shape[0], c] = src
    return shifted


def fractional_delay(h: SampledSignal | ImpulseResponse, shift_seconds: float,
                     *, taps_per_side: int = INTERP_TAPS_PER_SIDE,
                     stopband_db: float = INTERP_STOPBAND_DB,
                     energy_loss_floor_db: float = ENERGY_LOSS_FLOOR_DB):
    """Shift a signal in time by a possibly fractional number of samples.

    Positive shifts delay, negative shifts advance. Integer shifts move
    samples exactly; fractional shifts interpolate with a Kaiser-windowed
    sinc. An advance that pushes input samples past time zero discards
    them; if their energy exceeds the configured floor relative to the
    whole signal this raises :class:`InfeasibleShiftError`. Interpolation
    ripple falling before time zero does not count as a loss, it is part
    of the kernel tolerance.
    """
    sig = h.data if isinstance(h, ImpulseResponse) else h
    shift_samples = shift_seconds * sig.sample_rate
    if shift_samples < 0:
        if -shift_samples >= sig.n_samples:
            raise InfeasibleShiftError(
                f"advance of {-shift_samples:.1f} samples would discard the "
                f"whole {sig.n_samples}-sample signal",
                shift_seconds=shift_seconds)
        # Input sample k lands at k + shift; everything rounding below
        # zero is dropped.
        n_dropped = int(np.ceil(-shift_samples - 0.5))
        if n_dropped > 0:
            total = float(np.sum(sig.data ** 2))
            lost = float(np.sum(sig.data[:n_dropped] ** 2))
            if total > 0.0 and lost / total > 10.0 ** (-energy_loss_floor_db / 10.0):
                loss_db = 10.0 * np.log10(lost / total)
                raise InfeasibleShiftError(
                    f"advance of {-shift_samples:.1f} samples discards "
                    f"{loss_db:.1f} dB of signal energy (floor is "
                    f"-{energy_loss_floor_db:.0f} dB)",
                    loss_db=loss_db, shift_seconds=shift_seconds)

    n = int(np.floor(shift_samples))
    mu = float(shift_samples - n)
    # Snap floating fuzz so nominally integer shifts stay exact.
    if mu < 1e-9:
        mu = 0.0
    elif mu > 1.0 - 1e-9:
        n += 1
        mu = 0.0
    kernel = None if mu == 0.0 else shift_kernel(mu, taps_per_side, stopband_db)

    shifted = _shift_columns(sig.data, n, kernel, taps_per_side)
    out = SampledSignal(shifted, sig.sample_rate)
    if isinstance(h, ImpulseResponse):
        return ImpulseResponse(out, kind=h.kind,
                               direct_sound_skipped=h.direct_sound_skipped,
                               source_id=h.source_id, listener_id=h.listener_id,
                               adaptation=h.adaptation)
    return out
