"""Round-trip latency measurement through a loopback path.

The interface latency of the playback/capture chain sets how much head
start the adapted responses can spend, so it has to be measured, not
guessed. The excitation is a logarithmic sweep; the round-trip delay is
the cross-correlation peak between what was sent and what came back,
minus whatever processing delay the caller already accounts for.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy.signal import correlate

from .calibration import SPEED_OF_SOUND
from .errors import InvalidMeasurementError
from .signals import SampledSignal

PEAK_TO_NOISE_FLOOR_DB = 20.0


def exponential_sweep(f_start: float, f_end: float, duration: float,
                      sample_rate: float, *, amplitude: float = 0.5,
                      fade_seconds: float = 0.005) -> SampledSignal:
    """Logarithmic sine sweep from f_start to f_end over duration seconds.

    Instantaneous frequency grows exponentially, which puts equal energy
    into every octave. Short raised-cosine fades keep the edges from
    clicking through the loopback.
    """
    if not 0.0 < f_start < f_end:
        raise ValueError("sweep needs 0 < f_start < f_end")
    if f_end >= sample_rate / 2.0:
        raise ValueError(
            f"sweep top {f_end:g} Hz must stay below Nyquist "
            f"({sample_rate / 2.0:g} Hz)")
    if duration <= 0.0:
        raise ValueError("sweep duration must be positive")
    if not 0.0 < amplitude <= 1.0:
        raise ValueError("sweep amplitude must be in (0, 1]")
    n = int(round(duration * sample_rate))
    n_fade = int(round(fade_seconds * sample_rate))
    if 2 * n_fade >= n:
        raise ValueError("fades longer than the sweep itself")

    t = np.arange(n) / sample_rate
    stretch = duration / np.log(f_end / f_start)
    phase = 2.0 * np.pi * f_start * stretch * np.expm1(t / stretch)
    x = amplitude * np.sin(phase)
    if n_fade:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(n_fade) / n_fade)
        x[:n_fade] *= ramp
        x[-n_fade:] *= ramp[::-1]
    return SampledSignal(x, sample_rate)


def find_delay(reference: np.ndarray, captured: np.ndarray, *,
               min_peak_to_noise_db: float = PEAK_TO_NOISE_FLOOR_DB,
               ) -> tuple[int, float]:
    """Delay of ``captured`` relative to ``reference`` in samples.

    Returns the lag of the cross-correlation peak together with how far
    that peak stands above the correlation noise (median magnitude away
    from the peak). A peak that does not clear ``min_peak_to_noise_db``
    means the excitation never made it back, so no lag is returned.
    """
    ref = np.asarray(reference, dtype=np.float64).reshape(-1)
    cap = np.asarray(captured, dtype=np.float64).reshape(-1)
    corr = correlate(cap, ref, mode="full")
    mag = np.abs(corr)
    peak_at = int(np.argmax(mag))
    peak = float(mag[peak_at])

    # Judge the noise only at lags where the two signals overlap fully;
    # the taper of partial overlaps toward the ends would otherwise drag
    # the median down and flatter the peak.
    guard = max(ref.size // 10, 64)
    mask = np.zeros(mag.size, dtype=bool)
    mask[min(ref.size, cap.size) - 1:max(ref.size, cap.size)] = True
    mask[max(peak_at - guard, 0):peak_at + guard] = False
    if not np.any(mask):
        mask = np.ones(mag.size, dtype=bool)
        mask[max(peak_at - guard, 0):peak_at + guard] = False
    noise = float(np.median(mag[mask])) if np.any(mask) else 0.0

    if peak <= 0.0:
        raise InvalidMeasurementError("captured signal is silent")
    quality = np.inf if noise == 0.0 else 20.0 * np.log10(peak / noise)
    if quality < min_peak_to_noise_db:
        raise InvalidMeasurementError(
            f"correlation peak only {quality:.1f} dB above the noise; a "
            f"valid measurement needs {min_peak_to_noise_db:g} dB")
    return peak_at - (ref.size - 1), float(quality)


@dataclass(frozen=True)
class LatencyMeasurement:
    latency_seconds: float
    latency_samples: int
    buffer_samples: int | None
    equivalent_distance_m: float
    peak_to_noise_db: float
    sample_rate: float

    def as_dict(self) -> dict:
        return asdict(self)


def measure_round_trip(emit: Callable[[np.ndarray], np.ndarray],
                       sample_rate: float, *,
                       f_start: float = 100.0,
                       f_end: float | None = None,
                       duration: float = 1.0,
                       amplitude: float = 0.5,
                       processing_delay_samples: int = 0,
                       buffer_samples: int | None = None,
                       speed_of_sound: float = SPEED_OF_SOUND,
                       ) -> LatencyMeasurement:
    """Measure loopback latency by playing a sweep through ``emit``.

    ``emit`` takes the excitation as a 1-D array and returns whatever the
    capture side recorded, at the same rate. Any delay the caller knows
    about (e.g. an intentional processing offset) goes in
    ``processing_delay_samples`` and is subtracted from the raw lag. The
    equivalent distance converts the result into the acoustic detour the
    chain imposes.
    """
    if f_end is None:
        f_end = min(16000.0, 0.45 * sample_rate)
    sweep = exponential_sweep(f_start, f_end, duration, sample_rate,
                              amplitude=amplitude)
    excitation = sweep.channel(0)
    captured = np.asarray(emit(excitation), dtype=np.float64).reshape(-1)
    lag, quality = find_delay(excitation, captured)
    latency_samples = lag - int(processing_delay_samples)
    latency_seconds = latency_samples / sample_rate
    return LatencyMeasurement(
        latency_seconds=float(latency_seconds),
        latency_samples=int(latency_samples),
        buffer_samples=buffer_samples,
        equivalent_distance_m=float(speed_of_sound * latency_seconds),
        peak_to_noise_db=float(quality),
        sample_rate=float(sample_rate),
    )
