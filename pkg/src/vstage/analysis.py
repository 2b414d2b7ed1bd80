"""Objective room-response inspection: envelopes and stage descriptors.

Three views of an impulse response answer "does this scenario sound
plausible" without listening: the band-limited Hilbert envelope shows
where reflections sit in time, reverberation time summarizes the decay,
and stage support ratios (early and late reflected energy against the
direct 10 ms) quantify what a performer gets back from the room.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, hilbert, sosfilt, sosfiltfilt

from .errors import InsufficientDecayError
from .signals import ImpulseResponse, SampledSignal

DEFAULT_ENVELOPE_BAND_HZ = (353.0, 2828.0)
STAGE_BAND_CENTERS_HZ = (250.0, 500.0, 1000.0, 2000.0)
ENERGY_FLOOR_DB = -99.0
ONSET_THRESHOLD_DB = -20.0

# ISO-style stage support windows, seconds relative to the direct sound.
DIRECT_WINDOW = (0.0, 0.010)
EARLY_WINDOW = (0.020, 0.100)
LATE_WINDOW = (0.100, 1.000)


def _as_signal(h) -> SampledSignal:
    return h.data if isinstance(h, ImpulseResponse) else h


def _band_sos(f_lo: float, f_hi: float, rate: float, order: int = 3):
    nyquist = rate / 2.0
    if not 0.0 < f_lo < f_hi < nyquist:
        raise ValueError(
            f"band ({f_lo:g}, {f_hi:g}) Hz must sit inside (0, {nyquist:g})")
    return butter(order, [f_lo / nyquist, f_hi / nyquist],
                  btype="bandpass", output="sos")


def octave_band_sos(center_hz: float, rate: float, order: int = 3):
    """Third-order Butterworth octave band around ``center_hz``."""
    half = 2.0 ** 0.5
    return _band_sos(center_hz / half, center_hz * half, rate, order)


@dataclass
class EnvelopeResult:
    time: np.ndarray
    envelope: np.ndarray          # (n_samples, n_channels), linear
    band_hz: tuple[float, float]
    sample_rate: float

    def envelope_db(self, floor_db: float = -120.0) -> np.ndarray:
        floor = 10.0 ** (floor_db / 20.0)
        return 20.0 * np.log10(np.maximum(self.envelope, floor))


def hilbert_envelope(h, band_hz: tuple[float, float] = DEFAULT_ENVELOPE_BAND_HZ,
                     ) -> EnvelopeResult:
    """Band-limit a response and take the analytic-signal magnitude.

    The band-pass runs forward and backward so envelope features stay
    at their true times instead of picking up the filter's group delay.
    """
    sig = _as_signal(h)
    sos = _band_sos(band_hz[0], band_hz[1], sig.sample_rate)
    cols = []
    for ch in range(sig.n_channels):
        filtered = sosfiltfilt(sos, sig.channel(ch))
        cols.append(np.abs(hilbert(filtered)))
    env = np.stack(cols, axis=1)
    t = np.arange(sig.n_samples) / sig.sample_rate
    return EnvelopeResult(time=t, envelope=env,
                          band_hz=(float(band_hz[0]), float(band_hz[1])),
                          sample_rate=sig.sample_rate)


def direct_sound_onset(x: np.ndarray,
                       threshold_db: float = ONSET_THRESHOLD_DB) -> int:
    """Index of the first sample within ``threshold_db`` of the peak."""
    a = np.abs(np.asarray(x, dtype=np.float64))
    peak = float(np.max(a))
    if peak == 0.0:
        raise ValueError("silent response has no direct sound")
    return int(np.argmax(a >= peak * 10.0 ** (threshold_db / 20.0)))


def _window_energy(x: np.ndarray, rate: float, onset: int,
                   window: tuple[float, float]) -> float:
    lo = onset + int(round(window[0] * rate))
    hi = onset + int(round(window[1] * rate))
    return float(np.sum(x[lo:hi] ** 2))


def _ratio_db(numerator: float, denominator: float) -> tuple[float, bool]:
    if denominator <= 0.0:
        raise ValueError("no direct sound energy in the reference window")
    ratio = numerator / denominator
    floor = 10.0 ** (ENERGY_FLOOR_DB / 10.0)
    if ratio <= floor:
        return ENERGY_FLOOR_DB, True
    return 10.0 * np.log10(ratio), False


@dataclass
class StageMetrics:
    band_centers_hz: tuple[float, ...]
    st_early_db: float
    st_late_db: float
    st_early_per_band: dict[float, float]
    st_late_per_band: dict[float, float]
    onset_sample: int
    floor_flagged: bool
    rt_per_band: dict[float, float | None] | None = None


def stage_support(h, *, band_centers_hz: tuple[float, ...] = STAGE_BAND_CENTERS_HZ,
                  channel: int = 0, compute_rt: bool = False) -> StageMetrics:
    """Early and late stage support of a response taken at 1 m.

    ST_early compares the 20-100 ms reflected energy with the direct
    0-10 ms; ST_late uses 100-1000 ms. Energies come from causally
    octave-filtered copies so no reflection leaks backward across a
    window edge, and the reported values average the per-band figures
    in dB. A ratio below the floor is clamped to it and flagged rather
    than reported as -inf.
    """
    sig = _as_signal(h)
    rate = sig.sample_rate
    x = sig.channel(channel)
    onset = direct_sound_onset(x)
    if onset + int(LATE_WINDOW[1] * rate) > sig.n_samples:
        raise ValueError(
            "response too short: stage support integrates reflections out "
            f"to {LATE_WINDOW[1] * 1000:.0f} ms after the direct sound")

    early = {}
    late = {}
    flagged = False
    rt: dict[float, float | None] = {}
    for center in band_centers_hz:
        sos = octave_band_sos(center, rate)
        banded = sosfilt(sos, x)
        e_direct = _window_energy(banded, rate, onset, DIRECT_WINDOW)
        e_early = _window_energy(banded, rate, onset, EARLY_WINDOW)
        e_late = _window_energy(banded, rate, onset, LATE_WINDOW)
        early[center], f1 = _ratio_db(e_early, e_direct)
        late[center], f2 = _ratio_db(e_late, e_direct)
        flagged = flagged or f1 or f2
        if compute_rt:
            try:
                rt[center] = reverberation_time(
                    SampledSignal(x, rate),
                    band_hz=(center / 2.0 ** 0.5, center * 2.0 ** 0.5))
            except InsufficientDecayError:
                rt[center] = None

    return StageMetrics(
        band_centers_hz=tuple(float(c) for c in band_centers_hz),
        st_early_db=float(np.mean(list(early.values()))),
        st_late_db=float(np.mean(list(late.values()))),
        st_early_per_band=early,
        st_late_per_band=late,
        onset_sample=onset,
        floor_flagged=flagged,
        rt_per_band=rt if compute_rt else None,
    )


def reverberation_time(h, band_hz: tuple[float, float] | None = None, *,
                       channel: int = 0,
                       fit_range_db: tuple[float, float] = (-5.0, -25.0),
                       required_range_db: float = 35.0) -> float:
    """T20-style reverberation time from backward-integrated decay.

    The squared (optionally band-limited) response is integrated from
    the tail toward the front; a line fitted between the fit-range
    levels is extrapolated to the 60 dB decay. The curve must actually
    reach ``required_range_db`` below its start, otherwise the estimate
    would lean on noise and an InsufficientDecayError is raised instead.
    The last tenth of the curve does not count toward that range: a
    backward integration always plunges right at its end, decay or not.
    """
    sig = _as_signal(h)
    rate = sig.sample_rate
    x = sig.channel(channel)
    if band_hz is not None:
        x = sosfilt(_band_sos(band_hz[0], band_hz[1], rate), x)
    energy = x ** 2
    total = float(np.sum(energy))
    if total <= 0.0:
        raise InsufficientDecayError("response is silent")
    schroeder = np.cumsum(energy[::-1])[::-1] / total
    with np.errstate(divide="ignore"):
        curve = 10.0 * np.log10(schroeder)

    hi_db, lo_db = fit_range_db
    trusted = curve[:max(int(0.9 * curve.size), 2)]
    if not np.any(trusted <= -required_range_db):
        raise InsufficientDecayError(
            f"decay reaches only {float(np.min(trusted)):.1f} dB; a "
            f"{hi_db:g} to {lo_db:g} dB fit needs {required_range_db:g} dB "
            "of range above the noise")
    t_hi = int(np.argmax(curve <= hi_db))
    t_lo = int(np.argmax(curve <= lo_db))
    if t_lo <= t_hi + 1:
        raise InsufficientDecayError("decay too abrupt to fit a slope")
    t = np.arange(t_hi, t_lo) / rate
    slope, _ = np.polyfit(t, curve[t_hi:t_lo], 1)
    if slope >= 0.0:
        raise InsufficientDecayError("no decaying trend in the fit range")
    return float(-60.0 / slope)
