"""Playback-chain calibration: filter synthesis and its error analysis.

The render path picks a player up with a close microphone, convolves with a
simulated room response, and plays back over headphones. For the levels at
the listener's ears to mean anything, the chain needs one scalar-per-bin
correction that undoes the recording sensitivity and the headphone
transfer, restores the geometric spread between the microphone distance
and the simulated source distance, and optionally folds in the source's
directivity toward the microphone. That correction is synthesized here as
a linear-phase FIR.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import wavio
from .freqresponse import (
    INVERSION_BAND_HZ,
    INVERSION_CAP_DB,
    INVERSION_FLOOR_DB,
    FrequencyResponse,
    guarded_inverse,
)
from .signals import ImpulseResponse, IrKind, SampledSignal

SPEED_OF_SOUND = 343.0      # m/s, dry air around 20 degC
AIR_DENSITY = 1.2           # kg/m^3

DEFAULT_FIR_LENGTH = 4096
DEFAULT_SAMPLE_RATE = 44100.0


def free_field_pressure_squared(power_w: float, directivity_factor: float,
                                distance_m: float,
                                air_density: float = AIR_DENSITY,
                                speed_of_sound: float = SPEED_OF_SOUND) -> float:
    """Mean-square free-field pressure of a point source.

    ``rho * c * W * Q / (4 pi d^2)``; the reference relation the gain
    chain must reproduce end to end.
    """
    if power_w < 0:
        raise ValueError("source power must be non-negative")
    if directivity_factor < 0:
        raise ValueError("directivity factor must be non-negative")
    if distance_m <= 0:
        raise ValueError("distance must be positive")
    return (air_density * speed_of_sound * power_w * directivity_factor
            / (4.0 * np.pi * distance_m ** 2))


def distance_error_effect(r1: float, r2: float) -> float:
    """Linear level factor caused by misjudging two distances.

    ``r1`` is the relative error of the microphone-to-source distance
    estimate, ``r2`` the relative error of the ear-to-source distance
    estimate; the calibration gain ends up scaled by ``(1+r1)/(1+r2)``.
    """
    if r2 <= -1.0:
        raise ValueError("r2 must stay above -1 (estimated distance would vanish)")
    if r1 < -1.0:
        raise ValueError("r1 below -1 is not a physical distance error")
    return (1.0 + r1) / (1.0 + r2)


def distance_error_effect_db(r1: float, r2: float) -> float:
    """Same as :func:`distance_error_effect`, in dB."""
    return 20.0 * np.log10(distance_error_effect(r1, r2))


def distance_error_grid(r1_values, r2_values) -> np.ndarray:
    """dB level-offset surface over a grid of relative distance errors.

    Rows follow ``r2_values``, columns ``r1_values``, ready for contour
    plotting or CSV export.
    """
    r1 = np.asarray(r1_values, dtype=np.float64)
    r2 = np.asarray(r2_values, dtype=np.float64)
    if np.any(r2 <= -1.0):
        raise ValueError("r2 grid must stay above -1")
    surface = (1.0 + r1[np.newaxis, :]) / (1.0 + r2[:, np.newaxis])
    return 20.0 * np.log10(surface)


def _as_curve(value: Any, reference: str) -> FrequencyResponse | None:
    """Accept a response, a plain gain, or None."""
    if value is None:
        return None
    if isinstance(value, FrequencyResponse):
        return value
    gain = float(value)
    if gain <= 0:
        raise ValueError(f"{reference}: scalar gain must be positive")
    return FrequencyResponse(np.array([10.0, 24000.0]), np.full(2, gain),
                             reference, magnitude_only=True)


@dataclass
class CalibrationSpec:
    """Everything needed to synthesize one player/listener correction.

    Distances are metres. ``mic_response`` is the recording chain's
    digital sensitivity (dfs per Pa), ``headphone_response`` the playback
    transfer (Pa per dfs). ``gamma_mic_direction`` is the source's
    pressure directivity factor toward the microphone (1.0 by convention
    when the instrument is aimed at its microphone) and
    ``distance_error_factor`` an optional assumed level error, both either
    scalars or curves.
    """

    mic_distance: float
    mic_response: FrequencyResponse
    headphone_response: FrequencyResponse
    gamma_mic_direction: Any = 1.0
    distance_error_factor: Any = 1.0
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        if self.mic_distance <= 0:
            raise ValueError("microphone distance must be positive")
        if self.speed_of_sound <= 0:
            raise ValueError("speed of sound must be positive")
        self.gamma_mic_direction = _as_curve(self.gamma_mic_direction, "gamma")
        self.distance_error_factor = _as_curve(self.distance_error_factor,
                                               "distance_error")


@dataclass
class CalibrationFilter:
    """A synthesized correction: target curve plus its FIR realization."""

    response: FrequencyResponse
    fir: ImpulseResponse
    sample_rate: float
    fir_length: int
    bulk_delay_samples: int
    unreliable_bands: list = field(default_factory=list)
    source_id: Any = None
    listener_id: Any = None
    params: dict = field(default_factory=dict)

    @property
    def taps(self) -> np.ndarray:
        return self.fir.data.mono

    def describe(self) -> dict:
        return {
            "sample_rate": self.sample_rate,
            "fir_length": self.fir_length,
            "bulk_delay_samples": self.bulk_delay_samples,
            "unreliable_bands": [list(b) for b in self.unreliable_bands],
            "source_id": self.source_id,
            "listener_id": self.listener_id,
            **self.params,
        }


def synthesize_calibration(spec: CalibrationSpec, *,
                           sample_rate: float = DEFAULT_SAMPLE_RATE,
                           fir_length: int = DEFAULT_FIR_LENGTH,
                           smoothing_fraction: int = 12,
                           floor_db: float = INVERSION_FLOOR_DB,
                           band: tuple[float, float] = INVERSION_BAND_HZ,
                           cap_db: float = INVERSION_CAP_DB,
                           source_id: Any = None,
                           listener_id: Any = None) -> CalibrationFilter:
    """Build the correction filter for one player/listener pair.

    The magnitude target is ``d_mic * E / (H_headphone * S_mic * Gamma)``
    evaluated on the FIR's frequency grid, with the denominator smoothed
    to a twelfth of an octave and inverted behind the usual guard rails.
    The FIR realization is linear phase, so it applies a pure magnitude
    correction and a bulk delay of half the filter length that the session
    layer must account for.
    """
    if fir_length < 8 or fir_length & (fir_length - 1):
        raise ValueError(f"fir_length must be a power of two >= 8, got {fir_length}")
    if sample_rate <= 0:
        raise ValueError("sample rate must be positive")

    grid = np.fft.rfftfreq(fir_length, 1.0 / sample_rate)
    mic = spec.mic_response.smoothed(smoothing_fraction).sample_magnitude(grid)
    phones = spec.headphone_response.smoothed(smoothing_fraction).sample_magnitude(grid)
    gamma = (spec.gamma_mic_direction.sample_magnitude(grid)
             if spec.gamma_mic_direction is not None else np.ones_like(grid))
    err = (spec.distance_error_factor.sample_magnitude(grid)
           if spec.distance_error_factor is not None else np.ones_like(grid))

    denominator = phones * mic * gamma
    inverse, unreliable = guarded_inverse(grid, denominator, floor_db=floor_db,
                                          band=band, cap_db=cap_db)
    target = spec.mic_distance * err * inverse

    # Zero-phase realization rotated to linear phase: exact on the grid.
    zero_phase = np.fft.irfft(target, fir_length)
    taps = np.roll(zero_phase, fir_length // 2)
    bulk_delay = fir_length // 2

    response = FrequencyResponse(grid, target, "playback_correction",
                                 magnitude_only=True,
                                 unreliable_bands=list(unreliable))
    fir = ImpulseResponse(SampledSignal(taps, sample_rate), kind=IrKind.ANECHOIC)
    return CalibrationFilter(
        response=response, fir=fir, sample_rate=float(sample_rate),
        fir_length=fir_length, bulk_delay_samples=bulk_delay,
        unreliable_bands=list(unreliable), source_id=source_id,
        listener_id=listener_id,
        params={
            "mic_distance_m": spec.mic_distance,
            "distance_gain_db": float(20.0 * np.log10(spec.mic_distance)),
            "floor_db": floor_db, "cap_db": cap_db, "band_hz": list(band),
            "smoothing_fraction": smoothing_fraction,
        })


def apply_inverse_headphone(signal: SampledSignal,
                            headphone_response: FrequencyResponse, *,
                            floor_db: float = INVERSION_FLOOR_DB,
                            band: tuple[float, float] = INVERSION_BAND_HZ,
                            cap_db: float = INVERSION_CAP_DB) -> SampledSignal:
    """Equalize a playback signal by the guarded headphone inverse.

    Zero-phase spectral division; the output keeps the input length.
    """
    n = signal.n_samples
    n_fft = 1 << max(int(np.ceil(np.log2(2 * n))), 4)
    grid = np.fft.rfftfreq(n_fft, 1.0 / signal.sample_rate)
    mag = headphone_response.sample_magnitude(grid)
    inverse, _ = guarded_inverse(grid, mag, floor_db=floor_db, band=band,
                                 cap_db=cap_db)
    if not headphone_response.magnitude_only:
        phase = np.angle(headphone_response.sample(grid))
        inverse = inverse * np.exp(-1j * phase)
    out = np.empty_like(signal.data)
    for c in range(signal.n_channels):
        spec = np.fft.rfft(signal.channel(c), n_fft)
        out[:, c] = np.fft.irfft(spec * inverse, n_fft)[:n]
    return SampledSignal(out, signal.sample_rate)


def ingest_response_by_comparison(device_under_test: SampledSignal,
                                  reference: SampledSignal, *,
                                  window_seconds: float = 0.015,
                                  smoothing_fraction: int = 12,
                                  snr_floor_db: float = 20.0) -> FrequencyResponse:
    """Estimate a transfer curve as the spectral ratio of two recordings.

    Both recordings are windowed with a rectangular window centred on
    their direct-sound peak, which removes any bulk delay between them;
    the ratio of the windowed spectra is smoothed to a fractional octave.
    Bands where the reference fails to clear the recording's noise by
    ``snr_floor_db`` are flagged unreliable (skipped when the recordings
    leave no room for a noise estimate).
    """
    if device_under_test.sample_rate != reference.sample_rate:
        raise ValueError("recordings must share a sample rate")
    rate = reference.sample_rate
    half = max(int(round(window_seconds * rate / 2)), 8)

    def windowed(sig: SampledSignal) -> tuple[np.ndarray, int]:
        x = sig.channel(0)
        peak = int(np.argmax(np.abs(x)))
        seg = np.zeros(2 * half)
        lo = max(0, peak - half)
        hi = min(len(x), peak + half)
        seg[lo - (peak - half):lo - (peak - half) + (hi - lo)] = x[lo:hi]
        return seg, peak

    dut_seg, _ = windowed(device_under_test)
    ref_seg, ref_peak = windowed(reference)
    if not np.any(ref_seg):
        raise ValueError("reference recording is silent inside the window")

    n_fft = 1 << int(np.ceil(np.log2(4 * half)))
    grid = np.fft.rfftfreq(n_fft, 1.0 / rate)
    ref_spec = np.fft.rfft(ref_seg, n_fft)
    dut_spec = np.fft.rfft(dut_seg, n_fft)
    floor = np.max(np.abs(ref_spec)) * 1e-6
    ratio = np.abs(dut_spec) / np.maximum(np.abs(ref_spec), floor)

    response = FrequencyResponse(grid[1:], ratio[1:], "ratio",
                                 magnitude_only=True).smoothed(smoothing_fraction)

    # Noise estimate: a same-length stretch of the reference recording
    # well after (or before) the direct sound.
    ref_x = reference.channel(0)
    noise_seg = None
    after = ref_peak + 4 * half
    if len(ref_x) - after >= 2 * half:
        noise_seg = ref_x[after:after + 2 * half]
    elif ref_peak - 5 * half >= 2 * half:
        noise_seg = ref_x[:2 * half]
    if noise_seg is not None:
        # Taper both segments identically for the SNR estimate; a
        # rectangular window would leak low-frequency noise energy into
        # the high bands and flag them for no reason.
        taper = np.hanning(2 * half)
        noise_spec = np.abs(np.fft.rfft(noise_seg * taper, n_fft))
        signal_spec = np.abs(np.fft.rfft(ref_seg * taper, n_fft))
        edges = 1000.0 * 2.0 ** (np.arange(-12, 13) / 3.0)
        flagged = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            sel = (grid >= lo) & (grid < hi)
            if not np.any(sel):
                continue
            sig_e = float(np.sum(signal_spec[sel] ** 2))
            noise_e = float(np.sum(noise_spec[sel] ** 2))
            if noise_e > 0 and sig_e / noise_e < 10.0 ** (snr_floor_db / 10.0):
                flagged.append((float(lo), float(hi)))
        for lo, hi in flagged:
            if response.unreliable_bands and response.unreliable_bands[-1][1] == lo:
                response.unreliable_bands[-1] = (response.unreliable_bands[-1][0], hi)
            else:
                response.unreliable_bands.append((lo, hi))
    return response


def _response_to_doc(r: FrequencyResponse) -> dict:
    doc: dict[str, Any] = {
        "frequencies": [float(f) for f in r.frequencies],
        "reference": r.reference,
        "unreliable_bands": [list(map(float, b)) for b in r.unreliable_bands],
    }
    if r.magnitude_only:
        doc["magnitude"] = [float(v) for v in r.values]
    else:
        doc["re"] = [float(v) for v in np.real(r.values)]
        doc["im"] = [float(v) for v in np.imag(r.values)]
    return doc


def _response_from_doc(doc: dict) -> FrequencyResponse:
    freqs = np.asarray(doc["frequencies"], dtype=np.float64)
    if "magnitude" in doc:
        fr = FrequencyResponse(freqs, np.asarray(doc["magnitude"]),
                               doc["reference"], magnitude_only=True)
    else:
        vals = np.asarray(doc["re"]) + 1j * np.asarray(doc["im"])
        fr = FrequencyResponse(freqs, vals, doc["reference"])
    fr.unreliable_bands.extend(tuple(b) for b in doc.get("unreliable_bands", []))
    return fr


def save_calibration(filt: CalibrationFilter, stem: str | Path) -> Path:
    """Persist a filter as a WAV (taps) plus JSON (curve and metadata).

    ``stem`` may be a bare path or either of the two file names; the pair
    is always written next to each other. Returns the JSON path, which is
    what :func:`load_calibration` takes.
    """
    stem = Path(stem)
    if stem.suffix in (".json", ".wav"):
        stem = stem.with_suffix("")
    wav_path = stem.with_suffix(".wav")
    json_path = stem.with_suffix(".json")
    wavio.write(wav_path, filt.fir.data, encoding="float32")
    doc = {
        "schema_version": 1,
        "kind": "calibration-filter",
        "sample_rate": filt.sample_rate,
        "fir_length": filt.fir_length,
        "bulk_delay_samples": filt.bulk_delay_samples,
        "unreliable_bands": [list(map(float, b)) for b in filt.unreliable_bands],
        "source_id": filt.source_id,
        "listener_id": filt.listener_id,
        "params": filt.params,
        "fir_file": wav_path.name,
        "response": _response_to_doc(filt.response),
    }
    json_path.write_text(json.dumps(doc))
    return json_path


def load_calibration(path: str | Path) -> CalibrationFilter:
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    doc = json.loads(path.read_text())
    if doc.get("kind") != "calibration-filter":
        raise ValueError(f"{path} is not a calibration filter record")
    sig = wavio.read(path.parent / doc["fir_file"])
    if float(sig.sample_rate) != float(doc["sample_rate"]):
        raise ValueError(
            f"calibration record declares {doc['sample_rate']} Hz but its "
            f"FIR file is at {sig.sample_rate} Hz")
    return CalibrationFilter(
        response=_response_from_doc(doc["response"]),
        fir=ImpulseResponse(sig, kind=IrKind.ANECHOIC),
        sample_rate=float(doc["sample_rate"]),
        fir_length=int(doc["fir_length"]),
        bulk_delay_samples=int(doc["bulk_delay_samples"]),
        unreliable_bands=[tuple(b) for b in doc.get("unreliable_bands", [])],
        source_id=doc.get("source_id"),
        listener_id=doc.get("listener_id"),
        params=doc.get("params", {}),
    )
