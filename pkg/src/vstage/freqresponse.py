"""Frequency-response curves: container, file format, smoothing, inversion.

A response is a sampled magnitude (optionally complex) curve over an
ascending frequency grid, tagged with the units it is referenced to, for
example "dfs_per_pa" for a recording chain or "pa_per_dfs" for playback.
Curves are interpolated in log-frequency / dB space, which suits the
measured transfer functions this package trades in.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Guard rails for inversion, shared by every equalization path: the floor
# keeps notches from exploding, the band keeps the correction inside the
# range a headphone chain can be trusted, the cap bounds total boost.
INVERSION_FLOOR_DB = -40.0
INVERSION_BAND_HZ = (50.0, 16000.0)
INVERSION_CAP_DB = 24.0

# Contiguous below-floor stretches wider than this are reported instead of
# silently regularized away.
UNRELIABLE_BAND_OCTAVES = 1.0 / 3.0

DEFAULT_SMOOTHING_FRACTION = 12
_POINTS_PER_OCTAVE = 96


@dataclass
class FrequencyResponse:
    """A transfer-function curve over an ascending frequency grid.

    ``values`` may be complex; curves recovered from magnitude-only data
    set ``magnitude_only`` and carry zero phase. ``unreliable_bands`` lists
    (low_hz, high_hz) stretches where the curve should not be trusted.
    """

    frequencies: np.ndarray
    values: np.ndarray
    reference: str
    magnitude_only: bool = False
    unreliable_bands: list = field(default_factory=list)

    def __post_init__(self):
        freqs = np.asarray(self.frequencies, dtype=np.float64)
        vals = np.asarray(self.values)
        if freqs.ndim != 1 or vals.shape != freqs.shape:
            raise ValueError("frequencies and values must be matching 1-D arrays")
        if freqs.size < 2:
            raise ValueError("a response needs at least two grid points")
        if np.any(freqs < 0) or np.any(np.diff(freqs) <= 0):
            raise ValueError("frequency grid must be non-negative and ascending")
        if not np.all(np.isfinite(freqs)) or not np.all(np.isfinite(vals)):
            raise ValueError("response contains non-finite entries")
        if self.magnitude_only:
            vals = np.abs(vals).astype(np.float64)
        else:
            vals = vals.astype(np.complex128)
        self.frequencies = freqs
        self.values = vals

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    def magnitude_db(self, floor: float = 1e-12) -> np.ndarray:
        return 20.0 * np.log10(np.maximum(self.magnitude, floor))

    def sample_magnitude(self, grid: np.ndarray) -> np.ndarray:
        """Magnitude interpolated onto ``grid`` (log-f, dB domain).

        Frequencies outside the stored grid clamp to the edge values.
        """
        grid = np.asarray(grid, dtype=np.float64)
        positive = self.frequencies > 0
        if np.count_nonzero(positive) < 2:
            raise ValueError("response needs at least two positive-frequency points")
        logf = np.log10(self.frequencies[positive])
        mags_db = self.magnitude_db()[positive]
        out_logf = np.log10(np.maximum(grid, self.frequencies[positive][0] * 1e-6))
        return 10.0 ** (np.interp(out_logf, logf, mags_db) / 20.0)

    def sample(self, grid: np.ndarray) -> np.ndarray:
        """Complex values on ``grid``; magnitude-only curves get zero phase."""
        mag = self.sample_magnitude(grid)
        if self.magnitude_only:
            return mag.astype(np.complex128)
        positive = self.frequencies > 0
        logf = np.log10(self.frequencies[positive])
        phase = np.unwrap(np.angle(self.values[positive]))
        grid = np.asarray(grid, dtype=np.float64)
        out_logf = np.log10(np.maximum(grid, self.frequencies[positive][0] * 1e-6))
        return mag * np.exp(1j * np.interp(out_logf, logf, phase))

    def smoothed(self, fraction: int = DEFAULT_SMOOTHING_FRACTION) -> "FrequencyResponse":
        """Fractional-octave smoothed copy (magnitude smoothed, phase kept)."""
        positive = self.frequencies > 0
        f = self.frequencies[positive]
        if f.size < 3 or f[-1] / f[0] < 2.0 ** (1.0 / fraction):
            return FrequencyResponse(self.frequencies, self.values, self.reference,
                                     self.magnitude_only, list(self.unreliable_bands))
        logf = np.log10(f)
        n_dense = max(int(np.ceil((logf[-1] - logf[0]) / np.log10(2.0)
                                  * _POINTS_PER_OCTAVE)), 8)
        dense_logf = np.linspace(logf[0], logf[-1], n_dense)
        dense_db = np.interp(dense_logf, logf, self.magnitude_db()[positive])
        width = max(int(round(_POINTS_PER_OCTAVE / fraction)), 1)
        kernel = np.ones(width) / width
        padded = np.concatenate([np.full(width, dense_db[0]), dense_db,
                                 np.full(width, dense_db[-1])])
        smoothed_db = np.convolve(padded, kernel, mode="same")[width:width + n_dense]
        out_db = np.interp(logf, dense_logf, smoothed_db)

        new_mag = np.empty_like(self.magnitude)
        new_mag[positive] = 10.0 ** (out_db / 20.0)
        if np.any(~positive):
            new_mag[~positive] = new_mag[positive][0]
        if self.magnitude_only:
            values = new_mag
        else:
            old_mag = np.maximum(self.magnitude, 1e-300)
            values = self.values * (new_mag / old_mag)
        return FrequencyResponse(self.frequencies, values, self.reference,
                                 self.magnitude_only, list(self.unreliable_bands))


def find_unreliable_bands(frequencies: np.ndarray, magnitude: np.ndarray,
                          floor: float,
                          band: tuple[float, float] = INVERSION_BAND_HZ,
                          min_octaves: float = UNRELIABLE_BAND_OCTAVES) -> list:
    """Contiguous in-band stretches below ``floor`` wider than ``min_octaves``."""
    in_band = (frequencies >= band[0]) & (frequencies <= band[1])
    weak = (magnitude < floor) & in_band & (frequencies > 0)
    bands = []
    start = None
    for i, flag in enumerate(weak):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            bands.append((start, i - 1))
            start = None
    if start is not None:
        bands.append((start, len(weak) - 1))
    wide = []
    for lo, hi in bands:
        f_lo, f_hi = frequencies[lo], frequencies[hi]
        if f_lo > 0 and f_hi / f_lo > 2.0 ** min_octaves:
            wide.append((float(f_lo), float(f_hi)))
    return wide


def guarded_inverse(frequencies: np.ndarray, magnitude: np.ndarray, *,
                    floor_db: float = INVERSION_FLOOR_DB,
                    band: tuple[float, float] = INVERSION_BAND_HZ,
                    cap_db: float = INVERSION_CAP_DB) -> tuple[np.ndarray, list]:
    """Regularized magnitude inversion.

    The curve is floored ``floor_db`` below its peak before dividing, the
    inverse outside ``band`` is clamped to its band-edge values, and the
    result is capped ``cap_db`` above the median in-band inverse gain.
    Returns ``(inverse_magnitude, unreliable_bands)`` where the bands flag
    contiguous below-floor stretches wider than a third of an octave.
    """
    frequencies = np.asarray(frequencies, dtype=np.float64)
    magnitude = np.asarray(magnitude, dtype=np.float64)
    if np.any(magnitude < 0):
        raise ValueError("magnitude curve must be non-negative")
    peak = float(np.max(magnitude))
    if peak <= 0:
        raise ValueError("cannot invert an all-zero response")

    floor = peak * 10.0 ** (floor_db / 20.0)
    inv = 1.0 / np.maximum(magnitude, floor)

    in_band = (frequencies >= band[0]) & (frequencies <= band[1])
    if not np.any(in_band):
        raise ValueError(f"no grid points inside the trusted band {band}")
    idx = np.nonzero(in_band)[0]
    inv[:idx[0]] = inv[idx[0]]
    inv[idx[-1] + 1:] = inv[idx[-1]]

    cap = float(np.median(inv[in_band])) * 10.0 ** (cap_db / 20.0)
    np.minimum(inv, cap, out=inv)

    return inv, find_unreliable_bands(frequencies, magnitude, floor, band)


def flat_response(reference: str, gain: float = 1.0,
                  f_lo: float = 10.0, f_hi: float = 24000.0) -> FrequencyResponse:
    """A constant-magnitude response, handy as a neutral default."""
    freqs = np.array([f_lo, f_hi])
    return FrequencyResponse(freqs, np.full(2, gain), reference,
                             magnitude_only=True)


# ---------------------------------------------------------------------------
# CSV exchange format: one header line declaring the column layout and the
# reference units, then numeric rows. Two layouts:
#
#   freq_hz,mag_db,reference=dfs_per_pa
#   20.0,-0.35
#
#   freq_hz,re,im,reference=pa_per_dfs
#   20.0,0.98,0.01
# ---------------------------------------------------------------------------

def write_response_csv(path, response: FrequencyResponse) -> None:
    buf = io.StringIO()
    if response.magnitude_only:
        buf.write(f"freq_hz,mag_db,reference={response.reference}\n")
        for f, db in zip(response.frequencies, response.magnitude_db()):
            buf.write(f"{f:.6f},{db:.8f}\n")
    else:
        buf.write(f"freq_hz,re,im,reference={response.reference}\n")
        for f, v in zip(response.frequencies, response.values):
            buf.write(f"{f:.6f},{v.real:.10e},{v.imag:.10e}\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_response_csv(path) -> FrequencyResponse:
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty response file")
    header = [tok.strip() for tok in lines[0].split(",")]
    reference = None
    for tok in header:
        if tok.startswith("reference="):
            reference = tok.split("=", 1)[1]
    if reference is None:
        raise ValueError(f"{path}: header must declare reference units")

    columns = [tok for tok in header if not tok.startswith("reference=")]
    rows = [line.split(",") for line in lines[1:] if line.strip()]
    if columns[:2] == ["freq_hz", "mag_db"]:
        freqs = np.array([float(r[0]) for r in rows])
        mags = 10.0 ** (np.array([float(r[1]) for r in rows]) / 20.0)
        return FrequencyResponse(freqs, mags, reference, magnitude_only=True)
    if columns[:3] == ["freq_hz", "re", "im"]:
        freqs = np.array([float(r[0]) for r in rows])
        vals = np.array([float(r[1]) + 1j * float(r[2]) for r in rows])
        return FrequencyResponse(freqs, vals, reference)
    raise ValueError(f"{path}: unrecognized column layout {columns}")
