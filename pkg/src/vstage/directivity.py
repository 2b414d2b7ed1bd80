"""Source directivity models built on real spherical harmonics.

A measured instrument directivity arrives as one set of spherical
harmonic coefficients per partial (per prominent harmonic of a played
note).  This module evaluates those patterns on direction grids,
normalizes them so the sphere-averaged radiated power is unity, and
derives the scalar figures used when judging how much a rendering
pipeline bends a pattern out of shape: directivity factor, directional
index, band averages, and the distribution of per-direction errors
between two patterns.

Coefficients are stored in the orthonormal convention with channels in
ACN order (index l*(l+1)+m).  Files using semi-normalized coefficients
are converted on load.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import lpmv

from .errors import EmptyBandError, ReferenceNullError

__all__ = [
    "DirectionGrid",
    "DirectivityModel",
    "ErrorPdf",
    "Partial",
    "acn_index",
    "band_average",
    "band_error_pdf",
    "directional_index",
    "fractional_octave_bands",
    "load_directivity",
    "real_sh_matrix",
    "save_directivity",
    "sn3d_to_n3d",
]

ERROR_KDE_SIGMA_DB = 0.1


def acn_index(degree: int, order: int) -> int:
    """Channel index of harmonic (l, m) in ACN ordering."""
    return degree * (degree + 1) + order


def real_sh_matrix(max_degree: int, azimuth: np.ndarray,
                   elevation: np.ndarray) -> np.ndarray:
    """Real orthonormal spherical harmonics up to ``max_degree``.

    Returns shape (n_directions, (max_degree + 1) ** 2), columns in ACN
    order.  Elevation is measured from the horizontal plane, positive
    up, in radians; azimuth counterclockwise from +x.

    Normalization makes the sphere average of Y_i * Y_j equal delta_ij,
    so Y_0 is the constant 1 and the squared norm of a coefficient
    vector is the pattern's mean square pressure over the sphere.
    """
    az = np.atleast_1d(np.asarray(azimuth, dtype=np.float64))
    el = np.atleast_1d(np.asarray(elevation, dtype=np.float64))
    if az.shape != el.shape:
        raise ValueError("azimuth and elevation must have the same shape")
    x = np.sin(el)  # cos(colatitude)
    n_ch = (max_degree + 1) ** 2
    out = np.empty((az.size, n_ch))
    for l in range(max_degree + 1):
        for m in range(0, l + 1):
            # lpmv includes the Condon-Shortley phase; (-1)^m removes it.
            plm = lpmv(m, l, x) * (-1.0) ** m
            norm = math.sqrt((2 * l + 1)
                             * math.factorial(l - m) / math.factorial(l + m))
            if m == 0:
                out[:, acn_index(l, 0)] = norm * plm
            else:
                scaled = math.sqrt(2.0) * norm * plm
                out[:, acn_index(l, m)] = scaled * np.cos(m * az)
                out[:, acn_index(l, -m)] = scaled * np.sin(m * az)
    return out


@dataclass(frozen=True)
class DirectionGrid:
    """Sampling directions with quadrature weights summing to 4 pi."""

    azimuth: np.ndarray
    elevation: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        az = np.asarray(self.azimuth, dtype=np.float64).ravel()
        el = np.asarray(self.elevation, dtype=np.float64).ravel()
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if not (az.size == el.size == w.size):
            raise ValueError("azimuth, elevation, weights must match in length")
        if az.size == 0:
            raise ValueError("grid needs at least one direction")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        object.__setattr__(self, "azimuth", az)
        object.__setattr__(self, "elevation", el)
        object.__setattr__(self, "weights", w)

    @classmethod
    def regular(cls, step_degrees: float = 5.0) -> "DirectionGrid":
        """Equiangular az/el grid with interpolatory latitude weights.

        Cell centres sit at half-step offsets so no direction lands on a
        pole.  Those latitudes are Chebyshev nodes in sin(elevation), so
        the matching interpolatory row weights (Fejer's rule) track the
        cos(elevation) area profile while integrating every band-limited
        pattern of order below n_rows / 2 exactly.  Plain cell-area
        weights would bias a dipole's directivity factor by about 0.2 %,
        which is more than the figures derived here are allowed to move.
        """
        if step_degrees <= 0 or 180.0 % step_degrees > 1e-9:
            raise ValueError("step must evenly divide 180 degrees")
        step = math.radians(step_degrees)
        n_az = int(round(2 * math.pi / step))
        n_el = int(round(math.pi / step))
        az_centres = (np.arange(n_az) + 0.5) * step
        el_centres = -math.pi / 2 + (np.arange(n_el) + 0.5) * step
        az, el = np.meshgrid(az_centres, el_centres, indexing="ij")
        colat = math.pi / 2 - el_centres[::-1]
        j = np.arange(1, n_el // 2 + 1)
        row_w = (2.0 / n_el) * (
            1.0 - 2.0 * np.sum(np.cos(2.0 * j[None, :] * colat[:, None])
                               / (4.0 * j ** 2 - 1.0), axis=1))[::-1]
        w = np.broadcast_to(row_w * (2.0 * math.pi / n_az), (n_az, n_el)).copy()
        w *= 4.0 * math.pi / np.sum(w)
        return cls(az.ravel(), el.ravel(), w.ravel())

    @property
    def n_directions(self) -> int:
        return self.azimuth.size

    def sphere_mean(self, values: np.ndarray) -> float:
        """Weighted mean over the sphere (weights / 4 pi)."""
        v = np.asarray(values, dtype=np.float64)
        if v.shape != self.azimuth.shape:
            raise ValueError("values must match the grid size")
        return float(np.sum(v * self.weights) / (4.0 * math.pi))


@dataclass
class Partial:
    """One partial's radiation pattern as SH coefficients (ACN, orthonormal)."""

    frequency_hz: float
    coefficients: np.ndarray
    note: str | None = None
    register: str | None = None
    amplitude: float | None = None

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=np.float64).ravel()
        n = int(round(math.sqrt(c.size)))
        if n * n != c.size or c.size == 0:
            raise ValueError(
                f"coefficient count {c.size} is not a square; "
                "expected (order + 1) ** 2 channels in ACN order")
        if self.frequency_hz <= 0:
            raise ValueError("partial frequency must be positive")
        self.coefficients = c

    @property
    def sh_order(self) -> int:
        return int(round(math.sqrt(self.coefficients.size))) - 1

    def pressure(self, grid: DirectionGrid) -> np.ndarray:
        """Sound pressure magnitude pattern on the grid (unnormalized)."""
        basis = real_sh_matrix(self.sh_order, grid.azimuth, grid.elevation)
        return basis @ self.coefficients


@dataclass
class DirectivityModel:
    instrument: str
    partials: list[Partial] = field(default_factory=list)

    def __post_init__(self):
        freqs = [p.frequency_hz for p in self.partials]
        if sorted(freqs) != freqs:
            self.partials = sorted(self.partials, key=lambda p: p.frequency_hz)

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([p.frequency_hz for p in self.partials])


def gamma(partial: Partial, grid: DirectionGrid,
          reference_azimuth: float, reference_elevation: float) -> np.ndarray:
    """Pattern normalized to unity toward a reference direction.

    This is the gain seen by a pickup at some direction relative to a
    pickup on the reference axis; it is what a spot microphone's
    placement bakes into a feed.
    """
    p = partial.pressure(grid)
    basis = real_sh_matrix(partial.sh_order,
                           np.array([reference_azimuth]),
                           np.array([reference_elevation]))
    ref = (basis @ partial.coefficients).item()
    if abs(ref) < 1e-12 * max(np.max(np.abs(p)), 1e-300):
        raise ReferenceNullError(
            "pattern is null toward the reference direction; "
            "gamma is undefined there")
    return p / ref


def q_factor(partial: Partial, grid: DirectionGrid,
             azimuth: float, elevation: float) -> float:
    """Directivity factor: squared pattern toward (az, el) over its sphere mean."""
    p2 = partial.pressure(grid) ** 2
    mean = grid.sphere_mean(p2)
    if mean <= 0.0:
        raise ValueError("pattern has no radiated power")
    basis = real_sh_matrix(partial.sh_order,
                           np.array([azimuth]), np.array([elevation]))
    at = (basis @ partial.coefficients).item() ** 2
    return at / mean


def directional_index(partial: Partial, grid: DirectionGrid,
                      azimuth: float, elevation: float) -> float:
    """Directivity factor expressed in dB."""
    return 10.0 * math.log10(q_factor(partial, grid, azimuth, elevation))


def _normalized_power(partial: Partial, grid: DirectionGrid) -> np.ndarray:
    p2 = partial.pressure(grid) ** 2
    mean = grid.sphere_mean(p2)
    if mean <= 0.0:
        raise ValueError("pattern has no radiated power")
    return p2 / mean


def directional_index_map(partial: Partial, grid: DirectionGrid,
                          floor_db: float = -100.0) -> np.ndarray:
    """Per-direction directivity index in dB over the whole grid."""
    q = _normalized_power(partial, grid)
    return 10.0 * np.log10(np.maximum(q, 10.0 ** (floor_db / 10.0)))


def fractional_octave_bands(center_frequencies: np.ndarray,
                            fraction: int = 3) -> list[tuple[float, float]]:
    """(lo, hi) edges of 1/fraction-octave bands around the given centres."""
    half = 2.0 ** (1.0 / (2 * fraction))
    return [(f / half, f * half) for f in np.asarray(center_frequencies, float)]


def band_average(model: DirectivityModel, grid: DirectionGrid,
                 band: tuple[float, float],
                 azimuth: float, elevation: float) -> float:
    """Mean directional index (dB) over the partials inside a band.

    Averaging the dB figures weights every partial equally, which is the
    convention for summarizing a register; use the per-partial values
    when level-weighted statements are needed.
    """
    lo, hi = band
    members = [p for p in model.partials if lo <= p.frequency_hz <= hi]
    if not members:
        raise EmptyBandError(f"no partials between {lo:g} and {hi:g} Hz")
    return float(np.mean([directional_index(p, grid, azimuth, elevation)
                          for p in members]))


@dataclass
class ErrorPdf:
    """Smoothed probability density of per-direction level errors (dB)."""

    axis_db: np.ndarray
    density: np.ndarray
    mean_db: float
    percentiles_db: dict[int, float]
    n_samples: int

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.axis_db))


def _gaussian_kde(samples: np.ndarray, weights: np.ndarray,
                  sigma: float) -> tuple[np.ndarray, np.ndarray]:
    lo = float(np.min(samples)) - 4.0 * sigma
    hi = float(np.max(samples)) + 4.0 * sigma
    axis = np.linspace(lo, hi, 2048)
    z = (axis[None, :] - samples[:, None]) / sigma
    kernels = np.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi))
    density = (weights[:, None] * kernels).sum(axis=0) / np.sum(weights)
    return axis, density


def band_error_pdf(model_a: DirectivityModel, model_b: DirectivityModel,
                   grid: DirectionGrid, band: tuple[float, float],
                   *, energy_weighted: bool = False) -> ErrorPdf:
    """Distribution of per-direction index differences between two models.

    Partials are matched by position within the band (both models must
    contain the same partial frequencies there).  Each direction of each
    matched partial contributes one error sample: the difference of the
    two directivity-index maps at that direction, in dB.  Samples are
    weighted by solid angle, optionally also by the radiated energy of
    the first model so that quiet directions count less.
    """
    lo, hi = band
    pa = [p for p in model_a.partials if lo <= p.frequency_hz <= hi]
    pb = [p for p in model_b.partials if lo <= p.frequency_hz <= hi]
    if not pa or not pb:
        raise EmptyBandError(f"no partials between {lo:g} and {hi:g} Hz")
    if len(pa) != len(pb) or any(
            abs(x.frequency_hz - y.frequency_hz) > 1e-6 * x.frequency_hz
            for x, y in zip(pa, pb)):
        raise ValueError("models carry different partials inside the band")

    samples = []
    weights = []
    for x, y in zip(pa, pb):
        qa = _normalized_power(x, grid)
        qb = _normalized_power(y, grid)
        floor = 1e-10
        err = 10.0 * np.log10(np.maximum(qa, floor)) \
            - 10.0 * np.log10(np.maximum(qb, floor))
        w = grid.weights.copy()
        if energy_weighted:
            w *= qa
        samples.append(err)
        weights.append(w)
    s = np.concatenate(samples)
    w = np.concatenate(weights)

    axis, density = _gaussian_kde(s, w, ERROR_KDE_SIGMA_DB)
    order = np.argsort(s)
    ws = w[order]
    # Midpoint convention: each sample sits at the centre of its own
    # weight slab, so a symmetric sample set gets a median of exactly 0.
    cum = (np.cumsum(ws) - ws / 2.0) / np.sum(ws)
    pct = {k: float(np.interp(k / 100.0, cum, s[order])) for k in (25, 50, 75)}
    mean = float(np.sum(s * w) / np.sum(w))
    return ErrorPdf(axis_db=axis, density=density, mean_db=mean,
                    percentiles_db=pct, n_samples=s.size)


def sn3d_to_n3d(coefficients: np.ndarray) -> np.ndarray:
    """Rescale semi-normalized SH coefficients to the orthonormal convention."""
    c = np.asarray(coefficients, dtype=np.float64).ravel()
    n = int(round(math.sqrt(c.size)))
    if n * n != c.size:
        raise ValueError("coefficient count is not a square")
    out = c.copy()
    for l in range(n):
        sl = slice(l * l, (l + 1) * (l + 1))
        out[sl] *= math.sqrt(2 * l + 1)
    return out


def n3d_to_sn3d(coefficients: np.ndarray) -> np.ndarray:
    c = np.asarray(coefficients, dtype=np.float64).ravel()
    n = int(round(math.sqrt(c.size)))
    if n * n != c.size:
        raise ValueError("coefficient count is not a square")
    out = c.copy()
    for l in range(n):
        sl = slice(l * l, (l + 1) * (l + 1))
        out[sl] /= math.sqrt(2 * l + 1)
    return out


def load_directivity(path: str | Path) -> DirectivityModel:
    """Read a directivity model from JSON.

    Expected layout::

        {"instrument": "...", "convention": "n3d-acn" | "sn3d-acn",
         "partials": [{"freq_hz": ..., "sh_order": n,
                       "coeffs": [...], "note": "...", ...}]}
    """
    raw = json.loads(Path(path).read_text())
    convention = raw.get("convention", "n3d-acn")
    if convention not in ("n3d-acn", "sn3d-acn"):
        raise ValueError(f"unsupported coefficient convention {convention!r}")
    partials = []
    for entry in raw["partials"]:
        coeffs = np.asarray(entry["coeffs"], dtype=np.float64)
        declared = entry.get("sh_order")
        if declared is not None and (declared + 1) ** 2 != coeffs.size:
            raise ValueError(
                f"partial at {entry['freq_hz']} Hz declares order {declared} "
                f"but carries {coeffs.size} coefficients")
        if convention == "sn3d-acn":
            coeffs = sn3d_to_n3d(coeffs)
        partials.append(Partial(frequency_hz=float(entry["freq_hz"]),
                                coefficients=coeffs,
                                note=entry.get("note"),
                                register=entry.get("register"),
                                amplitude=entry.get("amplitude")))
    return DirectivityModel(instrument=raw.get("instrument", "unknown"),
                            partials=partials)


def save_directivity(model: DirectivityModel, path: str | Path) -> None:
    doc = {
        "instrument": model.instrument,
        "convention": "n3d-acn",
        "partials": [
            {k: v for k, v in {
                "freq_hz": p.frequency_hz,
                "sh_order": p.sh_order,
                "coeffs": p.coefficients.tolist(),
                "note": p.note,
                "register": p.register,
                "amplitude": p.amplitude,
            }.items() if v is not None}
            for p in model.partials
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1))
