"""Make simulated room responses playable: time compensation plus calibration.

A geometrical-acoustics simulation delivers one raw binaural impulse
response per (source, listener) pair, timed so sound that travels d
meters arrives at d/c. Playback adds two terms the simulation knows
nothing about: the audio interface inserts its round-trip latency, and
the feed is picked up by a spot microphone a short distance from the
instrument, which already buys that distance's travel time as head
start. adapt() advances the response by the sum of the two and convolves
in the calibration filter, so reproduced reflections land at the same
instants they would in the simulated room.

The advance eats into the response's leading silence. Whether a given
interface latency fits inside that silence is a pure geometry question,
answered ahead of time by check_feasibility(); the hard guard remains
the energy check inside the shift itself, which refuses to discard
audible material.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import wavio
from .calibration import SPEED_OF_SOUND, CalibrationFilter, load_calibration
from .errors import InfeasibleShiftError, ManifestError
from .signals import (
    ENERGY_LOSS_FLOOR_DB,
    INTERP_TAPS_PER_SIDE,
    ImpulseResponse,
    IrKind,
    SampledSignal,
    convolve,
    fractional_delay,
)

__all__ = [
    "AdaptationPlan",
    "FeasibilityReport",
    "adapt",
    "check_feasibility",
    "process_manifest",
    "window_direct_sound",
]


@dataclass
class AdaptationPlan:
    """Everything needed to turn one raw response into a playable one.

    ``extra_bulk_delay`` is the group delay the calibration FIR adds on
    top of the compensated timing (its linear-phase centre tap). It is
    not removed here; the session latency budget accounts for it. Left
    unset, it is read off the calibration filter.
    """

    interface_latency: float
    mic_distance: float
    speed_of_sound: float = SPEED_OF_SOUND
    calibration: CalibrationFilter | None = None
    skip_direct: bool = False
    extra_bulk_delay: int | None = None

    def __post_init__(self):
        if self.interface_latency < 0:
            raise ValueError("interface latency cannot be negative")
        if self.mic_distance < 0:
            raise ValueError("microphone distance cannot be negative")
        if self.speed_of_sound <= 0:
            raise ValueError("speed of sound must be positive")
        if self.extra_bulk_delay is None:
            self.extra_bulk_delay = (self.calibration.bulk_delay_samples
                                     if self.calibration is not None else 0)

    @property
    def advance_seconds(self) -> float:
        return self.interface_latency + self.mic_distance / self.speed_of_sound


def adapt(h_prime: ImpulseResponse, plan: AdaptationPlan) -> ImpulseResponse:
    """Advance a raw simulated response and apply the calibration filter.

    The time shift is -(interface latency + mic distance / c). Both
    binaural channels get the identical calibration FIR. The result
    records what was done in its ``adaptation`` field.
    """
    if not isinstance(h_prime, ImpulseResponse):
        raise TypeError("adapt expects an ImpulseResponse")
    if h_prime.kind is not IrKind.RAW_SIMULATED:
        raise ValueError(
            f"only raw simulated responses can be adapted, got {h_prime.kind.value}")
    if plan.skip_direct and not h_prime.direct_sound_skipped:
        raise ValueError(
            "plan expects the direct sound to be absent (an own-instrument "
            "path) but the response still contains it; simulate without the "
            "direct sound or apply window_direct_sound first")
    if not plan.skip_direct and h_prime.direct_sound_skipped:
        raise ValueError(
            "response had its direct sound removed but the plan is for a "
            "cross path that needs it")

    rate = h_prime.sample_rate
    if plan.calibration is not None and plan.calibration.sample_rate != rate:
        raise ValueError(
            f"calibration filter at {plan.calibration.sample_rate} Hz cannot "
            f"be applied to a response at {rate} Hz")

    advance = plan.advance_seconds
    try:
        shifted = fractional_delay(h_prime, -advance)
    except InfeasibleShiftError as err:
        min_distance = plan.speed_of_sound * plan.interface_latency
        raise InfeasibleShiftError(
            f"{err}; the interface latency alone consumes "
            f"{min_distance:.2f} m of acoustic head start, so the response "
            f"needs at least that much leading path (plus the microphone "
            f"distance) before its first arrival",
            loss_db=err.loss_db, shift_seconds=err.shift_seconds) from err

    out = shifted.data
    if plan.calibration is not None:
        out = convolve(out, plan.calibration.fir)

    provenance = {
        "shift_seconds": -advance,
        "shift_samples": -advance * rate,
        "interface_latency": plan.interface_latency,
        "mic_distance": plan.mic_distance,
        "speed_of_sound": plan.speed_of_sound,
        "extra_bulk_delay": plan.extra_bulk_delay,
        "calibration": (plan.calibration.describe()
                        if plan.calibration is not None else None),
        "interpolation_taps_per_side": INTERP_TAPS_PER_SIDE,
        "energy_loss_floor_db": ENERGY_LOSS_FLOOR_DB,
    }
    return ImpulseResponse(out, kind=IrKind.ADAPTED,
                           direct_sound_skipped=h_prime.direct_sound_skipped,
                           source_id=h_prime.source_id,
                           listener_id=h_prime.listener_id,
                           adaptation=provenance)


@dataclass(frozen=True)
class FeasibilityReport:
    """Whether an interface latency fits the geometry's head start.

    Margins are in seconds of remaining headroom; negative means the
    limit is exceeded. ``equivalent_distance`` is how far sound travels
    during the latency, the natural yardstick for stage layouts.
    """

    interface_latency: float
    equivalent_distance: float
    hearing_others_feasible: bool
    hearing_others_margin: float
    hearing_self_feasible: bool
    hearing_self_margin: float
    speed_of_sound: float

    @property
    def feasible(self) -> bool:
        return self.hearing_others_feasible and self.hearing_self_feasible

    def as_dict(self) -> dict:
        return {
            "interface_latency_s": self.interface_latency,
            "equivalent_distance_m": self.equivalent_distance,
            "hearing_others": {"feasible": self.hearing_others_feasible,
                               "margin_s": self.hearing_others_margin},
            "hearing_self": {"feasible": self.hearing_self_feasible,
                             "margin_s": self.hearing_self_margin},
            "feasible": self.feasible,
            "speed_of_sound": self.speed_of_sound,
        }


def check_feasibility(interface_latency: float, *, min_distance: float,
                      receiver_height: float, mic_distance: float,
                      direct_path: float = 0.0,
                      speed_of_sound: float = SPEED_OF_SOUND) -> FeasibilityReport:
    """Test the latency against the earliest sound each path must deliver.

    Hearing others: the other player's direct sound arrives no earlier
    than min_distance / c, and the microphone pickup adds
    mic_distance / c of slack, so the latency must stay within
    (min_distance + mic_distance) / c.

    Hearing oneself: the direct sound is skipped, so the earliest
    simulated arrival is the floor bounce, whose path for a source at
    the receiver is twice the receiver height. The latency must stay
    within (floor_path - direct_path + mic_distance) / c.
    """
    if interface_latency < 0:
        raise ValueError("interface latency cannot be negative")
    if min_distance <= 0 or receiver_height <= 0:
        raise ValueError("geometry distances must be positive")
    if mic_distance < 0 or direct_path < 0:
        raise ValueError("distances cannot be negative")
    c = speed_of_sound
    others_limit = (min_distance + mic_distance) / c
    floor_path = 2.0 * receiver_height
    self_limit = (floor_path - direct_path + mic_distance) / c
    return FeasibilityReport(
        interface_latency=interface_latency,
        equivalent_distance=c * interface_latency,
        hearing_others_feasible=interface_latency <= others_limit,
        hearing_others_margin=others_limit - interface_latency,
        hearing_self_feasible=interface_latency <= self_limit,
        hearing_self_margin=self_limit - interface_latency,
        speed_of_sound=c,
    )


def window_direct_sound(h: ImpulseResponse, first_reflection_seconds: float,
                        *, fade_seconds: float = 0.0005) -> ImpulseResponse:
    """Remove everything before the first reflection with a soft edge.

    Fallback for responses that arrive with the direct sound baked in;
    the preferred route is configuring the simulator to omit it. The
    raised-cosine ramp ends exactly at the given reflection time, so the
    reflection itself passes at full level.
    """
    if h.kind is not IrKind.RAW_SIMULATED:
        raise ValueError("only raw simulated responses can be windowed")
    if h.direct_sound_skipped:
        raise ValueError("direct sound was already removed")
    rate = h.sample_rate
    edge = int(round(first_reflection_seconds * rate))
    if not 0 < edge <= h.data.n_samples:
        raise ValueError("first reflection time falls outside the response")
    n_fade = max(int(round(fade_seconds * rate)), 1)
    start = max(edge - n_fade, 0)
    ramp = 0.5 - 0.5 * np.cos(np.pi * (np.arange(start, edge) - start + 1)
                              / (edge - start))
    gain = np.ones(h.data.n_samples)
    gain[:start] = 0.0
    gain[start:edge] = ramp
    data = h.data.data * gain[:, None]
    return ImpulseResponse(SampledSignal(data, rate), kind=h.kind,
                           direct_sound_skipped=True,
                           source_id=h.source_id, listener_id=h.listener_id)


def _plan_from_doc(doc: dict, base: Path) -> AdaptationPlan:
    try:
        latency = float(doc["interface_latency"])
        mic_distance = float(doc["mic_distance"])
    except KeyError as missing:
        raise ManifestError(f"plan is missing {missing.args[0]!r}") from None
    calibration = None
    if doc.get("calibration"):
        cal_path = Path(doc["calibration"])
        if not cal_path.is_absolute():
            cal_path = base / cal_path
        calibration = load_calibration(cal_path)
    return AdaptationPlan(
        interface_latency=latency,
        mic_distance=mic_distance,
        speed_of_sound=float(doc.get("speed_of_sound", SPEED_OF_SOUND)),
        calibration=calibration,
        skip_direct=bool(doc.get("skip_direct", False)),
        extra_bulk_delay=doc.get("extra_bulk_delay"),
    )


def process_manifest(manifest_path: str | Path) -> list[Path]:
    """Adapt every response listed in a batch manifest.

    The manifest is JSON: either a bare list of items or
    ``{"schema_version": 1, "items": [...]}``. Each item names
    ``brir_in``, ``brir_out`` and a ``plan``; relative paths resolve
    against the manifest's directory. Every output WAV gets a sidecar
    ``<name>.json`` with the full adaptation provenance.
    """
    manifest_path = Path(manifest_path)
    try:
        raw = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ManifestError(f"cannot read manifest {manifest_path}: {err}") from err
    if isinstance(raw, dict):
        if raw.get("schema_version") not in (None, 1):
            raise ManifestError(
                f"unsupported manifest schema_version {raw.get('schema_version')!r}")
        items = raw.get("items")
    else:
        items = raw
    if not isinstance(items, list) or not items:
        raise ManifestError("manifest contains no items")

    base = manifest_path.parent
    written: list[Path] = []
    for i, item in enumerate(items):
        if not isinstance(item, dict):
            raise ManifestError(f"item {i} is not an object")
        missing = {"brir_in", "brir_out", "plan"} - item.keys()
        if missing:
            raise ManifestError(f"item {i} is missing {sorted(missing)}")
        in_path = base / item["brir_in"]
        out_path = base / item["brir_out"]
        if not in_path.exists():
            raise ManifestError(f"item {i}: input {in_path} does not exist")
        plan = _plan_from_doc(item["plan"], base)
        sig = wavio.read(in_path)
        h_prime = ImpulseResponse(
            sig, kind=IrKind.RAW_SIMULATED,
            direct_sound_skipped=bool(item.get("direct_sound_skipped", False)),
            source_id=item.get("source_id"), listener_id=item.get("listener_id"))
        adapted = adapt(h_prime, plan)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        wavio.write(out_path, adapted.data, encoding="float32")
        sidecar = out_path.with_suffix(out_path.suffix + ".json")
        sidecar.write_text(json.dumps({
            "input": str(in_path),
            "output": str(out_path),
            "source_id": adapted.source_id,
            "listener_id": adapted.listener_id,
            "direct_sound_skipped": adapted.direct_sound_skipped,
            "adaptation": adapted.adaptation,
        }, indent=1))
        written.append(out_path)
    return written
