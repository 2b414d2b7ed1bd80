"""Command line for the batch workflows and the live server.

Subcommands mirror the stages of preparing and running a virtual
stage: ``calibrate`` synthesizes playback correction filters,
``adapt`` retimes raw simulated responses, ``validate`` checks a
session document, ``render`` produces offline headphone feeds,
``analyze`` extracts room metrics from a response, ``measure-latency``
times a loopback, and ``serve`` runs the live engine with its control
endpoint.

Exit codes: 0 on success, 2 for validation problems (bad manifests,
unreadable files, mismatched rates), 3 when a latency budget cannot be
met, 4 when a calibration comes out with unreliable bands and
``--allow-unreliable`` was not given.
"""

import argparse
import json
import random
import sys
import threading
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import control, wavio
from .adapt import process_manifest
from .analysis import (direct_sound_onset, hilbert_envelope, stage_support,
                       reverberation_time)
from .calibration import (DEFAULT_FIR_LENGTH, DEFAULT_SAMPLE_RATE,
                          SPEED_OF_SOUND, CalibrationSpec, save_calibration,
                          synthesize_calibration)
from .engine import Engine, SimulatedDevice
from .errors import (InfeasibleLatencyError, InfeasibleShiftError,
                     InsufficientDecayError, ManifestError,
                     SampleRateMismatchError, VstageError)
from .freqresponse import FrequencyResponse, flat_response, read_response_csv
from .measure import measure_round_trip
from .session import load_session_config
from .signals import SampledSignal

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_UNRELIABLE = 4


def _emit(args, doc: dict, lines: list[str]) -> None:
    if getattr(args, "json", False):
        print(json.dumps(doc, indent=2))
    else:
        for line in lines:
            print(line)


def _read_json_doc(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as err:
        raise ManifestError(f"cannot read {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ManifestError(f"{path} is not valid JSON: {err}") from err
    if not isinstance(doc, dict):
        raise ManifestError(f"{path} must hold a JSON object")
    return doc


# ---------------------------------------------------------------------------
# calibrate


def _response_from_item(value, base: Path, reference: str, idx: int):
    """Turn a manifest response entry into a FrequencyResponse.

    Accepts the literal "flat", a CSV path relative to the manifest,
    ``{"gain_db": g}`` for a flat offset, or an inline curve
    ``{"frequencies_hz": [...], "magnitude_db": [...]}``.
    """
    if value is None or value == "flat":
        return flat_response(reference)
    if isinstance(value, str):
        path = base / value
        if not path.exists():
            raise ManifestError(f"item {idx}: response file not found: {path}")
        try:
            return read_response_csv(path)
        except ValueError as err:
            raise ManifestError(f"item {idx}: {err}") from err
    if isinstance(value, dict):
        if "gain_db" in value:
            return flat_response(
                reference, 10.0 ** (float(value["gain_db"]) / 20.0))
        if "frequencies_hz" in value and "magnitude_db" in value:
            freqs = np.asarray(value["frequencies_hz"], dtype=float)
            mags = 10.0 ** (np.asarray(value["magnitude_db"], dtype=float)
                            / 20.0)
            try:
                return FrequencyResponse(freqs, mags, reference,
                                         magnitude_only=True)
            except ValueError as err:
                raise ManifestError(f"item {idx}: {err}") from err
    raise ManifestError(
        f"item {idx}: cannot interpret response description {value!r}")


def cmd_calibrate(args) -> int:
    doc = _read_json_doc(args.manifest)
    if doc.get("schema_version", 1) != 1:
        raise ManifestError(
            f"unsupported schema_version {doc.get('schema_version')!r}")
    items = doc.get("items")
    if not isinstance(items, list) or not items:
        raise ManifestError(
            "calibration manifest needs a non-empty 'items' list")
    base = Path(args.manifest).parent
    out_dir = Path(args.out) if args.out else base
    sample_rate = float(doc.get("sample_rate", DEFAULT_SAMPLE_RATE))
    fir_length = int(doc.get("fir_length", DEFAULT_FIR_LENGTH))
    smoothing = int(doc.get("smoothing_fraction", 12))
    speed = float(doc.get("speed_of_sound", SPEED_OF_SOUND))

    built = []
    for i, item in enumerate(items):
        if not isinstance(item, dict):
            raise ManifestError(f"item {i} is not an object")
        if "mic_distance_m" not in item:
            raise ManifestError(f"item {i} is missing 'mic_distance_m'")
        try:
            spec = CalibrationSpec(
                mic_distance=float(item["mic_distance_m"]),
                mic_response=_response_from_item(
                    item.get("mic_response", "flat"), base, "dfs_per_pa", i),
                headphone_response=_response_from_item(
                    item.get("headphone_response", "flat"), base,
                    "pa_per_dfs", i),
                gamma_mic_direction=item.get("gamma_mic_direction", 1.0),
                distance_error_factor=item.get("distance_error_factor", 1.0),
                speed_of_sound=speed)
        except ValueError as err:
            raise ManifestError(f"item {i}: {err}") from err
        filt = synthesize_calibration(
            spec, sample_rate=sample_rate, fir_length=fir_length,
            smoothing_fraction=int(item.get("smoothing_fraction", smoothing)),
            source_id=item.get("source_id"),
            listener_id=item.get("listener_id"))
        stem = item.get("out") or f"calibration_{i}"
        built.append((stem, filt))

    unreliable = any(filt.unreliable_bands for _, filt in built)
    report = [dict(filt.describe(), out=stem) for stem, filt in built]
    if unreliable and not args.allow_unreliable:
        _emit(args, {"command": "calibrate", "written": False,
                     "items": report}, [])
        for stem, filt in built:
            for lo, hi in filt.unreliable_bands:
                print(f"{stem}: unreliable {lo:.0f}-{hi:.0f} Hz",
                      file=sys.stderr)
        print("refusing to write filters with unreliable bands; "
              "pass --allow-unreliable to accept them", file=sys.stderr)
        return EXIT_UNRELIABLE

    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for entry, (stem, filt) in zip(report, built):
        json_path = save_calibration(filt, out_dir / stem)
        entry["files"] = {"fir": str(json_path.with_suffix(".wav")),
                          "meta": str(json_path)}
        gain = entry.get("distance_gain_db", 0.0)
        lines.append(f"{entry['source_id']} -> {entry['listener_id']}: "
                     f"wrote {json_path.with_suffix('.wav').name}, "
                     f"distance gain {gain:+.2f} dB")
        for lo, hi in filt.unreliable_bands:
            lines.append(f"  kept unreliable band {lo:.0f}-{hi:.0f} Hz")
    _emit(args, {"command": "calibrate", "written": True,
                 "out_dir": str(out_dir), "items": report}, lines)
    return EXIT_OK


# ---------------------------------------------------------------------------
# adapt


def cmd_adapt(args) -> int:
    written = process_manifest(args.manifest)
    _emit(args, {"command": "adapt", "written": [str(p) for p in written]},
          [f"wrote {p}" for p in written])
    return EXIT_OK


# ---------------------------------------------------------------------------
# validate


def cmd_validate(args) -> int:
    config = load_session_config(args.config)
    feasibility = {pid: asdict(r)
                   for pid, r in config.feasibility_reports.items()}
    doc = {
        "command": "validate",
        "ok": True,
        "sample_rate": config.sample_rate,
        "block_size": config.block_size,
        "players": [p.id for p in config.players],
        "listeners": [l.id for l in config.listeners],
        "scenarios": list(config.scenario_ids),
        "feasibility": feasibility,
        "feasibility_override": config.feasibility_override,
    }
    lines = [f"ok: {len(config.players)} players, "
             f"{len(config.listeners)} listeners, "
             f"{len(config.scenarios)} scenarios at "
             f"{config.sample_rate:g} Hz / {config.block_size} samples"]
    for pid, r in config.feasibility_reports.items():
        state = "ok" if r.feasible else "INFEASIBLE (override active)"
        lines.append(
            f"  {pid}: latency {r.interface_latency * 1e3:.1f} ms = "
            f"{r.equivalent_distance:.2f} m, margins "
            f"others {r.hearing_others_margin * 1e3:+.2f} ms / "
            f"self {r.hearing_self_margin * 1e3:+.2f} ms [{state}]")
    _emit(args, doc, lines)
    return EXIT_OK


# ---------------------------------------------------------------------------
# render


def _input_matrix(path, expected_rate: float, needed_channels: int):
    sig = wavio.read(path)
    if float(sig.sample_rate) != float(expected_rate):
        raise SampleRateMismatchError(
            f"inputs are at {sig.sample_rate:g} Hz but the session runs at "
            f"{expected_rate:g} Hz")
    data = np.asarray(sig.data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    if data.shape[1] < needed_channels:
        raise ManifestError(
            f"inputs provide {data.shape[1]} channels but the session's "
            f"mic channels need {needed_channels}")
    return data.T[:needed_channels]


def cmd_render(args) -> int:
    config = load_session_config(args.config)
    if args.scenario is not None and args.scenario not in config.scenario_ids:
        raise ManifestError(
            f"unknown scenario '{args.scenario}'; the session defines "
            f"{', '.join(config.scenario_ids)}")
    inputs = _input_matrix(args.inputs, config.sample_rate,
                           config.n_input_channels)
    engine = Engine(config)
    if args.scenario is not None:
        engine.switch_scenario(args.scenario)
    out = engine.render(inputs)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for listener in config.listeners:
        lch, rch = listener.headphone_channels
        stereo = np.stack([out[lch], out[rch]], axis=1)
        path = out_dir / f"{listener.id}.wav"
        wavio.write(path, SampledSignal(stereo, config.sample_rate),
                    encoding="float32")
        files[listener.id] = str(path)
    doc = {
        "command": "render",
        "scenario": engine.get_state()["active_scenario"],
        "samples": int(inputs.shape[1]),
        "files": files,
    }
    _emit(args, doc, [f"{lid}: {p}" for lid, p in files.items()])
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze


def cmd_analyze(args) -> int:
    sig = wavio.read(args.response)
    data = np.asarray(sig.data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    n_channels = data.shape[1]
    mono = SampledSignal(data.mean(axis=1), sig.sample_rate)

    notes = []
    try:
        onset = direct_sound_onset(mono.data)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION

    rt = None
    try:
        rt = float(reverberation_time(mono))
    except (InsufficientDecayError, ValueError) as err:
        notes.append(f"no usable decay for a reverberation time: {err}")

    stage = None
    try:
        stage = asdict(stage_support(mono))
    except ValueError as err:
        notes.append(f"stage support unavailable: {err}")

    env = hilbert_envelope(mono)
    hop = max(1, int(round(sig.sample_rate / 1000.0)))
    env_db = env.envelope_db()[::hop, 0]
    times = env.time[::hop]

    doc = {
        "command": "analyze",
        "file": str(args.response),
        "sample_rate": float(sig.sample_rate),
        "duration_s": data.shape[0] / float(sig.sample_rate),
        "channels_averaged": n_channels,
        "direct_onset_s": onset / float(sig.sample_rate),
        "reverberation_time_s": rt,
        "stage_support": stage,
        "envelope_band_hz": list(env.band_hz),
        "notes": notes,
    }

    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.json").write_text(json.dumps(doc, indent=2))
        rows = "\n".join(f"{t:.6f},{db:.2f}"
                         for t, db in zip(times, env_db))
        (out_dir / "envelope.csv").write_text(
            "time_s,envelope_db\n" + rows + "\n")

    lines = [f"{args.response}: {doc['duration_s']:.3f} s at "
             f"{sig.sample_rate:g} Hz, direct sound at "
             f"{doc['direct_onset_s'] * 1e3:.2f} ms"]
    if rt is not None:
        lines.append(f"reverberation time {rt:.2f} s")
    if stage is not None:
        lines.append(f"stage support early {stage['st_early_db']:.2f} dB, "
                     f"late {stage['st_late_db']:.2f} dB")
    lines.extend(notes)
    _emit(args, doc, lines)
    return EXIT_OK


# ---------------------------------------------------------------------------
# measure-latency


def cmd_measure_latency(args) -> int:
    if not args.simulated_device:
        print("error: only the simulated loopback is wired up; pass "
              "--simulated-device to use it", file=sys.stderr)
        return EXIT_VALIDATION
    rate = float(args.sample_rate)
    block = int(args.block_size)
    device = SimulatedDevice(
        np.zeros((1, block)), block, rate,
        loopback_delay_samples=int(args.loopback_delay_samples))
    measurement = measure_round_trip(device.loopback, rate,
                                     duration=float(args.duration),
                                     buffer_samples=block)
    doc = {"command": "measure-latency", **measurement.as_dict()}
    lines = [
        f"round trip {measurement.latency_seconds * 1e3:.3f} ms "
        f"({measurement.latency_samples} samples at {rate:g} Hz)",
        f"equivalent distance {measurement.equivalent_distance_m:.3f} m",
        f"peak-to-noise {measurement.peak_to_noise_db:.1f} dB",
    ]
    _emit(args, doc, lines)
    return EXIT_OK


# ---------------------------------------------------------------------------
# serve


def _audio_pump(engine: Engine, stop: threading.Event) -> None:
    """Feed the engine real-time blocks while its transport runs.

    Each mic channel carries a quiet tone at its own pitch, so meters
    move, crossfades complete, and a scenario switch is visible on the
    listener feeds without any hardware attached. Paced best-effort:
    a block that takes longer than its period just delays the next.
    """
    b = engine.config.block_size
    rate = engine.config.sample_rate
    period = b / rate
    n_in = engine.config.n_input_channels
    t = np.arange(b) / rate
    block = np.zeros((n_in, b))
    elapsed = 0.0
    deadline = time.perf_counter()
    while not stop.is_set():
        deadline += period
        if engine.get_state()["transport"] == "running":
            for ch in range(n_in):
                freq = 220.0 * (ch + 1)
                block[ch] = 0.05 * np.sin(2 * np.pi * freq * (t + elapsed))
            elapsed += period
            engine.mix_block(block)
        wait = deadline - time.perf_counter()
        if wait > 0:
            time.sleep(wait)
        else:
            deadline = time.perf_counter()


def cmd_serve(args) -> int:
    config = load_session_config(args.config)
    if args.seed is not None:
        order = list(config.scenarios)
        random.Random(args.seed).shuffle(order)
        config = replace(config, scenarios=tuple(order))
    engine = Engine(config, log_path=args.log)

    device = None
    if args.simulated_device:
        delay = int(round(config.device.latency_seconds * config.sample_rate))
        device = SimulatedDevice(
            np.zeros((config.n_input_channels, config.block_size)),
            config.block_size, config.sample_rate,
            loopback_delay_samples=delay)

    static = Path(args.static) if args.static else None
    if static is None and Path("frontend/dist").is_dir():
        static = Path("frontend/dist")

    pump = None
    stop = threading.Event()
    if config.device.backend == "simulated":
        pump = threading.Thread(target=_audio_pump, args=(engine, stop),
                                daemon=True)
        pump.start()

    print(f"serving scenarios {', '.join(config.scenario_ids)} on "
          f"ws://{args.host}:{args.port}/ws")
    try:
        control.serve(engine, host=args.host, port=args.port,
                      static_dir=static, latency_device=device)
    finally:
        stop.set()
        if pump is not None:
            pump.join(timeout=2.0)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_json_flag(parser) -> None:
    parser.add_argument("--json", action="store_true",
                        help="emit a machine-readable JSON report on stdout")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vstage",
        description="virtual stage auralization: calibration, response "
                    "preparation, offline rendering and the live engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate",
                       help="synthesize correction filters from a manifest")
    p.add_argument("manifest", help="JSON manifest of calibration items")
    p.add_argument("--out", help="directory for the filter files "
                                 "(default: next to the manifest)")
    p.add_argument("--allow-unreliable", action="store_true",
                   help="write filters even when bands were flagged "
                        "unreliable")
    _add_json_flag(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("adapt",
                       help="retime and calibrate raw simulated responses")
    p.add_argument("manifest", help="JSON manifest of responses and plans")
    _add_json_flag(p)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("validate", help="check a session document")
    p.add_argument("--config", required=True, help="session JSON")
    _add_json_flag(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("render",
                       help="render headphone feeds offline from a multichannel "
                            "input recording")
    p.add_argument("--config", required=True, help="session JSON")
    p.add_argument("--inputs", required=True,
                   help="WAV whose channels are the session's mic channels")
    p.add_argument("--out", required=True, help="directory for the per-"
                                                "listener stereo WAVs")
    p.add_argument("--scenario", help="scenario to render "
                                      "(default: the first in the session)")
    _add_json_flag(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("analyze",
                       help="room metrics and envelope from a response WAV")
    p.add_argument("response", help="impulse response WAV")
    p.add_argument("--out", help="directory for metrics.json and "
                                 "envelope.csv")
    _add_json_flag(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("measure-latency",
                       help="measure a round trip with the sweep method")
    p.add_argument("--simulated-device", action="store_true",
                   help="use the built-in loopback device")
    p.add_argument("--loopback-delay-samples", type=int, default=0,
                   help="delay the simulated loopback injects")
    p.add_argument("--sample-rate", type=float, default=48000.0)
    p.add_argument("--block-size", type=int, default=256)
    p.add_argument("--duration", type=float, default=1.0,
                   help="sweep length in seconds")
    _add_json_flag(p)
    p.set_defaults(func=cmd_measure_latency)

    p = sub.add_parser("serve", help="run the live engine and its control "
                                     "endpoint")
    p.add_argument("--config", required=True, help="session JSON")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--static", help="directory with the control panel build "
                                    "(default: frontend/dist if present)")
    p.add_argument("--simulated-device", action="store_true",
                   help="expose a loopback so latency checks work without "
                        "hardware")
    p.add_argument("--seed", type=int,
                   help="shuffle the scenario presentation order "
                        "deterministically")
    p.add_argument("--log", help="JSON-lines event log path")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InfeasibleLatencyError, InfeasibleShiftError) as err:
        print(f"infeasible: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (VstageError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    raise SystemExit(main())
