"""Real-time convolution matrix from player microphones to headphones.

Every (player, listener) pair of the active scenario streams through a
pair of partitioned convolvers, one per ear, and the listener's output
is the sum over players. Scenario switches land on block boundaries and
crossfade over 50 ms so they are safe mid-note. The processing path
reuses preallocated buffers; the control plane (meters, state, events)
reads snapshots without touching the stream.

The reference transport is a file-driven simulated device, which makes
offline rendering the same code path as live mixing: same blocks, same
convolver state machine, byte-for-byte repeatable.
"""

from __future__ import annotations

import json
import time
from math import ceil
from pathlib import Path

import numpy as np

from . import wavio
from .errors import BlockSizeError, ManifestError, SampleRateMismatchError
from .measure import LatencyMeasurement, measure_round_trip
from .session import SessionConfig
from .streaming import PartitionedConvolver

CROSSFADE_SECONDS = 0.05
RMS_WINDOW_SECONDS = 0.3
PEAK_HOLD_SECONDS = 1.5
METER_FLOOR_DB = -120.0


class ConvolutionMatrix:
    """One scenario's grid of stereo streaming convolvers."""

    def __init__(self, cells):
        # cells: (player_index, listener_index, left conv, right conv)
        self._cells = tuple(cells)

    def reset(self) -> None:
        for _, _, left, right in self._cells:
            left.reset()
            right.reset()

    def process(self, player_blocks: np.ndarray, out: np.ndarray) -> None:
        """Mix one block: out[n, ear] = sum over players of cell output."""
        out[:] = 0.0
        for m, n, left, right in self._cells:
            left.process_block(player_blocks[m], out=out[n, 0], accumulate=True)
            right.process_block(player_blocks[m], out=out[n, 1], accumulate=True)


class SimulatedDevice:
    """Array-backed block transport with an optional loopback delay.

    Dropouts model input underruns: ``dropouts[block] = channels`` marks
    those channels missing for that block, which the engine turns into
    silence plus an xrun event.
    """

    def __init__(self, inputs, block_size: int, sample_rate: float, *,
                 loopback_delay_samples: int = 0,
                 dropouts: dict[int, tuple[int, ...]] | None = None):
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim != 2:
            raise ValueError("device inputs must be a (channels, samples) array")
        b = int(block_size)
        n = inputs.shape[1]
        self.block_size = b
        self.sample_rate = float(sample_rate)
        self.n_blocks = ceil(n / b) if n else 0
        self._padded = np.zeros((inputs.shape[0], self.n_blocks * b))
        self._padded[:, :n] = inputs
        self._loopback_delay = int(loopback_delay_samples)
        self._dropouts = {int(k): tuple(v) for k, v in (dropouts or {}).items()}

    def blocks(self):
        b = self.block_size
        for i in range(self.n_blocks):
            yield (self._padded[:, i * b:(i + 1) * b].copy(),
                   self._dropouts.get(i, ()))

    def loopback(self, excitation) -> np.ndarray:
        x = np.asarray(excitation, dtype=np.float64).reshape(-1)
        return np.concatenate([np.zeros(self._loopback_delay), x,
                               np.zeros(256)])


def _db(value: float) -> float:
    if value <= 10.0 ** (METER_FLOOR_DB / 20.0):
        return METER_FLOOR_DB
    return max(20.0 * np.log10(value), METER_FLOOR_DB)


class Engine:
    """Session mixer: owns the scenario matrices and the streaming state.

    ``mix_block`` is the processing path and returns a reused buffer;
    callers that keep blocks must copy them. Everything else is control
    plane and may allocate freely.
    """

    def __init__(self, config: SessionConfig, *, log_path=None):
        self.config = config
        b = config.block_size
        fs = config.sample_rate
        self._n_in = config.n_input_channels
        self._n_out = config.n_output_channels
        n_players = len(config.players)
        n_listeners = len(config.listeners)

        player_index = {p.id: i for i, p in enumerate(config.players)}
        listener_index = {l.id: i for i, l in enumerate(config.listeners)}
        self._mic_index = np.array([p.mic_channel for p in config.players])
        self._hp_pairs = [l.headphone_channels for l in config.listeners]

        self._matrices: dict[str, ConvolutionMatrix] = {}
        for scenario in config.scenarios:
            cells = []
            for ref in scenario.brirs:
                sig = wavio.read(ref.path)
                if sig.sample_rate != fs:
                    raise SampleRateMismatchError(
                        f"{ref.path} is at {sig.sample_rate:g} Hz, session "
                        f"runs at {fs:g} Hz")
                if sig.n_channels != 2:
                    raise ManifestError(
                        f"{ref.path} has {sig.n_channels} channels; binaural "
                        "responses must be stereo")
                cells.append((player_index[ref.player],
                              listener_index[ref.listener],
                              PartitionedConvolver(sig.data[:, 0], b),
                              PartitionedConvolver(sig.data[:, 1], b)))
            self._matrices[scenario.id] = ConvolutionMatrix(cells)

        self._active = config.scenarios[0].id
        self._fade: dict | None = None
        self._pending: str | None = None
        n_fade = ceil(CROSSFADE_SECONDS * fs / b)
        ramp = np.arange(1, n_fade * b + 1) / (n_fade * b)
        self._fade_env = (0.5 - 0.5 * np.cos(np.pi * ramp)).reshape(n_fade, b)
        self._fade_blocks = n_fade

        self._player_blocks = np.zeros((n_players, b))
        self._mix = np.zeros((n_listeners, 2, b))
        self._mix_new = np.zeros((n_listeners, 2, b))
        self._gain_scratch = np.zeros(b)
        self._flat_out = np.zeros((self._n_out, b))
        self._sq = np.zeros((self._n_out, b))

        self._rms_blocks = max(1, ceil(RMS_WINDOW_SECONDS * fs / b))
        self._peak_blocks = max(1, ceil(PEAK_HOLD_SECONDS * fs / b))
        self._ms_ring = np.zeros((self._n_out, self._rms_blocks))
        self._peak_ring = np.zeros((self._n_out, self._peak_blocks))

        self._talkback = config.talkback_enabled
        self._talkback_routes = [
            (player_index[p.id],) + l.headphone_channels
            for p in config.players for l in config.listeners
            if p.id != l.id
        ]

        self._transport = "idle"
        self._blocks = 0
        self._xruns = 0
        self._headroom_ema: float | None = None
        self._last_latency: LatencyMeasurement | None = None

        self._log_path = Path(log_path) if log_path else None
        self._events: list[dict] = []
        self._seq = 0

    # ------------------------------------------------------------- control

    @property
    def events(self) -> list[dict]:
        return self._events

    def _log(self, event: str, **data) -> None:
        record = {"seq": self._seq, "time": time.monotonic(), "event": event}
        record.update(data)
        self._seq += 1
        self._events.append(record)
        if self._log_path is not None:
            with open(self._log_path, "a") as fh:
                fh.write(json.dumps(record) + "\n")

    def start(self) -> None:
        if self._transport == "running":
            return
        self._transport = "running"
        self._log("transport", state="running")

    def stop(self) -> None:
        if self._transport == "idle":
            return
        self._transport = "idle"
        self._log("transport", state="idle")

    def switch_scenario(self, scenario_id: str) -> None:
        if scenario_id not in self._matrices:
            raise ValueError(f"unknown scenario '{scenario_id}'")
        if self._fade is not None:
            if scenario_id == self._fade["to"]:
                self._log("scenario_switch", to=scenario_id, noop=True)
            else:
                self._pending = scenario_id
                self._log("scenario_switch", to=scenario_id, deferred=True)
            return
        if scenario_id == self._active:
            self._log("scenario_switch", to=scenario_id, noop=True)
            return
        if self._transport == "idle":
            self._matrices[scenario_id].reset()
            self._log("scenario_switch", to=scenario_id,
                      from_=self._active, immediate=True)
            self._active = scenario_id
            return
        self._matrices[scenario_id].reset()
        self._fade = {"to": scenario_id, "block": 0}
        self._log("scenario_switch", to=scenario_id, from_=self._active,
                  fade_blocks=self._fade_blocks)

    def set_talkback(self, enabled: bool) -> None:
        self._talkback = bool(enabled)
        self._log("talkback", enabled=self._talkback)

    def log_marker(self, text: str) -> None:
        self._log("marker", text=str(text))

    def get_state(self) -> dict:
        return {
            "transport": self._transport,
            "active_scenario": self._active,
            "pending_scenario": self._pending,
            "fading": self._fade is not None,
            "scenario_ids": list(self.config.scenario_ids),
            "sample_rate": self.config.sample_rate,
            "block_size": self.config.block_size,
            "headroom": (1.0 if self._headroom_ema is None else
                         1.0 - self._headroom_ema /
                         (self.config.block_size / self.config.sample_rate)),
            "talkback": self._talkback,
            "blocks_processed": self._blocks,
            "xruns": self._xruns,
            "measured_latency_seconds": (
                None if self._last_latency is None
                else self._last_latency.latency_seconds),
            "feasibility_override": self.config.feasibility_override,
        }

    def get_meters(self) -> dict:
        denom = self._rms_blocks * self.config.block_size
        rms = np.sqrt(self._ms_ring.sum(axis=1) / denom)
        peak_hold = self._peak_ring.max(axis=1)
        last = (self._blocks - 1) % self._peak_blocks if self._blocks else 0
        peak = self._peak_ring[:, last]
        return {
            "blocks_processed": self._blocks,
            "channels": [
                {"rms_db": _db(rms[ch]), "peak_db": _db(peak[ch]),
                 "peak_hold_db": _db(peak_hold[ch])}
                for ch in range(self._n_out)
            ],
        }

    def run_latency_check(self, device, **sweep_kwargs) -> LatencyMeasurement:
        measurement = measure_round_trip(
            device.loopback, self.config.sample_rate,
            buffer_samples=self.config.device.buffer_samples,
            speed_of_sound=self.config.speed_of_sound, **sweep_kwargs)
        self._last_latency = measurement
        self._log("latency_check", **measurement.as_dict())
        return measurement

    # ---------------------------------------------------------- processing

    def mix_block(self, rows) -> np.ndarray:
        """Mix one block of device input rows into all headphone channels.

        Returns an internal buffer that the next call overwrites.
        """
        started = time.perf_counter()
        if self._transport != "running":
            raise RuntimeError("engine is not running; call start() first")
        rows = np.asarray(rows, dtype=np.float64)
        b = self.config.block_size
        if rows.shape != (self._n_in, b):
            raise BlockSizeError(
                f"expected input of shape ({self._n_in}, {b}), "
                f"got {rows.shape}")
        np.take(rows, self._mic_index, axis=0, out=self._player_blocks)

        self._matrices[self._active].process(self._player_blocks, self._mix)
        if self._fade is not None:
            target = self._fade["to"]
            j = self._fade["block"]
            self._matrices[target].process(self._player_blocks, self._mix_new)
            gain_new = self._fade_env[j]
            np.subtract(1.0, gain_new, out=self._gain_scratch)
            self._mix *= self._gain_scratch
            self._mix_new *= gain_new
            self._mix += self._mix_new
            self._fade["block"] = j + 1
            if j + 1 == self._fade_blocks:
                self._active = target
                self._fade = None
                self._log("scenario_active", id=target)
                if self._pending is not None:
                    follow = self._pending
                    self._pending = None
                    if follow != self._active:
                        self._matrices[follow].reset()
                        self._fade = {"to": follow, "block": 0}
                        self._log("scenario_switch", to=follow,
                                  from_=self._active,
                                  fade_blocks=self._fade_blocks)

        self._flat_out[:] = 0.0
        for n, (left, right) in enumerate(self._hp_pairs):
            self._flat_out[left] = self._mix[n, 0]
            self._flat_out[right] = self._mix[n, 1]
        if self._talkback:
            for m, left, right in self._talkback_routes:
                self._flat_out[left] += self._player_blocks[m]
                self._flat_out[right] += self._player_blocks[m]

        np.square(self._flat_out, out=self._sq)
        np.sum(self._sq, axis=1, out=self._ms_ring[:, self._blocks % self._rms_blocks])
        np.abs(self._flat_out, out=self._sq)
        np.max(self._sq, axis=1, out=self._peak_ring[:, self._blocks % self._peak_blocks])
        self._blocks += 1

        elapsed = time.perf_counter() - started
        if self._headroom_ema is None:
            self._headroom_ema = elapsed
        else:
            self._headroom_ema += 0.1 * (elapsed - self._headroom_ema)
        return self._flat_out

    def _reset_streaming(self) -> None:
        for matrix in self._matrices.values():
            matrix.reset()
        self._fade = None
        self._pending = None
        self._ms_ring[:] = 0.0
        self._peak_ring[:] = 0.0
        self._blocks = 0
        self._headroom_ema = None

    def run(self, device: SimulatedDevice) -> np.ndarray:
        """Pull every block from the device through mix_block.

        Missing input channels become silence and an xrun event, matching
        how a live backend should behave on an input underrun.
        """
        if self._transport == "running":
            raise RuntimeError("engine is already running")
        b = self.config.block_size
        out = np.zeros((self._n_out, device.n_blocks * b))
        self.start()
        for i, (data, missing) in enumerate(device.blocks()):
            if missing:
                for ch in missing:
                    data[ch] = 0.0
                self._xruns += 1
                self._log("xrun", block=i, channels=list(missing))
            out[:, i * b:(i + 1) * b] = self.mix_block(data)
        self.stop()
        return out

    def render(self, inputs) -> np.ndarray:
        """Offline render: same code path as live, repeatable bit for bit."""
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim != 2 or inputs.shape[0] != self._n_in:
            raise ValueError(
                f"render needs ({self._n_in}, n) input rows, got "
                f"{inputs.shape}")
        self._reset_streaming()
        device = SimulatedDevice(inputs, self.config.block_size,
                                 self.config.sample_rate)
        out = self.run(device)
        return out[:, :inputs.shape[1]]
