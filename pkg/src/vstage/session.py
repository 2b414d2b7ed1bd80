"""Session configuration: who plays, who listens, and through what.

A session document wires M players (microphone channels at known
distances) to N listeners (headphone channel pairs) through named
scenarios, each holding one adapted binaural response per (player,
listener) pair. Loading validates the wiring completely and runs the
latency feasibility gate for every player, so an engine built from a
config that loaded cleanly cannot discover a structural problem later.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .adapt import FeasibilityReport, check_feasibility
from .calibration import SPEED_OF_SOUND
from .errors import InfeasibleLatencyError, ManifestError

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class DeviceSpec:
    backend: str
    latency_seconds: float
    buffer_samples: int | None = None


@dataclass(frozen=True)
class PlayerSpec:
    id: str
    mic_channel: int
    mic_distance: float
    directivity: Path | None = None


@dataclass(frozen=True)
class ListenerSpec:
    id: str
    headphone_channels: tuple[int, int]
    headphone_response: Path | None = None


@dataclass(frozen=True)
class BrirRef:
    player: str
    listener: str
    path: Path
    direct_sound_skipped: bool


@dataclass(frozen=True)
class ScenarioSpec:
    id: str
    brirs: tuple[BrirRef, ...]

    def cell(self, player: str, listener: str) -> BrirRef:
        for ref in self.brirs:
            if ref.player == player and ref.listener == listener:
                return ref
        raise KeyError((player, listener))


@dataclass(frozen=True)
class FeasibilityGeometry:
    min_distance: float
    receiver_height: float
    direct_path: float = 0.0


@dataclass(frozen=True)
class SessionConfig:
    sample_rate: float
    block_size: int
    speed_of_sound: float
    device: DeviceSpec
    players: tuple[PlayerSpec, ...]
    listeners: tuple[ListenerSpec, ...]
    scenarios: tuple[ScenarioSpec, ...]
    feasibility: FeasibilityGeometry
    feasibility_override: bool
    talkback_enabled: bool
    base_dir: Path
    feasibility_reports: dict[str, FeasibilityReport] = field(default_factory=dict)

    @property
    def n_input_channels(self) -> int:
        return max(p.mic_channel for p in self.players) + 1

    @property
    def n_output_channels(self) -> int:
        return max(max(l.headphone_channels) for l in self.listeners) + 1

    @property
    def scenario_ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.scenarios)

    def scenario(self, scenario_id: str) -> ScenarioSpec:
        for s in self.scenarios:
            if s.id == scenario_id:
                return s
        raise KeyError(scenario_id)

    def player(self, player_id: str) -> PlayerSpec:
        for p in self.players:
            if p.id == player_id:
                return p
        raise KeyError(player_id)


def _need(doc: dict, key: str, where: str):
    if key not in doc:
        raise ManifestError(f"{where} is missing required key '{key}'")
    return doc[key]


def _positive(value, what: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ManifestError(f"{what} must be a number, got {value!r}") from None
    if out <= 0.0:
        raise ManifestError(f"{what} must be positive, got {out:g}")
    return out


def _channel(value, what: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise ManifestError(f"{what} must be a non-negative integer, got {value!r}")
    return value


def _parse_players(items, base_dir: Path) -> tuple[PlayerSpec, ...]:
    if not isinstance(items, list) or not items:
        raise ManifestError("'players' must be a non-empty list")
    players = []
    for doc in items:
        if not isinstance(doc, dict):
            raise ManifestError("each player must be an object")
        pid = str(_need(doc, "id", "a player entry"))
        directivity = doc.get("directivity")
        players.append(PlayerSpec(
            id=pid,
            mic_channel=_channel(_need(doc, "mic_channel", f"player '{pid}'"),
                                 f"player '{pid}' mic_channel"),
            mic_distance=_positive(_need(doc, "mic_distance_m", f"player '{pid}'"),
                                   f"player '{pid}' mic_distance_m"),
            directivity=(base_dir / directivity) if directivity else None,
        ))
    ids = [p.id for p in players]
    if len(set(ids)) != len(ids):
        raise ManifestError("player ids must be unique")
    mics = [p.mic_channel for p in players]
    if len(set(mics)) != len(mics):
        raise ManifestError("two players share a microphone channel")
    return tuple(players)


def _parse_listeners(items, base_dir: Path) -> tuple[ListenerSpec, ...]:
    if not isinstance(items, list) or not items:
        raise ManifestError("'listeners' must be a non-empty list")
    listeners = []
    for doc in items:
        if not isinstance(doc, dict):
            raise ManifestError("each listener must be an object")
        lid = str(_need(doc, "id", "a listener entry"))
        chans = _need(doc, "headphone_channels", f"listener '{lid}'")
        if (not isinstance(chans, list) or len(chans) != 2
                or chans[0] == chans[1]):
            raise ManifestError(
                f"listener '{lid}' headphone_channels must be two distinct "
                "channel numbers")
        pair = (_channel(chans[0], f"listener '{lid}' left channel"),
                _channel(chans[1], f"listener '{lid}' right channel"))
        response = doc.get("headphone_response")
        listeners.append(ListenerSpec(
            id=lid, headphone_channels=pair,
            headphone_response=(base_dir / response) if response else None))
    ids = [l.id for l in listeners]
    if len(set(ids)) != len(ids):
        raise ManifestError("listener ids must be unique")
    used = [c for l in listeners for c in l.headphone_channels]
    if len(set(used)) != len(used):
        raise ManifestError("two listeners share a headphone channel")
    return tuple(listeners)


def _parse_scenarios(items, players, listeners, base_dir: Path,
                     ) -> tuple[ScenarioSpec, ...]:
    if not isinstance(items, list) or not items:
        raise ManifestError("'scenarios' must be a non-empty list")
    player_ids = {p.id for p in players}
    listener_ids = {l.id for l in listeners}
    scenarios = []
    for doc in items:
        if not isinstance(doc, dict):
            raise ManifestError("each scenario must be an object")
        sid = str(_need(doc, "id", "a scenario entry"))
        brir_docs = _need(doc, "brirs", f"scenario '{sid}'")
        if not isinstance(brir_docs, list):
            raise ManifestError(f"scenario '{sid}' brirs must be a list")
        refs = []
        seen = set()
        for b in brir_docs:
            if not isinstance(b, dict):
                raise ManifestError(f"scenario '{sid}': each brir must be an object")
            player = str(_need(b, "player", f"scenario '{sid}' brir"))
            listener = str(_need(b, "listener", f"scenario '{sid}' brir"))
            if player not in player_ids:
                raise ManifestError(
                    f"scenario '{sid}' references unknown player '{player}'")
            if listener not in listener_ids:
                raise ManifestError(
                    f"scenario '{sid}' references unknown listener '{listener}'")
            if (player, listener) in seen:
                raise ManifestError(
                    f"scenario '{sid}' has two responses for "
                    f"({player} -> {listener})")
            seen.add((player, listener))
            skipped = bool(b.get("direct_sound_skipped", False))
            if player == listener and not skipped:
                raise ManifestError(
                    f"scenario '{sid}': the self path ({player} -> {listener}) "
                    "must use a response with the direct sound skipped; the "
                    "player already hears their own instrument acoustically")
            refs.append(BrirRef(player=player, listener=listener,
                                path=base_dir / str(_need(b, "path", "a brir entry")),
                                direct_sound_skipped=skipped))
        missing = [(p, l) for p in sorted(player_ids) for l in sorted(listener_ids)
                   if (p, l) not in seen]
        if missing:
            raise ManifestError(
                f"scenario '{sid}' is missing responses for pairs: "
                + ", ".join(f"({p} -> {l})" for p, l in missing))
        scenarios.append(ScenarioSpec(id=sid, brirs=tuple(refs)))
    ids = [s.id for s in scenarios]
    if len(set(ids)) != len(ids):
        raise ManifestError("scenario ids must be unique")
    return tuple(scenarios)


def load_session_config(path, *, check_files: bool = True) -> SessionConfig:
    """Parse and validate a session document.

    Structural problems raise ManifestError. A latency that fails the
    feasibility gate for any player raises InfeasibleLatencyError unless
    the document records an explicit operator override; either way the
    per-player reports end up on the returned config.
    """
    path = Path(path)
    base_dir = path.parent
    try:
        doc = json.loads(path.read_text())
    except OSError as err:
        raise ManifestError(f"cannot read session config: {err}") from err
    except json.JSONDecodeError as err:
        raise ManifestError(f"session config is not valid JSON: {err}") from err
    if not isinstance(doc, dict):
        raise ManifestError("session config must be a JSON object")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ManifestError(f"unsupported session schema version {version!r}")

    sample_rate = _positive(_need(doc, "sample_rate", "session config"),
                            "sample_rate")
    block = _need(doc, "block_size", "session config")
    if not isinstance(block, int) or isinstance(block, bool) or block < 1:
        raise ManifestError(f"block_size must be a positive integer, got {block!r}")
    speed_of_sound = _positive(doc.get("speed_of_sound", SPEED_OF_SOUND),
                               "speed_of_sound")

    dev_doc = _need(doc, "device", "session config")
    if not isinstance(dev_doc, dict):
        raise ManifestError("'device' must be an object")
    latency = float(_need(dev_doc, "latency_seconds", "device"))
    if latency < 0.0:
        raise ManifestError(f"device latency must be >= 0, got {latency:g}")
    buffer_samples = dev_doc.get("buffer_samples")
    if buffer_samples is not None:
        buffer_samples = _channel(buffer_samples, "device buffer_samples")
    device = DeviceSpec(backend=str(_need(dev_doc, "backend", "device")),
                        latency_seconds=latency, buffer_samples=buffer_samples)

    players = _parse_players(_need(doc, "players", "session config"), base_dir)
    listeners = _parse_listeners(_need(doc, "listeners", "session config"),
                                 base_dir)
    scenarios = _parse_scenarios(_need(doc, "scenarios", "session config"),
                                 players, listeners, base_dir)

    geo_doc = _need(doc, "feasibility", "session config")
    if not isinstance(geo_doc, dict):
        raise ManifestError("'feasibility' must be an object")
    geometry = FeasibilityGeometry(
        min_distance=_positive(_need(geo_doc, "min_distance_m", "feasibility"),
                               "feasibility min_distance_m"),
        receiver_height=_positive(_need(geo_doc, "receiver_height_m", "feasibility"),
                                  "feasibility receiver_height_m"),
        direct_path=float(geo_doc.get("direct_path_m", 0.0)),
    )
    override = bool(doc.get("feasibility_override", False))

    talkback = doc.get("talkback", {})
    if not isinstance(talkback, dict):
        raise ManifestError("'talkback' must be an object")
    talkback_enabled = bool(talkback.get("enabled", False))

    if check_files:
        for scenario in scenarios:
            for ref in scenario.brirs:
                if not ref.path.exists():
                    raise ManifestError(
                        f"scenario '{scenario.id}': response file not found: "
                        f"{ref.path}")
        for p in players:
            if p.directivity is not None and not p.directivity.exists():
                raise ManifestError(
                    f"player '{p.id}': directivity file not found: "
                    f"{p.directivity}")

    reports = {
        p.id: check_feasibility(
            device.latency_seconds,
            min_distance=geometry.min_distance,
            receiver_height=geometry.receiver_height,
            mic_distance=p.mic_distance,
            direct_path=geometry.direct_path,
            speed_of_sound=speed_of_sound,
        )
        for p in players
    }
    failing = sorted(pid for pid, r in reports.items() if not r.feasible)
    if failing and not override:
        worst = min(
            min(reports[pid].hearing_others_margin,
                reports[pid].hearing_self_margin) for pid in failing)
        by_id = {p.id: p for p in players}
        shortfalls = [
            reports[pid].equivalent_distance - by_id[pid].mic_distance
            for pid in failing
            if not reports[pid].hearing_others_feasible]
        hint = ""
        if shortfalls:
            hint = (f" Hearing each other unmasked needs at least "
                    f"{max(shortfalls):.2f} m between players (configured "
                    f"{geometry.min_distance:g} m).")
        raise InfeasibleLatencyError(
            f"device latency {device.latency_seconds * 1e3:.1f} ms "
            f"(equivalent detour {reports[failing[0]].equivalent_distance:.2f} m) "
            f"is infeasible for players: {', '.join(failing)}; worst margin "
            f"{worst * 1e3:.2f} ms.{hint} "
            "Record feasibility_override to proceed anyway.",
            reports=reports)

    return SessionConfig(
        sample_rate=sample_rate,
        block_size=block,
        speed_of_sound=speed_of_sound,
        device=device,
        players=players,
        listeners=listeners,
        scenarios=scenarios,
        feasibility=geometry,
        feasibility_override=override,
        talkback_enabled=talkback_enabled,
        base_dir=base_dir,
        feasibility_reports=reports,
    )
