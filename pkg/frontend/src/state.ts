/**
 * Server-confirmed panel state.
 *
 * The store only ever holds what the engine said: full snapshots from
 * hello/get_state, the fields a reply carries, and the fields an
 * engine-log event carries. Nothing is written optimistically, so the
 * panel can never disagree with the engine about which scenario is
 * live. A reload reconstructs everything from one snapshot.
 */
import { ConnectionStatus } from "./client.js";
import { EngineState, EventFrame, MeterFrame } from "./protocol.js";

export class PanelStore {
  engine: EngineState | null = null;
  meters: MeterFrame | null = null;
  connection: ConnectionStatus = "closed";
  /** Request types currently in flight, for pending indicators. */
  pendingOps = new Set<string>();
  lastMarker: string | null = null;
  lastHeartbeat: number | null = null;

  private listeners = new Set<() => void>();

  subscribe(fn: () => void): () => void {
    this.listeners.add(fn);
    return () => this.listeners.delete(fn);
  }

  private touch(): void {
    for (const fn of this.listeners) fn();
  }

  setConnection(status: ConnectionStatus): void {
    this.connection = status;
    this.touch();
  }

  opStarted(type: string): void {
    this.pendingOps.add(type);
    this.touch();
  }

  opFinished(type: string): void {
    this.pendingOps.delete(type);
    this.touch();
  }

  applySnapshot(state: EngineState): void {
    this.engine = state;
    this.touch();
  }

  applyMeters(frame: MeterFrame): void {
    this.meters = frame;
    if (this.engine !== null) {
      this.engine.blocks_processed = frame.blocks_processed;
    }
    this.touch();
  }

  /** Merge the confirmed fields a successful reply carries. */
  applyReply(type: string, result: Record<string, unknown>): void {
    switch (type) {
      case "get_state":
        this.applySnapshot(result as unknown as EngineState);
        return;
      case "get_meters":
        this.applyMeters(result as unknown as MeterFrame);
        return;
    }
    if (this.engine === null) return;
    switch (type) {
      case "switch_scenario":
        this.engine.active_scenario = result.active_scenario as string;
        this.engine.pending_scenario = result.pending_scenario as
          | string
          | null;
        this.engine.fading = result.fading as boolean;
        break;
      case "set_talkback":
        this.engine.talkback = result.talkback as boolean;
        break;
      case "start":
      case "stop":
        this.engine.transport = result.transport as EngineState["transport"];
        break;
      case "run_latency_check":
        this.engine.measured_latency_seconds =
          result.latency_seconds as number;
        break;
      default:
        return;
    }
    this.touch();
  }

  /** Mirror an engine-log event; applies only the fields it states. */
  applyEngineEvent(frame: EventFrame): void {
    const d = frame.data;
    if (frame.event === "heartbeat") {
      this.lastHeartbeat = d.time as number;
      this.touch();
      return;
    }
    if (this.engine === null) return;
    switch (frame.event) {
      case "transport":
        this.engine.transport = d.state as EngineState["transport"];
        break;
      case "scenario_switch":
        if (d.noop) return;
        if (d.deferred) {
          this.engine.pending_scenario = d.to as string;
        } else if (d.immediate) {
          // idle engine: no fade, the swap already happened
          this.engine.active_scenario = d.to as string;
        } else {
          // a fade started; any queued scenario was consumed to start it
          this.engine.fading = true;
          this.engine.pending_scenario = null;
        }
        break;
      case "scenario_active":
        this.engine.active_scenario = d.id as string;
        this.engine.fading = false;
        break;
      case "talkback":
        this.engine.talkback = d.enabled as boolean;
        break;
      case "marker":
        this.lastMarker = d.text as string;
        break;
      case "xrun":
        this.engine.xruns += 1;
        break;
      case "latency_check":
        this.engine.measured_latency_seconds = d.latency_seconds as number;
        break;
      default:
        return;
    }
    this.touch();
  }
}
