/**
 * Message types for the engine's WebSocket control surface.
 *
 * This is the only coupling between the panel and the engine: plain
 * JSON frames over one socket, documented in docs/control-protocol.md.
 * The panel refuses to run against a schema version it does not know.
 */

export const SCHEMA_VERSION = 1;

export interface EngineState {
  transport: "running" | "idle";
  active_scenario: string;
  pending_scenario: string | null;
  fading: boolean;
  scenario_ids: string[];
  sample_rate: number;
  block_size: number;
  /** Fraction of the block budget left after processing, 0..1. */
  headroom: number;
  talkback: boolean;
  blocks_processed: number;
  xruns: number;
  measured_latency_seconds: number | null;
  feasibility_override: string | null;
}

export interface MeterChannel {
  rms_db: number;
  peak_db: number;
  peak_hold_db: number;
}

export interface MeterFrame {
  blocks_processed: number;
  channels: MeterChannel[];
}

export interface LatencyResult {
  latency_seconds: number;
  latency_samples: number;
  buffer_samples: number;
  equivalent_distance_m: number;
  peak_to_noise_db: number;
  sample_rate: number;
}

export type RequestType =
  | "get_state"
  | "get_meters"
  | "switch_scenario"
  | "set_talkback"
  | "start"
  | "stop"
  | "log_marker"
  | "run_latency_check";

export interface Request {
  id: number;
  type: RequestType;
  params?: Record<string, unknown>;
}

export interface ReplyOk {
  id: number;
  type: "reply";
  ok: true;
  result: Record<string, unknown>;
}

export interface ReplyError {
  id: number;
  type: "reply";
  ok: false;
  error: { code: string; message: string };
}

export type Reply = ReplyOk | ReplyError;

/**
 * Server-pushed frame. `seq` is present only on events mirrored from
 * the engine log; it is strictly increasing per engine run, so a jump
 * means a missed entry and a drop below the last seen value means the
 * engine was restarted. Either way get_state resynchronizes.
 */
export interface EventFrame {
  type: "event";
  event: string;
  seq?: number;
  data: Record<string, unknown>;
}

export type ServerFrame = Reply | EventFrame;

export function parseServerFrame(raw: string): ServerFrame | null {
  let msg: unknown;
  try {
    msg = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof msg !== "object" || msg === null) return null;
  const t = (msg as { type?: unknown }).type;
  if (t === "reply" || t === "event") return msg as ServerFrame;
  return null;
}
