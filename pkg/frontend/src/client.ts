/**
 * WebSocket control client: request/reply correlation, server event
 * dispatch, and reconnect with doubling backoff.
 *
 * The socket constructor is injectable so tests can drive the client
 * against a scripted fake instead of a live server.
 */
import {
  EngineState,
  EventFrame,
  MeterFrame,
  RequestType,
  SCHEMA_VERSION,
  parseServerFrame,
} from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export type ConnectionStatus =
  | "connecting"
  | "connected"
  | "reconnecting"
  | "closed";

/** A request the server answered with ok: false. */
export class RequestError extends Error {
  constructor(
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "RequestError";
  }
}

export interface ClientHooks {
  /** First frame of every (re)connection; full state snapshot. */
  onHello?(state: EngineState): void;
  /** Every pushed event, including hello/meters/heartbeat. */
  onEvent?(frame: EventFrame): void;
  onMeters?(frame: MeterFrame): void;
  onStatus?(status: ConnectionStatus): void;
  /** Engine-log seq jumped or restarted; caller should get_state. */
  onResync?(reason: "gap" | "restart"): void;
  /** Server announced a protocol version we do not speak. */
  onSchemaMismatch?(version: unknown): void;
}

interface Pending {
  resolve(result: Record<string, unknown>): void;
  reject(err: Error): void;
}

export interface ClientOptions {
  makeSocket?: SocketFactory;
  /** First reconnect delay; doubles per attempt. */
  baseDelayMs?: number;
  maxDelayMs?: number;
}

export class ControlClient {
  hooks: ClientHooks = {};

  private readonly makeSocket: SocketFactory;
  private readonly baseDelayMs: number;
  private readonly maxDelayMs: number;

  private socket: SocketLike | null = null;
  private open = false;
  private closedByUs = false;
  private attempt = 0;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private nextId = 1;
  private pending = new Map<number, Pending>();
  private lastSeq: number | null = null;
  private _status: ConnectionStatus = "closed";

  constructor(
    private readonly url: string,
    opts: ClientOptions = {},
  ) {
    this.makeSocket =
      opts.makeSocket ??
      ((u) => new WebSocket(u) as unknown as SocketLike);
    this.baseDelayMs = opts.baseDelayMs ?? 500;
    this.maxDelayMs = opts.maxDelayMs ?? 8000;
  }

  get status(): ConnectionStatus {
    return this._status;
  }

  connect(): void {
    if (this.socket !== null) return;
    this.closedByUs = false;
    this.setStatus(this.attempt > 0 ? "reconnecting" : "connecting");
    const sock = this.makeSocket(this.url);
    this.socket = sock;
    sock.onopen = () => {
      this.open = true;
    };
    sock.onmessage = (ev) => this.handleFrame(ev.data);
    sock.onerror = () => {
      // the close handler does the cleanup; browsers fire both
    };
    sock.onclose = () => this.handleClose();
  }

  /** Intentional shutdown; no reconnect. */
  close(): void {
    this.closedByUs = true;
    if (this.reconnectTimer !== null) {
      clearTimeout(this.reconnectTimer);
      this.reconnectTimer = null;
    }
    this.socket?.close();
    if (this.socket === null) this.setStatus("closed");
  }

  request(
    type: RequestType,
    params?: Record<string, unknown>,
  ): Promise<Record<string, unknown>> {
    if (!this.open || this.socket === null) {
      return Promise.reject(new RequestError("disconnected", "not connected"));
    }
    const id = this.nextId++;
    const frame = params === undefined ? { id, type } : { id, type, params };
    return new Promise((resolve, reject) => {
      this.pending.set(id, { resolve, reject });
      this.socket!.send(JSON.stringify(frame));
    });
  }

  private handleFrame(raw: string): void {
    const frame = parseServerFrame(raw);
    if (frame === null) return;

    if (frame.type === "reply") {
      const entry = this.pending.get(frame.id);
      if (entry === undefined) return;
      this.pending.delete(frame.id);
      if (frame.ok) entry.resolve(frame.result);
      else entry.reject(new RequestError(frame.error.code, frame.error.message));
      return;
    }

    if (frame.seq !== undefined) {
      if (this.lastSeq !== null && frame.seq !== this.lastSeq + 1) {
        this.hooks.onResync?.(frame.seq > this.lastSeq ? "gap" : "restart");
      }
      this.lastSeq = frame.seq;
    }

    if (frame.event === "hello") {
      const version = frame.data.schema_version;
      if (version !== SCHEMA_VERSION) {
        // A server we do not understand: stop for good rather than
        // render state we would misinterpret.
        this.hooks.onSchemaMismatch?.(version);
        this.close();
        return;
      }
      this.attempt = 0;
      this.lastSeq = null;
      this.setStatus("connected");
      this.hooks.onHello?.(frame.data.state as unknown as EngineState);
    } else if (frame.event === "meters") {
      this.hooks.onMeters?.(frame.data as unknown as MeterFrame);
    }
    this.hooks.onEvent?.(frame);
  }

  private handleClose(): void {
    this.open = false;
    this.socket = null;
    const dropped = new RequestError("disconnected", "connection lost");
    for (const entry of this.pending.values()) entry.reject(dropped);
    this.pending.clear();

    if (this.closedByUs) {
      this.setStatus("closed");
      return;
    }
    const delay = Math.min(
      this.baseDelayMs * 2 ** this.attempt,
      this.maxDelayMs,
    );
    this.attempt += 1;
    this.setStatus("reconnecting");
    this.reconnectTimer = setTimeout(() => {
      this.reconnectTimer = null;
      this.connect();
    }, delay);
  }

  private setStatus(status: ConnectionStatus): void {
    if (status === this._status) return;
    this._status = status;
    this.hooks.onStatus?.(status);
  }
}
