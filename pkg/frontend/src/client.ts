// Cockpit session state machine: connection lifecycle, dialogue, telemetry.
//
// The client never builds vehicle commands itself — every action is a plain
// text query over the session protocol, and the Confirm control sends the
// canonical confirmation utterance.

import {
  CONFIRM_UTTERANCE,
  parseServerMessage,
  proposalSpeed,
  ServiceType,
  TelemetryMessage,
} from "./protocol.js";

export type ConnectionState = "connecting" | "ready" | "error";

export interface DialogueEntry {
  role: "driver" | "assistant";
  text: string;
  serviceType?: ServiceType;
  latencyMs?: number;
  isError?: boolean;
}

export interface UiState {
  connection: ConnectionState;
  dialogue: DialogueEntry[];
  telemetry: TelemetryMessage | null;
  pendingProposal: { speed_mph: number } | null;
  inFlight: boolean;
  notice: string | null;
}

/** Minimal WebSocket surface; satisfied by browser sockets and the ws package. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export interface CockpitOptions {
  url: string;
  socketFactory?: (url: string) => SocketLike;
  reconnectDelayMs?: number;
  maxReconnectDelayMs?: number;
  newTurnId?: () => string;
}

function defaultSocketFactory(url: string): SocketLike {
  return new (globalThis as { WebSocket: new (url: string) => SocketLike }).WebSocket(url);
}

let turnCounter = 0;

function defaultTurnId(): string {
  turnCounter += 1;
  return `turn-${Date.now()}-${turnCounter}`;
}

export class CockpitClient {
  readonly state: UiState = {
    connection: "connecting",
    dialogue: [],
    telemetry: null,
    pendingProposal: null,
    inFlight: false,
    notice: null,
  };

  onChange: ((state: UiState) => void) | null = null;

  private readonly url: string;
  private readonly socketFactory: (url: string) => SocketLike;
  private readonly baseDelayMs: number;
  private readonly maxDelayMs: number;
  private readonly newTurnId: () => string;
  private socket: SocketLike | null = null;
  private outstandingTurnId: string | null = null;
  private reconnectDelayMs: number;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private closed = false;

  constructor(options: CockpitOptions) {
    this.url = options.url;
    this.socketFactory = options.socketFactory ?? defaultSocketFactory;
    this.baseDelayMs = options.reconnectDelayMs ?? 500;
    this.maxDelayMs = options.maxReconnectDelayMs ?? 8000;
    this.newTurnId = options.newTurnId ?? defaultTurnId;
    this.reconnectDelayMs = this.baseDelayMs;
  }

  connect(): void {
    this.closed = false;
    this.state.connection = "connecting";
    this.emit();
    const socket = this.socketFactory(this.url);
    this.socket = socket;
    socket.onopen = () => {
      this.reconnectDelayMs = this.baseDelayMs;
    };
    socket.onmessage = (ev) => this.handleFrame(String(ev.data));
    socket.onerror = () => {
      // onclose follows; reconnect is scheduled there.
    };
    socket.onclose = () => {
      if (this.socket !== socket) return;
      this.socket = null;
      if (this.state.inFlight) {
        this.state.inFlight = false;
        this.outstandingTurnId = null;
      }
      if (!this.closed) {
        this.state.connection = "error";
        this.emit();
        this.scheduleReconnect();
      }
    };
  }

  close(): void {
    this.closed = true;
    if (this.reconnectTimer !== null) {
      clearTimeout(this.reconnectTimer);
      this.reconnectTimer = null;
    }
    this.socket?.close();
    this.socket = null;
  }

  /** Send a driver query; refused (with an inline notice) unless ready and idle. */
  sendQuery(text: string): boolean {
    const trimmed = text.trim();
    if (!trimmed) return false;
    if (this.state.connection !== "ready" || this.socket === null) {
      this.setNotice("not connected yet");
      return false;
    }
    if (this.state.inFlight) {
      this.setNotice("wait for the current response");
      return false;
    }
    const turnId = this.newTurnId();
    this.outstandingTurnId = turnId;
    this.state.inFlight = true;
    this.state.notice = null;
    this.state.dialogue.push({ role: "driver", text: trimmed });
    this.socket.send(JSON.stringify({ type: "query", text: trimmed, client_turn_id: turnId }));
    this.emit();
    return true;
  }

  /** Confirm the pending proposal by uttering the canonical confirmation. */
  confirm(): boolean {
    if (this.state.pendingProposal === null) {
      this.setNotice("nothing to confirm");
      return false;
    }
    return this.sendQuery(CONFIRM_UTTERANCE);
  }

  private handleFrame(raw: string): void {
    const msg = parseServerMessage(raw);
    if (msg === null) return; // malformed frame: keep last good state
    switch (msg.type) {
      case "status":
        if (msg.state === "ready") {
          this.state.connection = "ready";
          this.state.notice = null;
          this.emit();
        }
        break;
      case "telemetry":
        this.state.telemetry = msg;
        this.emit();
        break;
      case "response": {
        if (msg.client_turn_id !== this.outstandingTurnId) return; // duplicate or stale
        this.outstandingTurnId = null;
        this.state.inFlight = false;
        this.state.dialogue.push({
          role: "assistant",
          text: msg.text,
          serviceType: msg.service_type,
          latencyMs: msg.latency_ms,
        });
        const speed = proposalSpeed(msg.text);
        this.state.pendingProposal = speed === null ? null : { speed_mph: speed };
        this.emit();
        break;
      }
      case "error": {
        if (msg.client_turn_id && msg.client_turn_id === this.outstandingTurnId) {
          this.outstandingTurnId = null;
          this.state.inFlight = false;
          this.state.dialogue.push({
            role: "assistant",
            text: `error (${msg.code}): ${msg.message}`,
            isError: true,
          });
          this.state.pendingProposal = null;
        } else {
          this.setNotice(`${msg.code}: ${msg.message}`);
        }
        this.emit();
        break;
      }
    }
  }

  private scheduleReconnect(): void {
    if (this.reconnectTimer !== null) return;
    this.reconnectTimer = setTimeout(() => {
      this.reconnectTimer = null;
      if (!this.closed) this.connect();
    }, this.reconnectDelayMs);
    this.reconnectDelayMs = Math.min(this.reconnectDelayMs * 2, this.maxDelayMs);
  }

  private setNotice(text: string): void {
    this.state.notice = text;
    this.emit();
  }

  private emit(): void {
    this.onChange?.(this.state);
  }
}
