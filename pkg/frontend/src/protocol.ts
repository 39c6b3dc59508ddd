// Wire protocol spoken with the gateway's /session endpoint.

export type ServiceType = "ConversationalOnly" | "ConversationalAdas" | "SceneAware";

export interface QueryMessage {
  type: "query";
  text: string;
  client_turn_id: string;
}

export interface StatusMessage {
  type: "status";
  state: string;
}

export interface TelemetryMessage {
  type: "telemetry";
  speed_mph: number;
  target_speed_mph: number;
  acc_enabled: boolean;
  road_type: string;
  weather: string;
  traffic: string;
  sim_time_s: number;
}

export interface ExecutedCommand {
  name: string;
  arguments: Record<string, unknown>;
}

export interface ResponseMessage {
  type: "response";
  text: string;
  service_type: ServiceType;
  latency_ms: number;
  client_turn_id: string;
  executed_commands: ExecutedCommand[];
}

export interface ErrorMessage {
  type: "error";
  code: string;
  message: string;
  client_turn_id?: string;
}

export type ServerMessage = StatusMessage | TelemetryMessage | ResponseMessage | ErrorMessage;

// The confirm button is sugar for this literal utterance; all actuation
// flows through the dialogue protocol as plain text.
export const CONFIRM_UTTERANCE = "Yes, go ahead.";

const PROPOSAL_RE = /setting the speed to (\d+) MPH/;
const CONFIRM_QUESTION = "apply this setting?";

/** Speed proposed by an assistant reply, when it asks for confirmation. */
export function proposalSpeed(text: string): number | null {
  if (!text.includes(CONFIRM_QUESTION)) return null;
  const match = PROPOSAL_RE.exec(text);
  return match ? Number(match[1]) : null;
}

function isTelemetry(msg: Record<string, unknown>): boolean {
  return (
    typeof msg.speed_mph === "number" &&
    typeof msg.target_speed_mph === "number" &&
    typeof msg.acc_enabled === "boolean" &&
    typeof msg.road_type === "string" &&
    typeof msg.weather === "string" &&
    typeof msg.traffic === "string" &&
    typeof msg.sim_time_s === "number"
  );
}

/** Parse a server frame; returns null for anything malformed. */
export function parseServerMessage(raw: string): ServerMessage | null {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof data !== "object" || data === null) return null;
  const msg = data as Record<string, unknown>;
  switch (msg.type) {
    case "status":
      return typeof msg.state === "string" ? (msg as unknown as StatusMessage) : null;
    case "telemetry":
      return isTelemetry(msg) ? (msg as unknown as TelemetryMessage) : null;
    case "response":
      return typeof msg.text === "string" &&
        typeof msg.service_type === "string" &&
        typeof msg.latency_ms === "number" &&
        typeof msg.client_turn_id === "string" &&
        Array.isArray(msg.executed_commands)
        ? (msg as unknown as ResponseMessage)
        : null;
    case "error":
      return typeof msg.code === "string" && typeof msg.message === "string"
        ? (msg as unknown as ErrorMessage)
        : null;
    default:
      return null;
  }
}
