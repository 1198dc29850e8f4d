/** Wire envelope and match snapshot shapes, mirroring the service's JSON. */

export type Phase = "lobby" | "running" | "paused" | "finished";
export type Disposition = "applied" | "dropped" | "rejected";

export interface PlayerSnapshot {
  player_id: string;
  role: string;
  hp: number;
  atk: number;
  def: number;
  bindings: string[];
}

export interface RoleStats {
  hp: number;
  atk: number;
  def: number;
}

export interface LogEntrySnapshot {
  seq: number;
  event: { type: string } & Record<string, unknown>;
  disposition: Disposition;
  effect?: Record<string, unknown>;
  note?: string;
}

export interface MatchConfigSnapshot {
  roles: Record<string, RoleStats>;
  locations: Record<string, number>;
  refractory_ms: number;
}

export interface MatchSnapshot {
  phase: Phase;
  players: PlayerSnapshot[];
  winner: string | null;
  log_length: number;
  log: LogEntrySnapshot[];
  config: MatchConfigSnapshot;
}

export interface WireMessage {
  type: string;
  seq: number;
  payload: Record<string, unknown>;
  ts_ms?: number;
}

export function parseWireMessage(text: string): WireMessage {
  const doc = JSON.parse(text) as Record<string, unknown>;
  if (typeof doc.type !== "string" || typeof doc.seq !== "number" ||
      typeof doc.payload !== "object" || doc.payload === null) {
    throw new Error(`malformed wire message: ${text.slice(0, 120)}`);
  }
  return doc as unknown as WireMessage;
}

export function encodeWireMessage(msg: WireMessage): string {
  return JSON.stringify(msg) + "\n";
}
