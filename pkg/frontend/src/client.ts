/** WebSocket session against the match service.
 *
 * The client owns connection lifecycle only: authenticate, fetch a
 * fresh snapshot over HTTP, subscribe to snapshot broadcasts, and
 * correlate command replies by sequence number. It never interprets
 * game rules; every rendered value must come from a server snapshot.
 *
 * The WebSocket constructor and fetch are injectable so tests can run
 * under Node and the browser build can use the native objects.
 */

import {
  MatchSnapshot,
  WireMessage,
  encodeWireMessage,
  parseWireMessage,
} from "./types.js";

export interface WebSocketLike {
  send(data: string): void;
  close(): void;
  // any: must accept both browser WebSocket and the `ws` package
  addEventListener(type: string, listener: (event: any) => void): void;
}

export type WebSocketFactory = (url: string) => WebSocketLike;

export type FetchLike = (url: string) => Promise<{ ok: boolean; status: number; json(): Promise<unknown> }>;

export type ConnectionState = "connecting" | "live" | "stale" | "auth_failed" | "closed";

export type SnapshotOrigin = "http" | "ws";

export interface CommandResult {
  ok: boolean;
  disposition?: string;
  logSeq?: number;
  duplicate?: boolean;
  error?: string;
  code?: string;
}

export class AuthError extends Error {}

export interface ConsoleClientOptions {
  httpUrl: string;
  token: string;
  webSocket?: WebSocketFactory;
  fetchFn?: FetchLike;
  backoffMs?: number[];
}

const DEFAULT_BACKOFF = [250, 500, 1000, 2000, 4000];

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export class ConsoleClient {
  onSnapshot: (snap: MatchSnapshot, origin: SnapshotOrigin) => void = () => {};
  onState: (state: ConnectionState, detail: string) => void = () => {};

  private readonly httpUrl: string;
  private readonly wsUrl: string;
  private readonly token: string;
  private readonly makeSocket: WebSocketFactory;
  private readonly fetchFn: FetchLike;
  private readonly backoffMs: number[];

  private ws: WebSocketLike | null = null;
  private seq = 0;
  private pending = new Map<number, (result: CommandResult) => void>();
  private closedByUser = false;
  private authFailed = false;
  private reconnecting = false;

  constructor(opts: ConsoleClientOptions) {
    this.httpUrl = opts.httpUrl.replace(/\/+$/, "");
    this.wsUrl = this.httpUrl.replace(/^http/, "ws") + "/ws";
    this.token = opts.token;
    this.makeSocket =
      opts.webSocket ?? ((url) => new WebSocket(url) as unknown as WebSocketLike);
    this.fetchFn = opts.fetchFn ?? ((url) => fetch(url));
    this.backoffMs = opts.backoffMs ?? DEFAULT_BACKOFF;
  }

  /** Open a session: auth, render from GET /state, then subscribe.
   *
   * Resolves once live. Rejects with AuthError on a bad token (no
   * retries) or with the underlying error if the server is
   * unreachable. After a successful connect, drops reconnect
   * automatically with backoff.
   */
  async connect(): Promise<void> {
    await this.establish();
  }

  close(): void {
    this.closedByUser = true;
    this.failPending("connection closed");
    this.ws?.close();
    this.onState("closed", "");
  }

  command(name: string, extra: Record<string, unknown> = {}): Promise<CommandResult> {
    return this.request("command", { command: name, ...extra });
  }

  override(targetSeq: number, location: string): Promise<CommandResult> {
    return this.request("override", { target_seq: targetSeq, location });
  }

  async fetchState(): Promise<MatchSnapshot> {
    const resp = await this.fetchFn(this.httpUrl + "/state");
    if (!resp.ok) {
      throw new Error(`GET /state failed with ${resp.status}`);
    }
    return (await resp.json()) as MatchSnapshot;
  }

  private request(type: string, payload: Record<string, unknown>): Promise<CommandResult> {
    const ws = this.ws;
    if (ws === null) {
      return Promise.resolve({ ok: false, error: "not connected", code: "offline" });
    }
    const seq = ++this.seq;
    const line = encodeWireMessage({ type, seq, payload });
    return new Promise((resolve) => {
      this.pending.set(seq, resolve);
      ws.send(line);
    });
  }

  private async establish(): Promise<void> {
    this.onState("connecting", "");
    this.seq = 0;
    const ws = this.makeSocket(this.wsUrl);
    this.ws = ws;

    await new Promise<void>((resolve, reject) => {
      let settled = false;
      ws.addEventListener("open", () => {
        if (!settled) {
          settled = true;
          resolve();
        }
      });
      ws.addEventListener("error", () => {
        if (!settled) {
          settled = true;
          reject(new Error("websocket connection failed"));
        }
      });
      ws.addEventListener("close", () => {
        if (!settled) {
          settled = true;
          reject(new Error("websocket closed before opening"));
        }
        this.handleClose(ws);
      });
    });
    ws.addEventListener("message", (event: { data: unknown }) => {
      this.handleMessage(String(event.data));
    });

    const auth = await this.command("auth", { token: this.token });
    if (!auth.ok) {
      this.authFailed = true;
      this.onState("auth_failed", auth.error ?? "authentication failed");
      throw new AuthError(auth.error ?? "authentication failed");
    }

    // initial render comes from HTTP before any broadcast arrives:
    // subscribe is only sent after this snapshot is delivered
    const snap = await this.fetchState();
    this.onSnapshot(snap, "http");
    await this.command("subscribe");
    this.onState("live", "");
  }

  private handleMessage(text: string): void {
    let msg: WireMessage;
    try {
      msg = parseWireMessage(text);
    } catch {
      return; // ignore unparseable frames rather than crash the console
    }
    if (msg.type === "state") {
      const snap = msg.payload.snapshot as MatchSnapshot | undefined;
      if (snap) {
        this.onSnapshot(snap, "ws");
      }
      return;
    }
    if (msg.type === "ack") {
      const ackSeq = msg.payload.ack_seq as number;
      const resolve = this.pending.get(ackSeq);
      if (resolve) {
        this.pending.delete(ackSeq);
        resolve({
          ok: true,
          disposition: msg.payload.disposition as string | undefined,
          logSeq: msg.payload.log_seq as number | undefined,
          duplicate: msg.payload.duplicate as boolean | undefined,
        });
      }
      return;
    }
    if (msg.type === "error") {
      const about = msg.payload.about_seq as number | undefined;
      const result: CommandResult = {
        ok: false,
        error: String(msg.payload.message ?? "server error"),
        code: msg.payload.code as string | undefined,
      };
      if (about !== undefined && this.pending.has(about)) {
        const resolve = this.pending.get(about)!;
        this.pending.delete(about);
        resolve(result);
      }
    }
  }

  private handleClose(ws: WebSocketLike): void {
    if (this.ws !== ws) {
      return; // an older socket closing after we moved on
    }
    this.ws = null;
    this.failPending("connection lost");
    if (this.closedByUser || this.authFailed) {
      return;
    }
    this.onState("stale", "connection lost, reconnecting");
    void this.reconnectLoop();
  }

  private failPending(message: string): void {
    for (const resolve of this.pending.values()) {
      resolve({ ok: false, error: message, code: "offline" });
    }
    this.pending.clear();
  }

  private async reconnectLoop(): Promise<void> {
    if (this.reconnecting) {
      return;
    }
    this.reconnecting = true;
    try {
      for (let attempt = 0; !this.closedByUser && !this.authFailed; attempt++) {
        const wait = this.backoffMs[Math.min(attempt, this.backoffMs.length - 1)];
        await sleep(wait);
        try {
          await this.establish();
          return;
        } catch (err) {
          if (err instanceof AuthError) {
            return; // token rejected by the restarted server; stop retrying
          }
          this.onState("stale", `reconnect failed, retrying`);
        }
      }
    } finally {
      this.reconnecting = false;
    }
  }
}
