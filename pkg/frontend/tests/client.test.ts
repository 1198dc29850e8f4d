// Protocol behavior of ConsoleClient against a scripted WebSocket
// server: session ordering, seq-keyed reply correlation, reconnect
// with a fresh snapshot, and auth failure without retries.

import { WebSocket, WebSocketServer } from "ws";
import { afterEach, describe, expect, it } from "vitest";

import { AuthError, ConsoleClient, WebSocketLike } from "../src/client.js";
import { MatchSnapshot, WireMessage } from "../src/types.js";

const wsFactory = (url: string) => new WebSocket(url) as unknown as WebSocketLike;

function lobbySnapshot(): MatchSnapshot {
  return {
    phase: "lobby",
    players: [],
    winner: null,
    log_length: 0,
    log: [],
    config: {
      roles: { balanced: { hp: 100, atk: 10, def: 5 } },
      locations: { torso: 1.5 },
      refractory_ms: 500,
    },
  };
}

type ServerHook = (msg: WireMessage, reply: (doc: object) => void, sock: WebSocket) => boolean;

class MockServer {
  readonly wss: WebSocketServer;
  connections = 0;
  received: WireMessage[] = [];
  snapshot: MatchSnapshot = lobbySnapshot();
  token = "tok";
  hook: ServerHook | null = null;
  private outSeq = 0;
  private logSeq = 0;

  constructor(port: number, readonly timeline?: string[]) {
    this.wss = new WebSocketServer({ port, host: "127.0.0.1" });
    this.wss.on("connection", (sock) => {
      this.connections += 1;
      sock.on("message", (data) => this.handle(sock, JSON.parse(String(data)) as WireMessage));
    });
  }

  get port(): number {
    return (this.wss.address() as { port: number }).port;
  }

  ready(): Promise<void> {
    return new Promise((resolve) => this.wss.on("listening", () => resolve()));
  }

  close(): Promise<void> {
    for (const sock of this.wss.clients) {
      sock.terminate();
    }
    return new Promise((resolve) => this.wss.close(() => resolve()));
  }

  private handle(sock: WebSocket, msg: WireMessage): void {
    this.received.push(msg);
    const reply = (doc: object) => {
      sock.send(JSON.stringify({ ...doc, seq: ++this.outSeq, ts_ms: Date.now() }));
    };
    if (this.hook && this.hook(msg, reply, sock)) {
      return;
    }
    const command = msg.payload.command as string | undefined;
    if (command === "auth") {
      this.timeline?.push("srv:auth");
      if (msg.payload.token === this.token) {
        reply({ type: "ack", payload: { ack_seq: msg.seq } });
      } else {
        reply({
          type: "error",
          payload: { message: "bad token", code: "auth", about_seq: msg.seq },
        });
        sock.close();
      }
      return;
    }
    if (command === "subscribe") {
      this.timeline?.push("srv:subscribe");
      reply({ type: "ack", payload: { ack_seq: msg.seq } });
      reply({ type: "state", payload: { snapshot: this.snapshot } });
      return;
    }
    reply({
      type: "ack",
      payload: { ack_seq: msg.seq, disposition: "applied", log_seq: ++this.logSeq },
    });
  }
}

interface Harness {
  server: MockServer;
  current: MockServer; // swap after a simulated restart
  client: ConsoleClient;
  timeline: string[];
  snapshots: Array<{ origin: string; snap: MatchSnapshot }>;
  states: string[];
  fetches: number;
}

const cleanups: Array<() => Promise<void> | void> = [];

afterEach(async () => {
  while (cleanups.length) {
    await cleanups.pop()!();
  }
});

async function harness(opts: { token?: string; backoffMs?: number[] } = {}): Promise<Harness> {
  const timeline: string[] = [];
  const server = new MockServer(0, timeline);
  await server.ready();
  const h: Harness = {
    server, current: server, timeline, snapshots: [], states: [], fetches: 0, client: null!,
  };
  const client = new ConsoleClient({
    httpUrl: `http://127.0.0.1:${server.port}`,
    token: opts.token ?? "tok",
    webSocket: wsFactory,
    fetchFn: async (url) => {
      h.fetches += 1;
      timeline.push(`fetch:${url.endsWith("/state")}`);
      return { ok: true, status: 200, json: async () => structuredClone(h.current.snapshot) };
    },
    backoffMs: opts.backoffMs ?? [20, 40],
  });
  client.onSnapshot = (snap, origin) => {
    timeline.push(`snap:${origin}`);
    h.snapshots.push({ origin, snap });
  };
  client.onState = (state) => {
    timeline.push(`state:${state}`);
    h.states.push(state);
  };
  h.client = client;
  cleanups.push(() => client.close());
  cleanups.push(() => server.close());
  return h;
}

function waitFor(cond: () => boolean, ms = 3000): Promise<void> {
  const start = Date.now();
  return new Promise((resolve, reject) => {
    const tick = () => {
      if (cond()) return resolve();
      if (Date.now() - start > ms) return reject(new Error("condition not met in time"));
      setTimeout(tick, 5);
    };
    tick();
  });
}

describe("session establishment", () => {
  it("authenticates, renders from GET /state, then subscribes", async () => {
    const h = await harness();
    await h.client.connect();
    await waitFor(() => h.snapshots.length >= 2);

    // the http snapshot must land before subscribe is even sent
    const t = h.timeline;
    expect(t.indexOf("srv:auth")).toBeLessThan(t.indexOf("fetch:true"));
    expect(t.indexOf("snap:http")).toBeLessThan(t.indexOf("srv:subscribe"));
    expect(t.indexOf("snap:http")).toBeLessThan(t.indexOf("snap:ws"));
    expect(h.states).toEqual(["connecting", "live"]);
    expect(h.snapshots[0].origin).toBe("http");
    expect(h.snapshots[1].origin).toBe("ws");
  });

  it("rejects with AuthError on a bad token and never retries", async () => {
    const h = await harness({ token: "wrong" });
    await expect(h.client.connect()).rejects.toBeInstanceOf(AuthError);
    expect(h.states).toContain("auth_failed");
    await new Promise((r) => setTimeout(r, 150));
    expect(h.server.connections).toBe(1);
    expect(h.states).not.toContain("stale");
  });

  it("reports commands as offline before connecting", async () => {
    const h = await harness();
    const result = await h.client.command("start");
    expect(result.ok).toBe(false);
    expect(result.code).toBe("offline");
  });
});

describe("reply correlation", () => {
  it("resolves each command by ack_seq even when replies arrive out of order", async () => {
    const h = await harness();
    await h.client.connect();

    const held: Array<{ msg: WireMessage; reply: (doc: object) => void }> = [];
    h.server.hook = (msg, reply) => {
      if (msg.type !== "command") return false;
      const name = msg.payload.command;
      if (name !== "pause" && name !== "resume") return false;
      held.push({ msg, reply });
      if (held.length === 2) {
        for (const item of held.reverse()) {
          const logSeq = item.msg.payload.command === "pause" ? 101 : 202;
          item.reply({
            type: "ack",
            payload: { ack_seq: item.msg.seq, disposition: "applied", log_seq: logSeq },
          });
        }
      }
      return true;
    };

    const p1 = h.client.command("pause");
    const p2 = h.client.command("resume");
    const [r1, r2] = await Promise.all([p1, p2]);
    expect(r1.logSeq).toBe(101);
    expect(r2.logSeq).toBe(202);
  });

  it("routes error replies to the pending command via about_seq", async () => {
    const h = await harness();
    await h.client.connect();
    h.server.hook = (msg, reply) => {
      if (msg.payload.command !== "finish") return false;
      reply({
        type: "error",
        payload: { message: "cannot finish from lobby", code: "match", about_seq: msg.seq },
      });
      return true;
    };
    const result = await h.client.command("finish");
    expect(result.ok).toBe(false);
    expect(result.code).toBe("match");
    expect(result.error).toContain("cannot finish");
  });

  it("surfaces duplicate acks", async () => {
    const h = await harness();
    await h.client.connect();
    h.server.hook = (msg, reply) => {
      if (msg.payload.command !== "bind") return false;
      reply({ type: "ack", payload: { ack_seq: msg.seq, duplicate: true } });
      return true;
    };
    const result = await h.client.command("bind", { player_id: "aoi", pmu_id: "pmu-a" });
    expect(result.ok).toBe(true);
    expect(result.duplicate).toBe(true);
  });
});

describe("reconnection", () => {
  it("goes stale on disconnect, then re-auths and re-renders from a fresh snapshot", async () => {
    const h = await harness({ backoffMs: [20, 40] });
    await h.client.connect();
    await waitFor(() => h.snapshots.length >= 2);
    const port = h.server.port;

    await h.server.close();
    await waitFor(() => h.states.includes("stale"));

    const revived = new MockServer(port);
    cleanups.push(() => revived.close());
    await revived.ready();
    revived.snapshot = { ...lobbySnapshot(), log_length: 7 };
    h.current = revived;

    await waitFor(() => h.states[h.states.length - 1] === "live", 5000);
    await waitFor(() => h.snapshots.some((s) => s.snap.log_length === 7));

    // the recovery snapshot was fetched over http before resubscribing
    const lastHttp = h.snapshots.filter((s) => s.origin === "http").pop()!;
    expect(lastHttp.snap.log_length).toBe(7);
    expect(h.fetches).toBeGreaterThanOrEqual(2);
    expect(revived.received.some((m) => m.payload.command === "auth")).toBe(true);
    expect(revived.received.some((m) => m.payload.command === "subscribe")).toBe(true);
  });

  it("stays closed after an intentional close", async () => {
    const h = await harness();
    await h.client.connect();
    h.client.close();
    await new Promise((r) => setTimeout(r, 120));
    expect(h.states[h.states.length - 1]).toBe("closed");
    expect(h.server.connections).toBe(1);
  });
});
