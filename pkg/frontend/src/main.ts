/** Browser entry point. Wires native WebSocket and fetch into the
 * client and mounts the console at #app. The service token comes from
 * the ?token= query parameter, falling back to a prompt. */

import { ConsoleClient } from "./client.js";
import { RefereeConsole } from "./console.js";

function resolveToken(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("token");
  if (fromQuery) {
    return fromQuery;
  }
  return window.prompt("service token") ?? "";
}

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app mount point");
}

const client = new ConsoleClient({
  httpUrl: window.location.origin,
  token: resolveToken(),
  webSocket: (url) => new WebSocket(url),
  fetchFn: (url) => fetch(url),
});

new RefereeConsole(root, client);
void client.connect().catch((err) => {
  console.error("initial connect failed", err);
});
