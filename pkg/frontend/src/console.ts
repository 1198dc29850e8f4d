/** Referee console view.
 *
 * The DOM is rebuilt from the latest server snapshot on every update.
 * Nothing in the view is predicted locally: clicking a button sends a
 * command, and the display changes only when the next snapshot (or a
 * rejection notice for that control) arrives. User-entered form values
 * are carried across rebuilds so typing survives broadcasts.
 */

import { CommandResult, ConnectionState, ConsoleClient } from "./client.js";
import { LogEntrySnapshot, MatchSnapshot } from "./types.js";

const BANNER_TEXT: Record<ConnectionState, string> = {
  connecting: "connecting to match service",
  live: "live",
  stale: "connection lost, showing last known state",
  auth_failed: "authentication failed",
  closed: "session closed",
};

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  if (text) {
    node.textContent = text;
  }
  return node;
}

function hitLine(entry: LogEntrySnapshot): string {
  const e = entry.event;
  const fx = entry.effect ?? {};
  if (entry.event.type === "hit" && entry.disposition === "applied") {
    return (
      `${fx.attacker} hit ${fx.defender} (${fx.location}): ` +
      `${fx.damage} damage, hp ${fx.hp_before} to ${fx.hp_after}`
    );
  }
  if (entry.event.type === "override" && entry.disposition === "applied") {
    return (
      `override of #${fx.target_seq}: ${fx.old_location} to ${fx.location}, ` +
      `damage ${fx.old_damage} to ${fx.damage}, hp correction ${fx.hp_correction}`
    );
  }
  const parts = [String(e.type)];
  if (typeof e.player_id === "string") parts.push(e.player_id);
  if (typeof e.pmu_id === "string") parts.push(e.pmu_id);
  if (typeof e.location === "string") parts.push(e.location);
  if (entry.note) parts.push(`(${entry.note})`);
  return parts.join(" ");
}

export class RefereeConsole {
  private snapshot: MatchSnapshot | null = null;
  private connection: ConnectionState = "connecting";
  private connectionDetail = "";
  private notices = new Map<string, string>();

  constructor(
    private readonly root: HTMLElement,
    private readonly client: ConsoleClient,
  ) {
    client.onSnapshot = (snap) => {
      this.snapshot = snap;
      this.render();
    };
    client.onState = (state, detail) => {
      this.connection = state;
      this.connectionDetail = detail;
      this.render();
    };
    this.render();
  }

  /** Player id to hp as currently shown in the DOM, for tests that
   * diff rendered state against received snapshots. */
  renderedHp(): Record<string, number> {
    const out: Record<string, number> = {};
    for (const node of Array.from(this.root.querySelectorAll("[data-hp-of]"))) {
      out[node.getAttribute("data-hp-of")!] = Number(node.getAttribute("data-hp"));
    }
    return out;
  }

  renderedPhase(): string | null {
    return this.root.querySelector("[data-phase]")?.getAttribute("data-phase") ?? null;
  }

  render(): void {
    const doc = this.root.ownerDocument;
    const saved = this.captureFields();
    this.root.textContent = "";

    const banner = el(doc, "div", { class: "banner", "data-state": this.connection });
    banner.textContent = this.connectionDetail
      ? `${BANNER_TEXT[this.connection]}: ${this.connectionDetail}`
      : BANNER_TEXT[this.connection];
    this.root.appendChild(banner);

    const snap = this.snapshot;
    if (!snap) {
      this.root.appendChild(el(doc, "p", { class: "empty" }, "waiting for first snapshot"));
      return;
    }

    this.root.appendChild(this.buildScoreboard(doc, snap));
    this.root.appendChild(this.buildLobbyControls(doc, snap));
    this.root.appendChild(this.buildPhaseControls(doc, snap));
    this.root.appendChild(this.buildFeed(doc, snap));
    this.restoreFields(saved);
  }

  private live(): boolean {
    return this.connection === "live";
  }

  private buildScoreboard(doc: Document, snap: MatchSnapshot): HTMLElement {
    const section = el(doc, "section", { class: "scoreboard" });
    section.appendChild(
      el(doc, "div", { class: "phase", "data-phase": snap.phase }, `phase: ${snap.phase}`),
    );
    if (snap.winner) {
      section.appendChild(el(doc, "div", { class: "winner" }, `winner: ${snap.winner}`));
    }
    const list = el(doc, "ul", { class: "players" });
    for (const p of snap.players) {
      const maxHp = snap.config.roles[p.role]?.hp ?? p.hp;
      const item = el(doc, "li", { "data-player": p.player_id });
      item.appendChild(el(doc, "span", { class: "pid" }, p.player_id));
      item.appendChild(el(doc, "span", { class: "role" }, ` [${p.role}] `));
      item.appendChild(
        el(
          doc,
          "span",
          { class: "hp", "data-hp-of": p.player_id, "data-hp": String(p.hp) },
          `${p.hp} / ${maxHp} hp`,
        ),
      );
      const bar = el(doc, "div", { class: "hpbar" });
      const pct = maxHp > 0 ? (100 * p.hp) / maxHp : 0;
      const fill = el(doc, "div", { class: "hpfill" });
      fill.style.width = `${pct.toFixed(1)}%`;
      bar.appendChild(fill);
      item.appendChild(bar);
      item.appendChild(
        el(
          doc,
          "span",
          { class: "bindings" },
          p.bindings.length ? `units: ${p.bindings.join(", ")}` : "no units bound",
        ),
      );
      list.appendChild(item);
    }
    section.appendChild(list);
    return section;
  }

  private buildLobbyControls(doc: Document, snap: MatchSnapshot): HTMLElement {
    const section = el(doc, "section", { class: "lobby-controls" });
    const enabled = this.live() && snap.phase === "lobby";

    const joinForm = el(doc, "div", { class: "join", "data-form": "join" });
    const joinId = el(doc, "input", {
      "data-field": "join-player",
      placeholder: "player id",
    });
    const roleSelect = el(doc, "select", { "data-field": "join-role" });
    for (const role of Object.keys(snap.config.roles)) {
      const stats = snap.config.roles[role];
      roleSelect.appendChild(
        el(doc, "option", { value: role }, `${role} (${stats.hp}hp/${stats.atk}atk/${stats.def}def)`),
      );
    }
    const joinBtn = el(doc, "button", { "data-action": "join" }, "join");
    joinBtn.disabled = !enabled;
    joinBtn.addEventListener("click", () => {
      void this.submit("join", this.client.command("join", {
        player_id: joinId.value.trim(),
        role: roleSelect.value,
      }));
    });
    joinForm.append(joinId, roleSelect, joinBtn, this.noticeSpan(doc, "join"));
    section.appendChild(joinForm);

    const bindForm = el(doc, "div", { class: "bind", "data-form": "bind" });
    const bindPlayer = el(doc, "select", { "data-field": "bind-player" });
    for (const p of snap.players) {
      bindPlayer.appendChild(el(doc, "option", { value: p.player_id }, p.player_id));
    }
    const bindPmu = el(doc, "input", { "data-field": "bind-pmu", placeholder: "pmu id" });
    const bindBtn = el(doc, "button", { "data-action": "bind" }, "bind");
    bindBtn.disabled = !enabled || snap.players.length === 0;
    bindBtn.addEventListener("click", () => {
      void this.submit("bind", this.client.command("bind", {
        player_id: bindPlayer.value,
        pmu_id: bindPmu.value.trim(),
      }));
    });
    bindForm.append(bindPlayer, bindPmu, bindBtn, this.noticeSpan(doc, "bind"));
    section.appendChild(bindForm);
    return section;
  }

  private buildPhaseControls(doc: Document, snap: MatchSnapshot): HTMLElement {
    const section = el(doc, "section", { class: "phase-controls" });
    const allowed: Record<string, boolean> = {
      start: snap.phase === "lobby",
      pause: snap.phase === "running",
      resume: snap.phase === "paused",
      finish: snap.phase === "running" || snap.phase === "paused",
      reset: snap.phase !== "lobby",
    };
    for (const name of ["start", "pause", "resume", "finish", "reset"]) {
      const btn = el(doc, "button", { "data-action": name }, name);
      btn.disabled = !this.live() || !allowed[name];
      btn.addEventListener("click", () => {
        void this.submit("phase", this.client.command(name));
      });
      section.appendChild(btn);
    }
    section.appendChild(this.noticeSpan(doc, "phase"));
    return section;
  }

  private buildFeed(doc: Document, snap: MatchSnapshot): HTMLElement {
    const section = el(doc, "section", { class: "feed" });
    section.appendChild(el(doc, "h2", {}, `event log (${snap.log_length})`));
    const list = el(doc, "ol", { class: "log" });
    for (const entry of snap.log) {
      const item = el(doc, "li", {
        "data-log-seq": String(entry.seq),
        "data-disposition": entry.disposition,
      });
      item.appendChild(
        el(doc, "span", { class: "line" }, `#${entry.seq} [${entry.disposition}] ${hitLine(entry)}`),
      );
      if (entry.event.type === "hit" && entry.disposition === "applied") {
        const key = `override-${entry.seq}`;
        const locSelect = el(doc, "select", { "data-field": key });
        for (const loc of Object.keys(snap.config.locations)) {
          locSelect.appendChild(el(doc, "option", { value: loc }, loc));
        }
        const btn = el(doc, "button", {
          "data-action": "override",
          "data-target": String(entry.seq),
        }, "override");
        btn.disabled = !this.live() || snap.phase === "lobby";
        btn.addEventListener("click", () => {
          void this.submit(key, this.client.override(entry.seq, locSelect.value));
        });
        item.append(locSelect, btn, this.noticeSpan(doc, key));
      }
      list.appendChild(item);
    }
    section.appendChild(list);
    return section;
  }

  private noticeSpan(doc: Document, key: string): HTMLElement {
    return el(doc, "span", { class: "notice", "data-notice": key }, this.notices.get(key) ?? "");
  }

  private async submit(key: string, pending: Promise<CommandResult>): Promise<void> {
    this.notices.delete(key);
    this.setNoticeText(key, "");
    const result = await pending;
    let text = "";
    if (!result.ok) {
      text = result.error ?? "request failed";
    } else if (result.disposition && result.disposition !== "applied") {
      text = `${result.disposition}`;
    }
    if (text) {
      this.notices.set(key, text);
    } else {
      this.notices.delete(key);
    }
    this.setNoticeText(key, text);
  }

  private setNoticeText(key: string, text: string): void {
    const span = this.root.querySelector(`[data-notice="${key}"]`);
    if (span) {
      span.textContent = text;
    }
  }

  private captureFields(): Map<string, string> {
    const saved = new Map<string, string>();
    for (const node of Array.from(this.root.querySelectorAll("[data-field]"))) {
      const field = node as HTMLInputElement | HTMLSelectElement;
      saved.set(field.getAttribute("data-field")!, field.value);
    }
    return saved;
  }

  private restoreFields(saved: Map<string, string>): void {
    for (const [key, value] of saved) {
      const node = this.root.querySelector(`[data-field="${key}"]`);
      if (!node) {
        continue;
      }
      if (node instanceof HTMLSelectElement) {
        const has = Array.from(node.options).some((o) => o.value === value);
        if (has) {
          node.value = value;
        }
      } else if (node instanceof HTMLInputElement) {
        node.value = value;
      }
    }
  }
}
