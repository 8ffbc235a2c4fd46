// Live integration against the real service: a command sent by the client
// must be reflected in a rendered state within 3 ticks, and rendered h
// values must match the wire message exactly.

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";

import { renderGauges } from "../src/gauges";
import { applyMessage, initialViewState, type ViewState } from "../src/state";
import { parseServerMessage, type StateMessage } from "../src/wire";

const PORT = 18000 + Math.floor(Math.random() * 1000);
const BASE = `http://127.0.0.1:${PORT}`;
let server: ChildProcess | null = null;

async function waitForServer(timeoutMs = 60_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const resp = await fetch(`${BASE}/scenes`);
      if (resp.ok) return;
    } catch {
      /* not up yet */
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error("service did not come up");
}

beforeAll(async () => {
  const sceneDir = mkdtempSync(join(tmpdir(), "semfilter-scenes-"));
  const gen = spawnSync("python3", ["-m", "semfilter.cli", "demo-scene", "--scene-id", "books", "--out", sceneDir]);
  if (gen.status !== 0) throw new Error(`demo-scene failed: ${gen.stderr}`);
  server = spawn("python3", ["-m", "semfilter.cli", "serve", "--scene-dir", sceneDir, "--port", String(PORT)], {
    stdio: "ignore",
  });
  await waitForServer();
}, 90_000);

afterAll(() => {
  server?.kill("SIGINT");
});

describe("live round trip", () => {
  it("reflects a command in the rendered state within 3 ticks", async () => {
    const resp = await fetch(`${BASE}/session`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ scene_id: "books", object: "dry sponge" }),
    });
    expect(resp.ok).toBe(true);
    const info = await resp.json();

    const ws = new WebSocket(`ws://127.0.0.1:${PORT}${info.ws_path}`);
    let state: ViewState = initialViewState;
    const states: StateMessage[] = [];
    const raws = new Map<number, string>();
    let sentAtTick: number | null = null;
    let reflectedTick: number | null = null;

    await new Promise<void>((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error("timed out waiting for reflection")), 60_000);
      ws.on("message", (data: Buffer) => {
        const raw = data.toString();
        const msg = parseServerMessage(raw);
        if (!msg) return;
        state = applyMessage(state, msg);
        if (msg.type !== "state") return;
        states.push(msg);
        raws.set(msg.seq, raw);
        if (sentAtTick === null && states.length >= 3) {
          // the filter is idle; fire the command once
          sentAtTick = msg.tick;
          ws.send(JSON.stringify({ type: "cmd", v: [0.05, 0, 0], w: [0, 0, 0], deadman: true, seq: 1 }));
        } else if (sentAtTick !== null && reflectedTick === null) {
          const moved = msg.u_cmd.some((x) => Math.abs(x) > 1e-9);
          if (moved) {
            reflectedTick = msg.tick;
            clearTimeout(timer);
            resolve();
          }
        }
      });
      ws.on("error", reject);
    });
    ws.close();

    expect(sentAtTick).not.toBeNull();
    expect(reflectedTick).not.toBeNull();
    expect(reflectedTick! - sentAtTick!).toBeLessThan(3);

    // rendered h values byte-match the latest state message
    const last = state.lastState!;
    const host = document.createElement("div");
    renderGauges(host, state);
    const shown = [...host.querySelectorAll(".gauge-value")].map((el) => el.textContent);
    const expected = [...last.h.sem, ...last.h.env, ...last.h.self, ...last.h.lim].map(String);
    expect(shown).toEqual(expected);
    // every displayed number recovers the exact wire double
    const flat = [...last.h.sem, ...last.h.env, ...last.h.self, ...last.h.lim];
    shown.forEach((text, i) => expect(Object.is(Number(text), flat[i])).toBe(true));
    // and the banner mirrors the exact status string
    expect(["optimal", "relaxed", "fallback_zero"]).toContain(last.status);
  }, 120_000);
});
