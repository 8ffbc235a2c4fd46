import { createSession, listScenes, setHeldObject, SessionSocket } from "./client";
import { renderContext, renderGauges, renderStatusBanner } from "./gauges";
import { InputLoop } from "./input";
import { applyMessage, initialViewState, markDisconnected, type ViewState } from "./state";
import { View3D } from "./view3d";

const HELD_OBJECTS = ["none", "dry sponge", "cup of water", "lit candle", "knife"];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function boot() {
  let state: ViewState = initialViewState;
  let socket: SessionSocket | null = null;
  const banner = el<HTMLElement>("banner");
  const gauges = el<HTMLElement>("gauges");
  const contextBox = el<HTMLElement>("context");
  const canvas = el<HTMLCanvasElement>("view");
  const sceneSelect = el<HTMLSelectElement>("scene-select");
  const heldSelect = el<HTMLSelectElement>("held-select");
  const connectBtn = el<HTMLButtonElement>("connect");
  const dial = el<HTMLInputElement>("speed-dial");
  const view = new View3D(canvas);
  const input = new InputLoop();
  input.attach(window);

  for (const held of HELD_OBJECTS) {
    const opt = document.createElement("option");
    opt.value = held;
    opt.textContent = held;
    heldSelect.append(opt);
  }
  const scenes = await listScenes();
  for (const scene of scenes) {
    const opt = document.createElement("option");
    opt.value = scene.scene_id;
    opt.textContent = `${scene.scene_id} — ${scene.description}`;
    sceneSelect.append(opt);
  }

  function update(next: ViewState) {
    state = next;
    renderStatusBanner(banner, state);
    renderGauges(gauges, state);
    renderContext(contextBox, state);
    const disabled = state.connection !== "connected";
    heldSelect.disabled = disabled;
    dial.disabled = disabled;
  }

  function draw() {
    view.render(state);
    requestAnimationFrame(draw);
  }
  requestAnimationFrame(draw);

  let sessionId: string | null = null;
  connectBtn.addEventListener("click", async () => {
    socket?.close();
    input.stop();
    update({ ...initialViewState, connection: "connecting" });
    const info = await createSession(sceneSelect.value, heldSelect.value);
    sessionId = info.session_id;
    socket = new SessionSocket(
      info.ws_path,
      (msg) => update(applyMessage(state, msg)),
      () => {
        input.stop();
        update(markDisconnected(state));
      },
    );
    input.dial = Number(dial.value);
    input.start((twist) => socket?.sendCmd(twist.v, twist.w, twist.deadman));
  });

  dial.addEventListener("input", () => (input.dial = Number(dial.value)));
  heldSelect.addEventListener("change", async () => {
    if (!sessionId) return;
    try {
      const msg = await setHeldObject(sessionId, heldSelect.value);
      update(applyMessage(state, msg));
    } catch (err) {
      update({ ...state, lastError: String(err) });
    }
  });

  update(state);
}

boot().catch((err) => {
  document.body.insertAdjacentText("beforeend", `boot failed: ${err}`);
});
