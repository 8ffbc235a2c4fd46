// Barrier gauges and the status banner. Values are rendered verbatim from
// the last state message (String(value), full precision) so what the user
// sees is exactly what the server certified.

import { gaugeRows, type ViewState } from "./state";

export function renderStatusBanner(el: HTMLElement, state: ViewState): void {
  const status = state.lastState?.status ?? "—";
  el.dataset.status = String(status);
  if (state.connection === "disconnected") {
    el.textContent = "DISCONNECTED — inputs disabled, deadman engaged";
    el.className = "banner banner-disconnected";
  } else if (status === "relaxed") {
    el.textContent = "RELAXED — semantic rows softened to stay feasible";
    el.className = "banner banner-relaxed";
  } else if (status === "fallback_zero") {
    el.textContent = "FALLBACK — holding zero velocity";
    el.className = "banner banner-fallback";
  } else {
    el.textContent = `status: ${status}`;
    el.className = "banner banner-ok";
  }
}

export function renderGauges(el: HTMLElement, state: ViewState): void {
  const rows = gaugeRows(state);
  el.replaceChildren();
  for (const row of rows) {
    const div = document.createElement("div");
    div.className = `gauge gauge-${row.cls}${row.warn ? " gauge-warn" : ""}${row.active ? " gauge-active" : ""}`;
    const name = document.createElement("span");
    name.className = "gauge-label";
    name.textContent = row.label;
    const value = document.createElement("span");
    value.className = "gauge-value";
    value.textContent = String(row.value);
    const bar = document.createElement("span");
    bar.className = "gauge-bar";
    const frac = Math.max(0, Math.min(1, row.value / 2));
    bar.style.width = `${(frac * 100).toFixed(1)}%`;
    div.append(name, value, bar);
    el.append(div);
  }
}

export function renderContext(el: HTMLElement, state: ViewState): void {
  const held = document.createElement("div");
  held.className = "held-object";
  held.textContent = `holding: ${state.heldObject}`;
  el.replaceChildren(held);
  if (state.contextWarning) {
    const warn = document.createElement("div");
    warn.className = "context-warning";
    warn.textContent = state.contextWarning;
    el.append(warn);
  }
}
