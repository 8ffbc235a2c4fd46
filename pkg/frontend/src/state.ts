// UI state: a pure reducer over server messages. Safety values are never
// recomputed here; the view renders exactly what the last state message said.

import type { ConstraintClass, EnvelopeEntry, HelloMessage, ServerMessage, StateMessage } from "./wire";

export type Connection = "connecting" | "connected" | "disconnected";

export interface ViewState {
  connection: Connection;
  hello: HelloMessage | null;
  lastState: StateMessage | null;
  envelopes: EnvelopeEntry[];
  heldObject: string;
  contextWarning: string | null;
  lastError: string | null;
  visibility: Record<"sem" | "env", boolean>;
}

export const initialViewState: ViewState = {
  connection: "connecting",
  hello: null,
  lastState: null,
  envelopes: [],
  heldObject: "none",
  contextWarning: null,
  lastError: null,
  visibility: { sem: true, env: true },
};

export function applyMessage(state: ViewState, msg: ServerMessage): ViewState {
  switch (msg.type) {
    case "hello":
      return {
        ...state,
        connection: "connected",
        hello: msg,
        envelopes: msg.envelopes,
        heldObject: msg.held_object,
      };
    case "state":
      if (state.lastState && msg.seq <= state.lastState.seq) return state;
      return { ...state, lastState: msg };
    case "context":
      return {
        ...state,
        envelopes: msg.envelopes,
        heldObject: msg.context.manipulated_object,
        contextWarning: msg.warning ?? null,
      };
    case "error":
      return { ...state, lastError: msg.error };
  }
}

export function markDisconnected(state: ViewState): ViewState {
  return { ...state, connection: "disconnected" };
}

const WARN_THRESHOLD = 0.1;

export interface GaugeRow {
  cls: ConstraintClass;
  label: string;
  value: number;
  warn: boolean;
  active: boolean;
}

/** Flatten the last state's barrier values for display, in server order. */
export function gaugeRows(state: ViewState): GaugeRow[] {
  const last = state.lastState;
  if (!last) return [];
  const rows: GaugeRow[] = [];
  for (const cls of ["sem", "env", "self", "lim"] as ConstraintClass[]) {
    const values = last.h[cls] ?? [];
    const labels = last.labels?.[cls] ?? [];
    values.forEach((value, i) => {
      const label = labels[i] ?? `${cls}[${i}]`;
      rows.push({
        cls,
        label,
        value,
        warn: value < WARN_THRESHOLD,
        active: last.active_rows.includes(label),
      });
    });
  }
  return rows;
}

/** Envelope object_ids whose semantic row is close to the boundary. */
export function highlightedEnvelopes(state: ViewState): Set<string> {
  const out = new Set<string>();
  const last = state.lastState;
  if (!last) return out;
  const labels = last.labels?.sem ?? [];
  (last.h.sem ?? []).forEach((value, i) => {
    if (value < WARN_THRESHOLD) {
      const label = labels[i] ?? "";
      out.add(label.startsWith("sem:") ? label.slice(4) : label);
    }
  });
  return out;
}
