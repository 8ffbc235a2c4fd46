// Message types for the "semfilter/wire/1" protocol.

export type ConstraintClass = "sem" | "env" | "self" | "lim";

export interface MeshData {
  vertices: number[][];
  indices: number[][];
}

export interface EnvelopeEntry {
  object_id: string;
  relationship?: string;
  meshes: MeshData[];
  class: string;
}

export interface ChainData {
  joints: { axis: number[]; origin: number[][] }[];
  base_pose: number[][];
  ee_offset: number[][];
}

export interface HelloMessage {
  type: "hello";
  schema: string;
  scene_id: string;
  n: number;
  dt: number;
  held_object: string;
  objects: { object_id: string; label: string }[];
  chain: ChainData;
  workspace: { lo: number[]; hi: number[] };
  envelopes: EnvelopeEntry[];
  scene_solids: EnvelopeEntry[];
  seq: number;
  t_ms: number;
}

export interface StateMessage {
  type: "state";
  q: number[];
  x_ee: number[];
  R_cur: number[];
  u_cmd: number[];
  u_cert: number[];
  status: "optimal" | "relaxed" | "fallback_zero" | "bypass";
  h: Record<ConstraintClass, number[]>;
  labels: Record<ConstraintClass, string[]>;
  active_rows: string[];
  tick: number;
  seq: number;
  t_ms: number;
}

export interface ContextMessage {
  type: "context";
  context: {
    manipulated_object: string;
    spatial: [string, string][];
    behavioral: [string, string][];
    pose: string;
  };
  envelopes: EnvelopeEntry[];
  warning?: string;
  seq: number;
  t_ms: number;
}

export interface ErrorMessage {
  type: "error";
  error: string;
  seq: number;
  t_ms: number;
}

export type ServerMessage = HelloMessage | StateMessage | ContextMessage | ErrorMessage;

export interface CmdMessage {
  type: "cmd";
  v: number[];
  w: number[];
  deadman: boolean;
  seq: number;
}

export function parseServerMessage(raw: string): ServerMessage | null {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof data !== "object" || data === null) return null;
  const type = (data as { type?: unknown }).type;
  if (type === "hello" || type === "state" || type === "context" || type === "error") {
    return data as ServerMessage;
  }
  return null;
}
