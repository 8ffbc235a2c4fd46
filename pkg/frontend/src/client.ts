// Session lifecycle over the service HTTP API plus the WebSocket feed.

import { parseServerMessage, type CmdMessage, type ServerMessage } from "./wire";

export interface SessionInfo {
  session_id: string;
  scene_id: string;
  n: number;
  dt: number;
  ws_path: string;
}

export async function listScenes(base = ""): Promise<{ scene_id: string; description: string; objects: { object_id: string; label: string }[] }[]> {
  const resp = await fetch(`${base}/scenes`);
  if (!resp.ok) throw new Error(`GET /scenes failed: ${resp.status}`);
  return (await resp.json()).scenes;
}

export async function createSession(sceneId: string, heldObject: string, base = ""): Promise<SessionInfo> {
  const resp = await fetch(`${base}/session`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ scene_id: sceneId, object: heldObject }),
  });
  if (!resp.ok) throw new Error(`POST /session failed: ${resp.status}`);
  return await resp.json();
}

export async function setHeldObject(sessionId: string, heldObject: string, base = ""): Promise<ServerMessage> {
  const resp = await fetch(`${base}/session/${sessionId}/context`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ held_object: heldObject }),
  });
  const data = await resp.json();
  if (!resp.ok) throw new Error(data.error ?? `context switch failed: ${resp.status}`);
  return data as ServerMessage;
}

export class SessionSocket {
  private ws: WebSocket;
  private cmdSeq = 0;

  constructor(
    wsPath: string,
    private onMessage: (msg: ServerMessage) => void,
    private onClose: () => void,
  ) {
    const proto = location.protocol === "https:" ? "wss:" : "ws:";
    this.ws = new WebSocket(`${proto}//${location.host}${wsPath}`);
    this.ws.onmessage = (ev: MessageEvent) => {
      const msg = parseServerMessage(String(ev.data));
      if (msg) this.onMessage(msg);
    };
    this.ws.onclose = () => this.onClose();
    this.ws.onerror = () => this.onClose();
  }

  sendCmd(v: number[], w: number[], deadman: boolean): void {
    if (this.ws.readyState !== WebSocket.OPEN) return;
    const msg: CmdMessage = { type: "cmd", v, w, deadman, seq: ++this.cmdSeq };
    this.ws.send(JSON.stringify(msg));
  }

  close(): void {
    this.ws.close();
  }
}
