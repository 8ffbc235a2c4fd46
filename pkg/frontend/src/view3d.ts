// Minimal canvas 3D view: orbit camera, wireframe meshes, arm skeleton.
// No safety computation happens here; geometry comes from hello/context
// messages and poses from the latest state message.

import { framePositions } from "./fk";
import { highlightedEnvelopes, type ViewState } from "./state";
import type { MeshData } from "./wire";

export class View3D {
  yaw = 0.9;
  pitch = 0.45;
  distance = 2.2;
  target = [0.3, 0.0, 0.3];

  constructor(private canvas: HTMLCanvasElement) {
    this.bindOrbit();
  }

  private bindOrbit(): void {
    let dragging = false;
    let last = [0, 0];
    this.canvas.addEventListener("mousedown", (ev) => {
      dragging = true;
      last = [ev.clientX, ev.clientY];
    });
    this.canvas.addEventListener("mouseup", () => (dragging = false));
    this.canvas.addEventListener("mouseleave", () => (dragging = false));
    this.canvas.addEventListener("mousemove", (ev) => {
      if (!dragging) return;
      this.yaw += (ev.clientX - last[0]) * 0.01;
      this.pitch = Math.max(-1.4, Math.min(1.4, this.pitch + (ev.clientY - last[1]) * 0.01));
      last = [ev.clientX, ev.clientY];
    });
    this.canvas.addEventListener("wheel", (ev) => {
      this.distance = Math.max(0.5, Math.min(6, this.distance + ev.deltaY * 0.002));
      ev.preventDefault();
    });
  }

  private project(p: number[]): [number, number, number] {
    const cy = Math.cos(this.yaw);
    const sy = Math.sin(this.yaw);
    const cp = Math.cos(this.pitch);
    const sp = Math.sin(this.pitch);
    const x = p[0] - this.target[0];
    const y = p[1] - this.target[1];
    const z = p[2] - this.target[2];
    // yaw about world z, then pitch toward the camera
    const x1 = cy * x + sy * y;
    const y1 = -sy * x + cy * y;
    const z1 = z;
    const y2 = cp * y1 - 0 * z1;
    const depth = this.distance + cp * x1 + sp * z1 * 0 + 0;
    const up = cp * z1 - sp * x1;
    const scale = (0.9 * Math.min(this.canvas.width, this.canvas.height)) / Math.max(depth, 0.2);
    return [this.canvas.width / 2 + y2 * -scale, this.canvas.height / 2 - up * scale, depth + y2 * 0];
  }

  private stroke(ctx: CanvasRenderingContext2D, pts: number[][], color: string, width = 1, close = false): void {
    if (pts.length < 2) return;
    ctx.strokeStyle = color;
    ctx.lineWidth = width;
    ctx.beginPath();
    const [x0, y0] = this.project(pts[0]);
    ctx.moveTo(x0, y0);
    for (let i = 1; i < pts.length; i++) {
      const [x, y] = this.project(pts[i]);
      ctx.lineTo(x, y);
    }
    if (close) ctx.closePath();
    ctx.stroke();
  }

  private drawMesh(ctx: CanvasRenderingContext2D, mesh: MeshData, color: string, every = 3): void {
    for (let t = 0; t < mesh.indices.length; t += every) {
      const [a, b, c] = mesh.indices[t];
      this.stroke(ctx, [mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]], color, 0.5, true);
    }
  }

  render(state: ViewState): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    const hello = state.hello;
    if (!hello) {
      ctx.fillStyle = "#777";
      ctx.fillText("waiting for hello…", 16, 24);
      return;
    }
    // workspace floor
    const { lo, hi } = hello.workspace;
    this.stroke(
      ctx,
      [
        [lo[0], lo[1], lo[2]],
        [hi[0], lo[1], lo[2]],
        [hi[0], hi[1], lo[2]],
        [lo[0], hi[1], lo[2]],
      ],
      "#334",
      1,
      true,
    );
    // scene solids (environment class)
    if (state.visibility.env) {
      for (const entry of hello.scene_solids) {
        for (const mesh of entry.meshes) this.drawMesh(ctx, mesh, "#4a6", 4);
      }
    }
    // semantic envelopes, highlighted when their row is near the boundary
    if (state.visibility.sem) {
      const hot = highlightedEnvelopes(state);
      const pulse = 0.5 + 0.5 * Math.sin(Date.now() / 120);
      for (const entry of state.envelopes) {
        const color = hot.has(entry.object_id) ? `rgba(255,80,80,${0.5 + 0.5 * pulse})` : "rgba(90,140,255,0.55)";
        for (const mesh of entry.meshes) this.drawMesh(ctx, mesh, color, 4);
      }
    }
    // arm skeleton from the latest q (display-only client FK)
    const last = state.lastState;
    if (last) {
      const points = framePositions(hello.chain, last.q);
      this.stroke(ctx, points, "#eee", 3);
      const [ex, ey] = this.project(last.x_ee);
      ctx.fillStyle = last.status === "optimal" ? "#6cf" : "#fa0";
      ctx.beginPath();
      ctx.arc(ex, ey, 5, 0, 2 * Math.PI);
      ctx.fill();
    }
  }
}
