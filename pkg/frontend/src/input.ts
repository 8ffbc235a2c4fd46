// Keyboard/gamepad twist input sampled at a fixed rate.
// Deadman is true only while an input is actively held.

export interface TwistInput {
  v: number[];
  w: number[];
  deadman: boolean;
}

// key -> unit twist contribution [vx, vy, vz, wx, wy, wz]
const KEY_MAP: Record<string, number[]> = {
  ArrowUp: [1, 0, 0, 0, 0, 0],
  ArrowDown: [-1, 0, 0, 0, 0, 0],
  ArrowLeft: [0, 1, 0, 0, 0, 0],
  ArrowRight: [0, -1, 0, 0, 0, 0],
  w: [0, 0, 1, 0, 0, 0],
  s: [0, 0, -1, 0, 0, 0],
  a: [0, 0, 0, 0, 0, 1],
  d: [0, 0, 0, 0, 0, -1],
  q: [0, 0, 0, 1, 0, 0],
  e: [0, 0, 0, -1, 0, 0],
};

export const CMD_RATE_HZ = 20;

/** Combine held keys into a twist scaled and clamped by the speed dial. */
export function twistFromKeys(held: Set<string>, dial: number): TwistInput {
  const twist = [0, 0, 0, 0, 0, 0];
  let any = false;
  for (const key of held) {
    const contribution = KEY_MAP[key];
    if (!contribution) continue;
    any = true;
    for (let i = 0; i < 6; i++) twist[i] += contribution[i];
  }
  if (!any) return { v: [0, 0, 0], w: [0, 0, 0], deadman: false };
  const clamped = twist.map((x) => Math.max(-1, Math.min(1, x)) * dial);
  return { v: clamped.slice(0, 3), w: clamped.slice(3), deadman: true };
}

export function twistFromGamepad(pad: Gamepad | null, dial: number): TwistInput | null {
  if (!pad) return null;
  const dead = (x: number) => (Math.abs(x) < 0.15 ? 0 : x);
  const axis = (i: number) => pad.axes[i] ?? 0;
  const button = (i: number) => pad.buttons[i]?.value ?? 0;
  const v = [dead(-axis(1)), dead(-axis(0)), dead(button(7) - button(6))];
  const w = [0, 0, dead(-axis(2))];
  const any = [...v, ...w].some((x) => x !== 0);
  if (!any) return null;
  return { v: v.map((x) => x * dial), w: w.map((x) => x * dial), deadman: true };
}

export class InputLoop {
  private held = new Set<string>();
  dial = 0.2;
  private timer: ReturnType<typeof setInterval> | null = null;

  attach(target: Pick<Window, "addEventListener">): void {
    target.addEventListener("keydown", (ev) => this.held.add((ev as KeyboardEvent).key));
    target.addEventListener("keyup", (ev) => this.held.delete((ev as KeyboardEvent).key));
    target.addEventListener("blur", () => this.held.clear());
  }

  sample(): TwistInput {
    const pad = typeof navigator !== "undefined" && navigator.getGamepads
      ? navigator.getGamepads()[0]
      : null;
    return twistFromGamepad(pad, this.dial) ?? twistFromKeys(this.held, this.dial);
  }

  start(send: (twist: TwistInput) => void): void {
    this.stop();
    this.timer = setInterval(() => send(this.sample()), 1000 / CMD_RATE_HZ);
  }

  stop(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }
}
