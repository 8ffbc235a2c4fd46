import { describe, expect, it } from "vitest";

import { twistFromKeys } from "../src/input";

describe("twistFromKeys", () => {
  it("no keys held gives zero twist with deadman open", () => {
    const out = twistFromKeys(new Set(), 0.2);
    expect(out.v).toEqual([0, 0, 0]);
    expect(out.w).toEqual([0, 0, 0]);
    expect(out.deadman).toBe(false);
  });

  it("forward arrow at dial 0.2 maps to v = (0.2, 0, 0)", () => {
    const out = twistFromKeys(new Set(["ArrowUp"]), 0.2);
    expect(out.v).toEqual([0.2, 0, 0]);
    expect(out.w).toEqual([0, 0, 0]);
    expect(out.deadman).toBe(true);
  });

  it("combined translate and rotate inputs merge and clamp to the dial", () => {
    const out = twistFromKeys(new Set(["ArrowUp", "ArrowDown", "ArrowLeft", "a"]), 0.3);
    // up+down cancel; left contributes +y; 'a' contributes +yaw
    expect(out.v).toEqual([0, 0.3, 0]);
    expect(out.w).toEqual([0, 0, 0.3]);
    expect(out.deadman).toBe(true);
  });

  it("opposing keys still close the deadman (input is actively held)", () => {
    const out = twistFromKeys(new Set(["ArrowUp", "ArrowDown"]), 0.2);
    expect(out.v).toEqual([0, 0, 0]);
    expect(out.deadman).toBe(true);
  });

  it("unknown keys are ignored", () => {
    const out = twistFromKeys(new Set(["x"]), 0.2);
    expect(out.deadman).toBe(false);
  });
});
