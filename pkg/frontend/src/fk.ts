// Display-only forward kinematics: joint frame positions for the skeleton.
// The server's state message stays authoritative for anything safety-related.

import type { ChainData } from "./wire";

type Mat4 = number[][];

function matmul(a: Mat4, b: Mat4): Mat4 {
  const out: Mat4 = [];
  for (let i = 0; i < 4; i++) {
    out.push([0, 0, 0, 0]);
    for (let j = 0; j < 4; j++) {
      let s = 0;
      for (let k = 0; k < 4; k++) s += a[i][k] * b[k][j];
      out[i][j] = s;
    }
  }
  return out;
}

function axisRotation(axis: number[], angle: number): Mat4 {
  const [x, y, z] = axis;
  const c = Math.cos(angle);
  const s = Math.sin(angle);
  const t = 1 - c;
  return [
    [t * x * x + c, t * x * y - s * z, t * x * z + s * y, 0],
    [t * x * y + s * z, t * y * y + c, t * y * z - s * x, 0],
    [t * x * z - s * y, t * y * z + s * x, t * z * z + c, 0],
    [0, 0, 0, 1],
  ];
}

/** World positions of every frame origin: base, each joint, end effector. */
export function framePositions(chain: ChainData, q: number[]): number[][] {
  let T = chain.base_pose;
  const points: number[][] = [[T[0][3], T[1][3], T[2][3]]];
  chain.joints.forEach((joint, j) => {
    T = matmul(matmul(T, joint.origin), axisRotation(joint.axis, q[j] ?? 0));
    points.push([T[0][3], T[1][3], T[2][3]]);
  });
  T = matmul(T, chain.ee_offset);
  points.push([T[0][3], T[1][3], T[2][3]]);
  return points;
}
