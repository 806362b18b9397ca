// View cube: canned camera orientations and the transition animation.
//
// Clicking a face, edge or corner reorients the camera onto that direction
// looking back at the model center. Quaternions are [w, x, y, z].

export type Quat = [number, number, number, number];
export type Vec3 = [number, number, number];

function norm3(v: Vec3): Vec3 {
  const n = Math.hypot(v[0], v[1], v[2]);
  if (n === 0) throw new Error('zero direction');
  return [v[0] / n, v[1] / n, v[2] / n];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
}

// quaternion from an orthonormal camera basis: x=right, y=up, z=back
function quatFromBasis(x: Vec3, y: Vec3, z: Vec3): Quat {
  const m00 = x[0], m01 = y[0], m02 = z[0];
  const m10 = x[1], m11 = y[1], m12 = z[1];
  const m20 = x[2], m21 = y[2], m22 = z[2];
  const trace = m00 + m11 + m22;
  let w: number, qx: number, qy: number, qz: number;
  if (trace > 0) {
    const s = Math.sqrt(trace + 1) * 2;
    w = s / 4;
    qx = (m21 - m12) / s;
    qy = (m02 - m20) / s;
    qz = (m10 - m01) / s;
  } else if (m00 > m11 && m00 > m22) {
    const s = Math.sqrt(1 + m00 - m11 - m22) * 2;
    w = (m21 - m12) / s;
    qx = s / 4;
    qy = (m01 + m10) / s;
    qz = (m02 + m20) / s;
  } else if (m11 > m22) {
    const s = Math.sqrt(1 + m11 - m00 - m22) * 2;
    w = (m02 - m20) / s;
    qx = (m01 + m10) / s;
    qy = s / 4;
    qz = (m12 + m21) / s;
  } else {
    const s = Math.sqrt(1 + m22 - m00 - m11) * 2;
    w = (m10 - m01) / s;
    qx = (m02 + m20) / s;
    qy = (m12 + m21) / s;
    qz = s / 4;
  }
  return w >= 0 ? [w, qx, qy, qz] : [-w, -qx, -qy, -qz];
}

export function quatRotate(q: Quat, v: Vec3): Vec3 {
  const [w, x, y, z] = q;
  // v + 2w(u x v) + 2(u x (u x v)) with u = (x,y,z)
  const u: Vec3 = [x, y, z];
  const uv = cross(u, v);
  const uuv = cross(u, uv);
  return [
    v[0] + 2 * (w * uv[0] + uuv[0]),
    v[1] + 2 * (w * uv[1] + uuv[1]),
    v[2] + 2 * (w * uv[2] + uuv[2]),
  ];
}

export interface CubeOrientation {
  // unit vector from model center toward the camera
  direction: Vec3;
  // camera orientation; -z of the camera basis points at the center
  orientation: Quat;
}

const UP: Vec3 = [0, 0, 1];

/** Orientation for a view-cube pick. The pick is the outward cell direction
 * with components in {-1, 0, 1}: faces have one nonzero component, edges
 * two, corners three. Clicking the +X face leaves the camera on +X looking
 * down -X at the center. */
export function viewCubeOrientation(pick: Vec3): CubeOrientation {
  for (const c of pick) {
    if (c !== -1 && c !== 0 && c !== 1) {
      throw new Error(`view cube pick components must be -1, 0 or 1, got ${JSON.stringify(pick)}`);
    }
  }
  const dir = norm3(pick);
  const back = dir; // camera +z points away from the look target
  const fwd: Vec3 = [-back[0], -back[1], -back[2]];
  // top and bottom faces look straight along the up axis; pick a stable
  // secondary up so the basis stays right-handed
  const upRef: Vec3 = Math.abs(fwd[0]) < 1e-9 && Math.abs(fwd[1]) < 1e-9 ? [0, 1, 0] : UP;
  const right = norm3(cross(fwd, upRef));
  const up = cross(right, fwd);
  return { direction: dir, orientation: quatFromBasis(right, up, back) };
}

export function slerp(a: Quat, b: Quat, t: number): Quat {
  let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3];
  let bb = b;
  if (dot < 0) {
    bb = [-b[0], -b[1], -b[2], -b[3]];
    dot = -dot;
  }
  if (dot > 0.9995) {
    // nearly parallel: lerp and renormalize
    const out: Quat = [
      a[0] + t * (bb[0] - a[0]),
      a[1] + t * (bb[1] - a[1]),
      a[2] + t * (bb[2] - a[2]),
      a[3] + t * (bb[3] - a[3]),
    ];
    const n = Math.hypot(out[0], out[1], out[2], out[3]);
    return [out[0] / n, out[1] / n, out[2] / n, out[3] / n];
  }
  const theta = Math.acos(dot);
  const s = Math.sin(theta);
  const wa = Math.sin((1 - t) * theta) / s;
  const wb = Math.sin(t * theta) / s;
  return [
    wa * a[0] + wb * bb[0],
    wa * a[1] + wb * bb[1],
    wa * a[2] + wb * bb[2],
    wa * a[3] + wb * bb[3],
  ];
}

/** Fixed-duration orientation transition. Sampling at or past the duration
 * returns the exact target quaternion, not an interpolant. */
export class OrientationAnimation {
  readonly from: Quat;
  readonly to: Quat;
  readonly durationMs: number;
  readonly startMs: number;

  constructor(from: Quat, to: Quat, durationMs = 400, startMs = 0) {
    this.from = from;
    this.to = to;
    this.durationMs = durationMs;
    this.startMs = startMs;
  }

  done(nowMs: number): boolean {
    return nowMs - this.startMs >= this.durationMs;
  }

  at(nowMs: number): Quat {
    const t = (nowMs - this.startMs) / this.durationMs;
    if (t >= 1) return this.to;
    if (t <= 0) return this.from;
    return slerp(this.from, this.to, t);
  }
}
