// Virtual alignment markers.
//
// A marker is broadcast as a POI anchored to the node it was placed on, so
// every client resolves the same model-space pose. The flush orientation is
// derived locally from the picked surface normal.

import { Quat, Vec3 } from './viewCube.js';

/** Rotation taking the marker's +Z (tag normal) onto the surface normal, so
 * the marker lies flat on the face it was placed on. */
export function orientationFromNormal(normal: Vec3): Quat {
  const n = Math.hypot(normal[0], normal[1], normal[2]);
  if (n === 0) throw new Error('zero surface normal');
  const z: Vec3 = [normal[0] / n, normal[1] / n, normal[2] / n];
  const d = z[2]; // dot with +Z
  if (d > 1 - 1e-12) return [1, 0, 0, 0];
  if (d < -1 + 1e-12) return [0, 1, 0, 0]; // half turn about X
  // axis = +Z x z, angle = acos(d)
  const ax = -z[1];
  const ay = z[0];
  const alen = Math.hypot(ax, ay);
  const half = Math.acos(Math.min(1, Math.max(-1, d))) / 2;
  const s = Math.sin(half) / alen;
  return [Math.cos(half), ax * s, ay * s, 0];
}

export interface MarkerPlacement {
  position: Vec3;
  anchor: string;
  orientation: Quat;
}

export function markerPlacement(position: Vec3, normal: Vec3, anchor: string): MarkerPlacement {
  return { position, anchor, orientation: orientationFromNormal(normal) };
}
