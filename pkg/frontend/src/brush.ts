import { BACKGROUND } from "./types.js";

export type BrushMode = "paint" | "erase";

/**
 * Brush configuration. `radius` is a fraction of the mesh bounding-sphere
 * radius, clamped to (0, 0.5]; the world-space radius is derived per mesh.
 */
export interface BrushState {
  classId: number;
  radius: number;
  mode: BrushMode;
}

export const MIN_BRUSH_RADIUS = 0.005;
export const MAX_BRUSH_RADIUS = 0.5;

export function clampBrushRadius(radius: number): number {
  if (!Number.isFinite(radius)) return MIN_BRUSH_RADIUS;
  return Math.min(MAX_BRUSH_RADIUS, Math.max(MIN_BRUSH_RADIUS, radius));
}

/** Class id the brush writes: its class when painting, background on erase. */
export function brushTargetClass(brush: BrushState): number {
  return brush.mode === "erase" ? BACKGROUND : brush.classId;
}

/** Max distance from the vertex centroid (the normalization radius). */
export function boundingSphereRadius(positions: Float32Array): number {
  const n = positions.length / 3;
  let cx = 0, cy = 0, cz = 0;
  for (let i = 0; i < n; i++) {
    cx += positions[3 * i];
    cy += positions[3 * i + 1];
    cz += positions[3 * i + 2];
  }
  cx /= n; cy /= n; cz /= n;
  let best = 0;
  for (let i = 0; i < n; i++) {
    const dx = positions[3 * i] - cx;
    const dy = positions[3 * i + 1] - cy;
    const dz = positions[3 * i + 2] - cz;
    best = Math.max(best, dx * dx + dy * dy + dz * dz);
  }
  return Math.sqrt(best);
}

/**
 * Indices of all vertices within Euclidean `worldRadius` of the hit point
 * (mesh units), ascending. Euclidean, not geodesic: thin structures can be
 * painted through, which the live coloring makes visible and erasable.
 */
export function verticesWithinBrush(
  positions: Float32Array,
  hit: readonly [number, number, number],
  worldRadius: number,
): number[] {
  const r2 = worldRadius * worldRadius;
  const out: number[] = [];
  const n = positions.length / 3;
  for (let i = 0; i < n; i++) {
    const dx = positions[3 * i] - hit[0];
    const dy = positions[3 * i + 1] - hit[1];
    const dz = positions[3 * i + 2] - hit[2];
    if (dx * dx + dy * dy + dz * dz <= r2) out.push(i);
  }
  return out;
}
