/**
 * Scene model and 3-D -> 2-D projection.
 *
 * Rendering is a pure function of the input JSON: the scene graph (and the
 * SVG derived from it) is reproducible byte-for-byte for identical inputs.
 */

export type Vec3 = [number, number, number];

export interface Polyline {
  kind: "polyline";
  points: [number, number][];
  depth: number;
  stroke: string;
  width: number;
}

export interface Polygon {
  kind: "polygon";
  points: [number, number][];
  depth: number;
  fill: string;
  opacity: number;
}

export interface Marker {
  kind: "marker";
  at: [number, number];
  depth: number;
  label: string; // drawn as the classical asterisk
  color: string;
  size: number;
}

export type SceneNode = Polyline | Polygon | Marker;

export interface Scene {
  nodes: SceneNode[];
  /** number of source vertices represented, by group (for integrity checks) */
  vertexCounts: Record<string, number>;
  bounds: { lo: [number, number]; hi: [number, number] };
}

export interface View {
  elev: number; // degrees
  azim: number; // degrees
}

/** Orthographic camera basis for elevation/azimuth angles (degrees). */
export function projector(view: View): (p: number[]) => [number, number, number] {
  const el = (view.elev * Math.PI) / 180;
  const az = (view.azim * Math.PI) / 180;
  // forward: direction from the camera towards the origin
  const f: Vec3 = [
    -Math.cos(el) * Math.cos(az),
    -Math.cos(el) * Math.sin(az),
    -Math.sin(el),
  ];
  const upWorld: Vec3 = [0, 0, 1];
  const right = normalize(cross(f, upWorld));
  const up = cross(right, f);
  return (p: number[]) => {
    const v: Vec3 = [p[0] ?? 0, p[1] ?? 0, p[2] ?? 0];
    return [dot(v, right), dot(v, up), dot(v, f)];
  };
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
}

function dot(a: Vec3, b: Vec3): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

function normalize(a: Vec3): Vec3 {
  const n = Math.hypot(a[0], a[1], a[2]) || 1;
  return [a[0] / n, a[1] / n, a[2] / n];
}

export function emptyScene(): Scene {
  return {
    nodes: [],
    vertexCounts: {},
    bounds: { lo: [Infinity, Infinity], hi: [-Infinity, -Infinity] },
  };
}

export function extendBounds(scene: Scene, p: [number, number]): void {
  scene.bounds.lo[0] = Math.min(scene.bounds.lo[0], p[0]);
  scene.bounds.lo[1] = Math.min(scene.bounds.lo[1], p[1]);
  scene.bounds.hi[0] = Math.max(scene.bounds.hi[0], p[0]);
  scene.bounds.hi[1] = Math.max(scene.bounds.hi[1], p[1]);
}

export function addCount(scene: Scene, group: string, n: number): void {
  scene.vertexCounts[group] = (scene.vertexCounts[group] ?? 0) + n;
}
