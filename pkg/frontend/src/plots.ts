/**
 * Figure builders: 2-D locus curves with cusp markers, 3-D critical-set and
 * locus surfaces with cusp lines and umbilic markers, and side-by-side
 * scheme comparison panels.  All geometry comes verbatim from the JSON; the
 * only computation here is the orthographic projection.
 */
import { Diagram } from "./schema.js";
import { Scene, View, addCount, emptyScene, extendBounds, projector } from "./scene.js";
import { renderSVG, sideBySide } from "./svg.js";

const LOCUS_COLOR = "#b22222";
const SHEET_COLOR = "#4878a8";
const CUSP_LINE_COLOR = "#1a1a1a";
const MARKER_COLOR = "#111111";

function project2(scene: Scene, proj: (p: number[]) => [number, number, number], p: number[]): [number, number, number] {
  const [x, y, z] = proj(p);
  extendBounds(scene, [x, y]);
  return [x, y, z];
}

/** Fig.2-style: locus polyline(s) on the surface, cusp markers, base-point marker. */
export function buildLocus2DScene(diagram: Diagram, view: View): Scene {
  const scene = emptyScene();
  const proj = projector(view);
  const locus = diagram.locus;
  const paths = diagram.critical_set_paths ?? [];
  // ellipsoid context: the three principal ellipses
  if (diagram.meta.axes && diagram.meta.axes.length === 3) {
    const [a, b, c] = diagram.meta.axes;
    const ring = (f: (t: number) => number[]) => {
      const pts: [number, number][] = [];
      for (let i = 0; i <= 96; i++) {
        const t = (2 * Math.PI * i) / 96;
        const [x, y] = project2(scene, proj, f(t));
        pts.push([x, y]);
      }
      scene.nodes.push({ kind: "polyline", points: pts, depth: -100, stroke: "#cccccc", width: 0.8 });
    };
    ring((t) => [a * Math.cos(t), b * Math.sin(t), 0]);
    ring((t) => [a * Math.cos(t), 0, c * Math.sin(t)]);
    ring((t) => [0, b * Math.cos(t), c * Math.sin(t)]);
  }
  for (const path of paths) {
    const pts: [number, number][] = [];
    let depth = 0;
    for (const vid of path) {
      if (vid >= locus.length) continue;
      const [x, y, z] = project2(scene, proj, locus[vid]);
      pts.push([x, y]);
      depth = Math.max(depth, -z);
    }
    if (pts.length >= 2) {
      scene.nodes.push({ kind: "polyline", points: pts, depth, stroke: LOCUS_COLOR, width: 1.8 });
    }
  }
  if (paths.length === 0 && locus.length > 0) {
    // point cloud fallback (degenerate loci collapse to a cluster)
    for (const p of locus) {
      const [x, y, z] = project2(scene, proj, p);
      scene.nodes.push({ kind: "marker", at: [x, y], depth: -z, label: ".", color: LOCUS_COLOR, size: 1.0 });
    }
  }
  addCount(scene, "locus", locus.length);
  const cuspImages = (diagram as Record<string, unknown>)["cusps_locus"] as number[][] | undefined;
  for (const p of cuspImages ?? []) {
    if (!p) continue;
    const [x, y, z] = project2(scene, proj, p);
    scene.nodes.push({ kind: "marker", at: [x, y], depth: -z + 10, label: "*", color: MARKER_COLOR, size: 7 });
  }
  addCount(scene, "cusps", (cuspImages ?? []).length);
  const [bx, by, bz] = project2(scene, proj, diagram.meta.q0);
  scene.nodes.push({ kind: "marker", at: [bx, by], depth: -bz + 10, label: "*", color: "#b8860b", size: 9 });
  addCount(scene, "base", 1);
  return scene;
}

/** Figs.3-5 style: fold sheets, cusp polylines, umbilic markers. */
export function buildLocus3DScene(diagram: Diagram, view: View, mode: "locus" | "preimage"): Scene {
  const scene = emptyScene();
  const proj = projector(view);
  const verts = mode === "locus" ? diagram.locus : diagram.critical_set;
  const tris = diagram.critical_set_triangles ?? [];
  const projected: [number, number, number][] = verts.map((p) => project2(scene, proj, p.slice(0, 3)));
  for (const tri of tris) {
    if (tri.some((i) => i >= projected.length)) continue;
    const ps = tri.map((i) => projected[i]);
    const depth = (ps[0][2] + ps[1][2] + ps[2][2]) / 3;
    scene.nodes.push({
      kind: "polygon",
      points: ps.map((p) => [p[0], p[1]] as [number, number]),
      depth: -depth,
      fill: SHEET_COLOR,
      opacity: 0.35,
    });
  }
  addCount(scene, mode === "locus" ? "locus" : "critical_set", verts.length);
  for (const line of diagram.cusp_polylines ?? []) {
    const pts: [number, number][] = [];
    let depth = 0;
    for (const vid of line) {
      if (vid >= projected.length) continue;
      const p = projected[vid];
      pts.push([p[0], p[1]]);
      depth = Math.max(depth, -p[2]);
    }
    if (pts.length >= 2) {
      scene.nodes.push({ kind: "polyline", points: pts, depth: depth + 5, stroke: CUSP_LINE_COLOR, width: 1.6 });
    }
  }
  const key = mode === "locus" ? "umbilics_locus" : "umbilics";
  const umb = ((diagram as Record<string, unknown>)[key] as number[][] | undefined) ?? diagram.umbilics;
  for (const p of umb) {
    if (!p) continue;
    const [x, y, z] = project2(scene, proj, p.slice(0, 3));
    scene.nodes.push({ kind: "marker", at: [x, y], depth: -z + 20, label: "*", color: MARKER_COLOR, size: 8 });
  }
  addCount(scene, "umbilics", umb.length);
  return scene;
}

export function plotLocus2D(diagram: Diagram, view: View, title?: string): { svg: string; scene: Scene } {
  const scene = buildLocus2DScene(diagram, view);
  return { svg: renderSVG(scene, { title }), scene };
}

export function plotLocus3D(
  diagram: Diagram,
  view: View,
  mode: "locus" | "preimage",
  title?: string
): { svg: string; scene: Scene } {
  const scene = buildLocus3DScene(diagram, view, mode);
  return { svg: renderSVG(scene, { title }), scene };
}

export function plotComparePanels(
  diagrams: [Diagram, Diagram],
  labels: [string, string],
  view: View,
  mode: "locus" | "preimage"
): { svg: string; scenes: [Scene, Scene] } {
  const a = buildLocus3DScene(diagrams[0], view, mode);
  const b = buildLocus3DScene(diagrams[1], view, mode);
  const svg = sideBySide(
    renderSVG(a, { width: 640, height: 620 }),
    renderSVG(b, { width: 640, height: 620 }),
    labels
  );
  return { svg, scenes: [a, b] };
}
