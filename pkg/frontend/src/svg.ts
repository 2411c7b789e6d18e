/** Minimal deterministic SVG writer (painter's algorithm by depth). */
import { Scene, SceneNode } from "./scene.js";

function fmt(x: number): string {
  return x.toFixed(3);
}

function pathOf(points: [number, number][], tx: (p: [number, number]) => [number, number]): string {
  return points
    .map((p, i) => {
      const [x, y] = tx(p);
      return `${i === 0 ? "M" : "L"}${fmt(x)} ${fmt(y)}`;
    })
    .join(" ");
}

function asterisk(at: [number, number], size: number, color: string, tx: (p: [number, number]) => [number, number]): string {
  const [x, y] = tx(at);
  const arms: string[] = [];
  for (let k = 0; k < 3; k++) {
    const a = (Math.PI * k) / 3 + Math.PI / 6;
    const dx = Math.cos(a) * size;
    const dy = Math.sin(a) * size;
    arms.push(
      `<line x1="${fmt(x - dx)}" y1="${fmt(y - dy)}" x2="${fmt(x + dx)}" y2="${fmt(y + dy)}" stroke="${color}" stroke-width="1.6"/>`
    );
  }
  return `<g>${arms.join("")}</g>`;
}

export interface RenderOptions {
  width?: number;
  height?: number;
  margin?: number;
  title?: string;
}

export function renderSVG(scene: Scene, opts: RenderOptions = {}): string {
  const W = opts.width ?? 640;
  const H = opts.height ?? 640;
  const margin = opts.margin ?? 40;
  const { lo, hi } = scene.bounds;
  const spanX = Math.max(hi[0] - lo[0], 1e-9);
  const spanY = Math.max(hi[1] - lo[1], 1e-9);
  const scale = Math.min((W - 2 * margin) / spanX, (H - 2 * margin) / spanY);
  const cx = (lo[0] + hi[0]) / 2;
  const cy = (lo[1] + hi[1]) / 2;
  const tx = (p: [number, number]): [number, number] => [
    W / 2 + (p[0] - cx) * scale,
    H / 2 - (p[1] - cy) * scale,
  ];

  const ordered = [...scene.nodes].sort((a, b) => a.depth - b.depth);
  const body = ordered.map((node: SceneNode) => {
    if (node.kind === "polygon") {
      const pts = node.points.map((p) => tx(p).map(fmt).join(",")).join(" ");
      return `<polygon points="${pts}" fill="${node.fill}" fill-opacity="${node.opacity}" stroke="none"/>`;
    }
    if (node.kind === "polyline") {
      return `<path d="${pathOf(node.points, tx)}" fill="none" stroke="${node.stroke}" stroke-width="${node.width}"/>`;
    }
    return asterisk(node.at, node.size, node.color, tx);
  });
  const title = opts.title ? `<text x="${W / 2}" y="${margin / 2 + 6}" text-anchor="middle" font-family="sans-serif" font-size="15">${opts.title}</text>` : "";
  return [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${W}" height="${H}" viewBox="0 0 ${W} ${H}">`,
    `<rect width="${W}" height="${H}" fill="white"/>`,
    title,
    ...body,
    "</svg>",
  ].join("\n");
}

export function sideBySide(left: string, right: string, labels: [string, string]): string {
  const W = 1320;
  const H = 680;
  const inner = (svg: string, x: number, label: string) =>
    `<g transform="translate(${x},30)">${svg.replace(/<svg[^>]*>/, "").replace("</svg>", "")}</g>` +
    `<text x="${x + 320}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">${label}</text>`;
  return [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${W}" height="${H}" viewBox="0 0 ${W} ${H}">`,
    `<rect width="${W}" height="${H}" fill="white"/>`,
    inner(left, 10, labels[0]),
    inner(right, 670, labels[1]),
    "</svg>",
  ].join("\n");
}
