/** Binary rasters and the geometric primitives the editing tools use. */

export interface Raster {
  readonly width: number;
  readonly height: number;
  /** One byte per pixel, 0 or 1, row-major. */
  data: Uint8Array;
}

export function makeRaster(width: number, height: number): Raster {
  return { width, height, data: new Uint8Array(width * height) };
}

export function cloneRaster(r: Raster): Raster {
  return { width: r.width, height: r.height, data: r.data.slice() };
}

export function rastersEqual(a: Raster, b: Raster): boolean {
  if (a.width !== b.width || a.height !== b.height) return false;
  for (let i = 0; i < a.data.length; i++) {
    if (a.data[i] !== b.data[i]) return false;
  }
  return true;
}

export function pixelCount(r: Raster): number {
  let n = 0;
  for (let i = 0; i < r.data.length; i++) n += r.data[i];
  return n;
}

/** XOR difference between two same-size rasters; applying it to either
 * raster yields the other, so a diff is its own inverse. */
export function diffRasters(before: Raster, after: Raster): Uint8Array {
  const out = new Uint8Array(before.data.length);
  for (let i = 0; i < out.length; i++) {
    out[i] = before.data[i] ^ after.data[i];
  }
  return out;
}

export function applyDiff(r: Raster, diff: Uint8Array): void {
  for (let i = 0; i < diff.length; i++) r.data[i] ^= diff[i];
}

export interface EllipseGeometry {
  cx: number;
  cy: number;
  rx: number;
  ry: number;
}

export interface StrokeGeometry {
  /** Polyline in pixel coordinates. */
  points: { x: number; y: number }[];
  radius: number;
}

/** A pixel belongs to the ellipse when its center lies inside; no
 * antialiasing, so the painted area is exactly the set of such centers. */
export function fillEllipse(r: Raster, g: EllipseGeometry, value: 0 | 1): void {
  const x0 = Math.max(0, Math.floor(g.cx - g.rx));
  const x1 = Math.min(r.width - 1, Math.ceil(g.cx + g.rx));
  const y0 = Math.max(0, Math.floor(g.cy - g.ry));
  const y1 = Math.min(r.height - 1, Math.ceil(g.cy + g.ry));
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      const dx = (x + 0.5 - g.cx) / g.rx;
      const dy = (y + 0.5 - g.cy) / g.ry;
      if (dx * dx + dy * dy <= 1.0) r.data[y * r.width + x] = value;
    }
  }
}

export function ellipsePixelCount(r: Raster, g: EllipseGeometry): number {
  const probe = makeRaster(r.width, r.height);
  fillEllipse(probe, g, 1);
  return pixelCount(probe);
}

function stampDisc(r: Raster, cx: number, cy: number, radius: number,
                   value: 0 | 1): void {
  fillEllipse(r, { cx, cy, rx: Math.max(radius, 0.5), ry: Math.max(radius, 0.5) }, value);
  // a thin brush centered on a pixel corner can miss every pixel center;
  // always touch the pixel under the cursor
  const x = Math.min(r.width - 1, Math.max(0, Math.floor(cx)));
  const y = Math.min(r.height - 1, Math.max(0, Math.floor(cy)));
  r.data[y * r.width + x] = value;
}

/** Paint (or erase) discs along each polyline segment. */
export function paintStroke(r: Raster, g: StrokeGeometry, value: 0 | 1): void {
  if (g.points.length === 0) return;
  const step = Math.max(0.25, g.radius / 2);
  let prev = g.points[0];
  stampDisc(r, prev.x, prev.y, g.radius, value);
  for (let i = 1; i < g.points.length; i++) {
    const cur = g.points[i];
    const len = Math.hypot(cur.x - prev.x, cur.y - prev.y);
    const n = Math.max(1, Math.ceil(len / step));
    for (let k = 1; k <= n; k++) {
      const t = k / n;
      stampDisc(r, prev.x + t * (cur.x - prev.x),
                prev.y + t * (cur.y - prev.y), g.radius, value);
    }
    prev = cur;
  }
}

export function geometryInCanvas(r: Raster,
                                 g: EllipseGeometry | StrokeGeometry): boolean {
  if ("points" in g) {
    return g.points.every(
      (p) => p.x >= 0 && p.x <= r.width && p.y >= 0 && p.y <= r.height);
  }
  return g.cx >= 0 && g.cx <= r.width && g.cy >= 0 && g.cy <= r.height;
}
