/** Single-page label editor: three-layer pixel canvas at 8x zoom, tools,
 * undo, and a synthesis panel talking to the inference service. */

import { ServiceClient, ServiceError } from "./api.js";
import { EditorDocument, LayerName, ToolName } from "./document.js";
import { exportLabel, importLabel } from "./label.js";
import { decodePng } from "./png.js";
import { StrokeGeometry } from "./raster.js";

const ZOOM = 8;
const LAYER_COLORS: Record<LayerName, string> = {
  ovary: "rgba(200, 60, 60, 0.55)",
  follicle: "rgba(60, 180, 80, 0.8)",
  sketch: "rgba(80, 120, 255, 0.9)",
};

interface UiState {
  doc: EditorDocument;
  tool: ToolName;
  layer: LayerName;
  brushRadius: number;
  stroke: StrokeGeometry | null;
  ellipseStart: { x: number; y: number } | null;
  showResult: boolean; // before/after toggle
  resultUrl: string | null;
  serviceUp: boolean;
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setStatus(text: string, isError = false): void {
  const bar = el<HTMLDivElement>("status");
  bar.textContent = text;
  bar.className = isError ? "status error" : "status";
}

function canvasCoords(canvas: HTMLCanvasElement,
                      ev: MouseEvent): { x: number; y: number } {
  const rect = canvas.getBoundingClientRect();
  return {
    x: (ev.clientX - rect.left) / ZOOM,
    y: (ev.clientY - rect.top) / ZOOM,
  };
}

function draw(state: UiState, canvas: HTMLCanvasElement): void {
  const n = state.doc.resolution;
  const ctx = canvas.getContext("2d")!;
  ctx.fillStyle = "#111";
  ctx.fillRect(0, 0, n * ZOOM, n * ZOOM);
  for (const name of ["ovary", "follicle", "sketch"] as LayerName[]) {
    ctx.fillStyle = LAYER_COLORS[name];
    const r = state.doc.layers[name];
    for (let y = 0; y < n; y++) {
      for (let x = 0; x < n; x++) {
        if (r.data[y * n + x]) ctx.fillRect(x * ZOOM, y * ZOOM, ZOOM, ZOOM);
      }
    }
  }
  ctx.strokeStyle = "rgba(255,255,255,0.12)";
  ctx.lineWidth = 1;
  for (let i = 0; i <= n; i++) {
    ctx.beginPath();
    ctx.moveTo(i * ZOOM + 0.5, 0);
    ctx.lineTo(i * ZOOM + 0.5, n * ZOOM);
    ctx.stroke();
    ctx.beginPath();
    ctx.moveTo(0, i * ZOOM + 0.5);
    ctx.lineTo(n * ZOOM, i * ZOOM + 0.5);
    ctx.stroke();
  }
}

async function showResult(state: UiState, png: Uint8Array,
                          millis: number): Promise<void> {
  if (state.resultUrl) URL.revokeObjectURL(state.resultUrl);
  state.resultUrl = URL.createObjectURL(
    new Blob([png as BlobPart], { type: "image/png" }));
  const img = el<HTMLImageElement>("result");
  img.src = state.resultUrl;
  img.style.display = "block";
  el<HTMLSpanElement>("latency").textContent = `${millis} ms`;
  const decoded = await decodePng(png);
  el<HTMLSpanElement>("result-size").textContent =
    `${decoded.width}×${decoded.height}`;
}

async function main(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const serviceUrl = params.get("service") ?? "http://127.0.0.1:8750";
  const client = new ServiceClient(serviceUrl);

  let resolution = 64;
  let up = await client.health();
  if (up) {
    try {
      resolution = (await client.info()).resolution;
    } catch {
      up = false;
    }
  }

  const state: UiState = {
    doc: new EditorDocument(resolution),
    tool: "ellipse",
    layer: "ovary",
    brushRadius: 1,
    stroke: null,
    ellipseStart: null,
    showResult: true,
    resultUrl: null,
    serviceUp: up,
  };

  const canvas = el<HTMLCanvasElement>("editor");
  canvas.width = resolution * ZOOM;
  canvas.height = resolution * ZOOM;

  const synthButton = el<HTMLButtonElement>("synthesize");
  synthButton.disabled = !up;
  setStatus(up ? `service ${serviceUrl} (model ${resolution}×${resolution})`
               : `service ${serviceUrl} unreachable — editing only`, !up);

  el<HTMLSelectElement>("tool").addEventListener("change", (e) => {
    state.tool = (e.target as HTMLSelectElement).value as ToolName;
  });
  el<HTMLSelectElement>("layer").addEventListener("change", (e) => {
    state.layer = (e.target as HTMLSelectElement).value as LayerName;
  });
  el<HTMLInputElement>("radius").addEventListener("change", (e) => {
    state.brushRadius = Number((e.target as HTMLInputElement).value);
  });

  el<HTMLButtonElement>("undo").addEventListener("click", () => {
    state.doc.undo();
    draw(state, canvas);
  });
  el<HTMLButtonElement>("redo").addEventListener("click", () => {
    state.doc.redo();
    draw(state, canvas);
  });
  window.addEventListener("keydown", (e) => {
    if ((e.ctrlKey || e.metaKey) && e.key === "z") {
      if (e.shiftKey) state.doc.redo();
      else state.doc.undo();
      draw(state, canvas);
    }
  });

  canvas.addEventListener("mousedown", (ev) => {
    const p = canvasCoords(canvas, ev);
    if (state.tool === "ellipse") {
      state.ellipseStart = p;
    } else {
      state.stroke = { points: [p], radius: state.brushRadius };
    }
  });
  canvas.addEventListener("mousemove", (ev) => {
    if (state.stroke) state.stroke.points.push(canvasCoords(canvas, ev));
  });
  canvas.addEventListener("mouseup", (ev) => {
    const p = canvasCoords(canvas, ev);
    let result;
    if (state.tool === "ellipse" && state.ellipseStart) {
      const s = state.ellipseStart;
      result = state.doc.applyEdit({
        tool: "ellipse",
        layer: state.layer,
        geometry: {
          cx: (s.x + p.x) / 2,
          cy: (s.y + p.y) / 2,
          rx: Math.max(0.5, Math.abs(p.x - s.x) / 2),
          ry: Math.max(0.5, Math.abs(p.y - s.y) / 2),
        },
      });
      state.ellipseStart = null;
    } else if (state.stroke) {
      state.stroke.points.push(p);
      result = state.doc.applyEdit({
        tool: state.tool,
        layer: state.layer,
        geometry: state.stroke,
      });
      state.stroke = null;
    }
    if (result && result.warnings.length) {
      setStatus(result.warnings.join("; "), !result.applied);
    }
    draw(state, canvas);
  });

  synthButton.addEventListener("click", async () => {
    setStatus("synthesizing…");
    try {
      const out = await client.synthesize(exportLabel(state.doc));
      if (out === null) return; // superseded by a newer request
      await showResult(state, out.png, out.millis);
      setStatus("done");
    } catch (err) {
      if (err instanceof ServiceError) {
        setStatus(err.message, true);
      } else {
        setStatus(`network failure: ${String(err)} — retry when ready`, true);
      }
    }
  });

  el<HTMLButtonElement>("seed").addEventListener("click", async () => {
    const dataUrl = params.get("data") ?? "./data";
    try {
      const listing = await fetch(`${dataUrl}/labels.json`);
      const names: string[] = await listing.json();
      if (!names.length) throw new Error("empty dataset listing");
      const name = names[Math.floor(Math.random() * names.length)];
      const png = new Uint8Array(
        await (await fetch(`${dataUrl}/${name}`)).arrayBuffer());
      state.doc.loadLayers(await importLabel(png));
      setStatus(`loaded ${name}`);
      draw(state, canvas);
    } catch (err) {
      setStatus(`could not load a dataset label: ${String(err)}`, true);
    }
  });

  el<HTMLButtonElement>("toggle").addEventListener("click", () => {
    state.showResult = !state.showResult;
    el<HTMLImageElement>("result").style.visibility =
      state.showResult ? "visible" : "hidden";
  });

  draw(state, canvas);
}

main().catch((err) => setStatus(String(err), true));
