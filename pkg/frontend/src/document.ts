/** The editor document: three binary layers, an undo stack of layer diffs,
 * and the invariants the service's label format demands. */

import {
  EllipseGeometry,
  Raster,
  StrokeGeometry,
  applyDiff,
  cloneRaster,
  diffRasters,
  fillEllipse,
  geometryInCanvas,
  makeRaster,
  paintStroke,
} from "./raster.js";

export type LayerName = "ovary" | "follicle" | "sketch";
export type ToolName = "ellipse" | "brush" | "eraser";

export interface Edit {
  tool: ToolName;
  layer: LayerName;
  geometry: EllipseGeometry | StrokeGeometry;
}

interface UndoEntry {
  /** XOR diffs per layer; identity for untouched layers is an empty entry. */
  diffs: Partial<Record<LayerName, Uint8Array>>;
}

export const UNDO_DEPTH = 50;

export interface EditResult {
  applied: boolean;
  /** Human-readable notices: locked layer, clipped follicle pixels, ... */
  warnings: string[];
}

export class EditorDocument {
  readonly resolution: number;
  layers: Record<LayerName, Raster>;
  locked: Record<LayerName, boolean> = {
    ovary: false,
    follicle: false,
    sketch: false,
  };
  lastResult: Uint8Array | null = null;
  private undoStack: UndoEntry[] = [];
  private redoStack: UndoEntry[] = [];

  constructor(resolution: number) {
    this.resolution = resolution;
    this.layers = {
      ovary: makeRaster(resolution, resolution),
      follicle: makeRaster(resolution, resolution),
      sketch: makeRaster(resolution, resolution),
    };
  }

  /** Replace all layers at once (seeding from a dataset label). */
  loadLayers(layers: Record<LayerName, Raster>): void {
    const before = this.snapshot();
    for (const name of ["ovary", "follicle", "sketch"] as LayerName[]) {
      if (layers[name].width !== this.resolution ||
          layers[name].height !== this.resolution) {
        throw new Error(
          `layer ${name} is ${layers[name].width}x${layers[name].height}, ` +
          `document is ${this.resolution}x${this.resolution}`);
      }
      this.layers[name] = cloneRaster(layers[name]);
    }
    this.enforceFollicleInsideOvary();
    this.pushUndo(before);
  }

  applyEdit(edit: Edit): EditResult {
    const warnings: string[] = [];
    if (this.locked[edit.layer]) {
      return { applied: false, warnings: [`layer ${edit.layer} is locked`] };
    }
    if (!geometryInCanvas(this.layers[edit.layer], edit.geometry)) {
      return { applied: false, warnings: ["edit outside the canvas"] };
    }
    const before = this.snapshot();
    const target = this.layers[edit.layer];
    if (edit.tool === "ellipse") {
      fillEllipse(target, edit.geometry as EllipseGeometry, 1);
    } else if (edit.tool === "brush") {
      paintStroke(target, edit.geometry as StrokeGeometry, 1);
    } else {
      if ("points" in edit.geometry) {
        paintStroke(target, edit.geometry, 0);
      } else {
        fillEllipse(target, edit.geometry, 0);
      }
    }
    const clipped = this.enforceFollicleInsideOvary();
    if (clipped > 0) {
      warnings.push(`${clipped} follicle pixel(s) outside the ovary were dropped`);
    }
    this.pushUndo(before);
    return { applied: true, warnings };
  }

  /** Drop follicle pixels not covered by the ovary; returns how many. */
  private enforceFollicleInsideOvary(): number {
    const f = this.layers.follicle;
    const o = this.layers.ovary;
    let clipped = 0;
    for (let i = 0; i < f.data.length; i++) {
      if (f.data[i] === 1 && o.data[i] === 0) {
        f.data[i] = 0;
        clipped++;
      }
    }
    return clipped;
  }

  private snapshot(): Record<LayerName, Raster> {
    return {
      ovary: cloneRaster(this.layers.ovary),
      follicle: cloneRaster(this.layers.follicle),
      sketch: cloneRaster(this.layers.sketch),
    };
  }

  private pushUndo(before: Record<LayerName, Raster>): void {
    const diffs: UndoEntry["diffs"] = {};
    let changed = false;
    for (const name of ["ovary", "follicle", "sketch"] as LayerName[]) {
      const d = diffRasters(before[name], this.layers[name]);
      if (d.some((v) => v !== 0)) {
        diffs[name] = d;
        changed = true;
      }
    }
    if (!changed) return;
    this.undoStack.push({ diffs });
    if (this.undoStack.length > UNDO_DEPTH) this.undoStack.shift();
    this.redoStack = [];
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  private applyEntry(entry: UndoEntry): void {
    for (const [name, diff] of Object.entries(entry.diffs)) {
      applyDiff(this.layers[name as LayerName], diff);
    }
  }

  /** XOR diffs are self-inverse, so undo and redo share one application. */
  undo(): boolean {
    const entry = this.undoStack.pop();
    if (!entry) return false;
    this.applyEntry(entry);
    this.redoStack.push(entry);
    return true;
  }

  redo(): boolean {
    const entry = this.redoStack.pop();
    if (!entry) return false;
    this.applyEntry(entry);
    this.undoStack.push(entry);
    return true;
  }
}
