/** Conversion between editor documents and the service's label wire
 * format: an RGB PNG with R=ovary, G=follicle, B=sketch, 255 = on. */

import { EditorDocument, LayerName } from "./document.js";
import { Raster, makeRaster } from "./raster.js";
import { decodePng, encodeRgbPng } from "./png.js";

/** Serialize the document's layers. The sketch is masked out wherever an
 * object mask is set, so the export always satisfies the service's
 * "sketch only on background" rule; the document itself is untouched. */
export function exportLabel(doc: EditorDocument): Uint8Array {
  const n = doc.resolution;
  const rgb = new Uint8Array(3 * n * n);
  const { ovary, follicle, sketch } = doc.layers;
  for (let i = 0; i < n * n; i++) {
    const onMask = ovary.data[i] === 1 || follicle.data[i] === 1;
    rgb[3 * i] = ovary.data[i] ? 255 : 0;
    rgb[3 * i + 1] = follicle.data[i] ? 255 : 0;
    rgb[3 * i + 2] = sketch.data[i] && !onMask ? 255 : 0;
  }
  return encodeRgbPng(n, n, rgb);
}

/** Parse a label PNG back into three binary layers (threshold at 128). */
export async function importLabel(
    bytes: Uint8Array): Promise<Record<LayerName, Raster>> {
  const img = await decodePng(bytes);
  if (img.channels !== 3) {
    throw new Error(`label PNG must be RGB, got ${img.channels} channel(s)`);
  }
  const layers: Record<LayerName, Raster> = {
    ovary: makeRaster(img.width, img.height),
    follicle: makeRaster(img.width, img.height),
    sketch: makeRaster(img.width, img.height),
  };
  for (let i = 0; i < img.width * img.height; i++) {
    layers.ovary.data[i] = img.pixels[3 * i] >= 128 ? 1 : 0;
    layers.follicle.data[i] = img.pixels[3 * i + 1] >= 128 ? 1 : 0;
    layers.sketch.data[i] = img.pixels[3 * i + 2] >= 128 ? 1 : 0;
  }
  return layers;
}
