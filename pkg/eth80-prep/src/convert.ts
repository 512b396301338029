/** Converting ETH-80 objects into GBTD tensor containers.
 *
 * Each object becomes one container of dims (41, 16384, 3) = (frame,
 * pixel, color): 41 views, 128*128 pixels vectorized per frame, RGB.
 * Intensities are stored as float64 in [0, 1] (raw byte / 255; the
 * choice is recorded in the container metadata and the manifest).
 *
 * Vectorization follows the column-major rule used everywhere in the
 * container format: within a frame, pixel index = row + 128*col, and the
 * (frame, pixel, color) entries are laid out with the frame index
 * fastest. Un-vectorizing one frame with a column-major reshape to
 * (128, 128, 3) therefore reproduces the source image exactly.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import pngjs from "pngjs";

import { FRAME_COUNT, ObjectRecord, scanArchive } from "./archive.js";
import { encodeContainer } from "./container.js";
import { ImageDecodeError, ImageSizeError, MissingFramesError } from "./errors.js";

const { PNG } = pngjs;

export const IMAGE_SIZE = 128;
export const PIXELS = IMAGE_SIZE * IMAGE_SIZE;
export const CHANNELS = 3;
export const EXPECTED_OBJECTS = 80; // 8 categories x 10 objects

const SCALE_NOTE = "intensity/255";
const PIXEL_ORDER_NOTE = "pixel = row + rows*col (column-major within each frame)";

export interface Frame {
  name: string;
  width: number;
  height: number;
  /** RGBA bytes, row-major, 4 per pixel (the PNG decoder's layout). */
  rgba: Uint8Array;
}

/** Decode one PNG file into 8-bit RGBA. */
export function decodePng(file: string): Frame {
  let png;
  try {
    png = PNG.sync.read(fs.readFileSync(file));
  } catch (exc) {
    throw new ImageDecodeError(`${file}: ${exc instanceof Error ? exc.message : String(exc)}`);
  }
  return { name: path.basename(file), width: png.width, height: png.height, rgba: png.data };
}

/** Pack decoded frames into one column-major (n_frames, pixels, 3) payload.
 *
 * All frames must share one size; the frame index varies fastest, then the
 * pixel index (row + rows*col), then the color channel.
 */
export function packFrames(frames: readonly Frame[]): Float64Array {
  const { width, height } = frames[0];
  for (const f of frames) {
    if (f.width !== width || f.height !== height) {
      throw new ImageSizeError(
        `${f.name} is ${f.width}x${f.height}; other frames are ${width}x${height}`,
      );
    }
  }
  const nFrames = frames.length;
  const pixels = width * height;
  const out = new Float64Array(nFrames * pixels * CHANNELS);
  for (let f = 0; f < nFrames; f++) {
    const rgba = frames[f].rgba;
    for (let col = 0; col < width; col++) {
      for (let row = 0; row < height; row++) {
        const p = row + height * col;
        const src = 4 * (width * row + col);
        for (let c = 0; c < CHANNELS; c++) {
          out[f + nFrames * (p + pixels * c)] = rgba[src + c] / 255;
        }
      }
    }
  }
  return out;
}

/** Load, validate, and pack one object's frames. */
export function packObject(obj: ObjectRecord): { values: Float64Array; metadata: object } {
  if (obj.frames.length !== FRAME_COUNT) {
    throw new MissingFramesError(
      `${obj.dir} holds ${obj.frames.length} frames; expected ${FRAME_COUNT}`,
    );
  }
  const frames = obj.frames.map((name) => {
    const frame = decodePng(path.join(obj.dir, name));
    if (frame.width !== IMAGE_SIZE || frame.height !== IMAGE_SIZE) {
      throw new ImageSizeError(
        `${path.join(obj.dir, name)} is ${frame.width}x${frame.height}; expected ${IMAGE_SIZE}x${IMAGE_SIZE}`,
      );
    }
    return frame;
  });
  const metadata = {
    source: "eth80",
    category: obj.category,
    object_index: obj.index,
    frames: obj.frames,
    scale: SCALE_NOTE,
    pixel_order: PIXEL_ORDER_NOTE,
  };
  return { values: packFrames(frames), metadata };
}

export interface ConvertedObject {
  name: string;
  category: string;
  file: string;
}

export interface ConvertResult {
  objects: ConvertedObject[];
  outDir: string;
}

function sortKeys(value: unknown): unknown {
  if (Array.isArray(value)) return value.map(sortKeys);
  if (value !== null && typeof value === "object") {
    const src = value as Record<string, unknown>;
    const out: Record<string, unknown> = {};
    for (const k of Object.keys(src).sort()) out[k] = sortKeys(src[k]);
    return out;
  }
  return value;
}

function writeJson(file: string, value: unknown): void {
  fs.writeFileSync(file, JSON.stringify(sortKeys(value), null, 2) + "\n");
}

/** Convert every object under archiveDir into containers under outDir.
 *
 * Emits one `<name>.gbtd` per object plus `labels.json` (container file
 * name -> category) and `manifest.json` (artifact list and preprocessing
 * record). Output depends only on the archive contents, so re-running is
 * bit-identical. Object count is reported but not enforced: partial
 * archives convert fine, with a warning when the count is not 80.
 */
export function convertArchive(
  archiveDir: string,
  outDir: string,
  log: (line: string) => void = () => {},
): ConvertResult {
  const objects = scanArchive(archiveDir);
  fs.mkdirSync(outDir, { recursive: true });
  const converted: ConvertedObject[] = [];
  const labels: Record<string, string> = {};
  for (const obj of objects) {
    const { values, metadata } = packObject(obj);
    const file = `${obj.name}.gbtd`;
    fs.writeFileSync(
      path.join(outDir, file),
      encodeContainer([FRAME_COUNT, PIXELS, CHANNELS], values, metadata),
    );
    labels[file] = obj.category;
    converted.push({ name: obj.name, category: obj.category, file });
    log(`${obj.name}: ${obj.frames.length} frames -> ${file}`);
  }
  writeJson(path.join(outDir, "labels.json"), labels);
  writeJson(path.join(outDir, "manifest.json"), {
    containers: converted.map((c) => c.file),
    labels: "labels.json",
    dims: [FRAME_COUNT, PIXELS, CHANNELS],
    scale: SCALE_NOTE,
    pixel_order: PIXEL_ORDER_NOTE,
  });
  return { objects: converted, outDir };
}
