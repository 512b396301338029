/** Synthetic PNG archives for the converter tests.
 *
 * Pixel bytes come from a pure integer hash of (tag, frame, row, col,
 * channel), so a test can regenerate any pixel independently of the
 * converter and two runs of a builder produce identical files.
 */

import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import pngjs from "pngjs";

const { PNG } = pngjs;

export function pixelByte(tag: number, frame: number, row: number, col: number, c: number): number {
  let h = (Math.imul(tag, 2654435761) + Math.imul(frame, 40503)) >>> 0;
  h = (h + Math.imul(row, 929) + Math.imul(col, 17) + c * 5 + 1) >>> 0;
  h = (h ^ (h >>> 13)) >>> 0;
  h = Math.imul(h, 2246822519) >>> 0;
  return (h ^ (h >>> 11)) & 0xff;
}

export function writePng(
  file: string,
  width: number,
  height: number,
  byteAt: (row: number, col: number, c: number) => number,
): void {
  const png = new PNG({ width, height });
  for (let row = 0; row < height; row++) {
    for (let col = 0; col < width; col++) {
      const i = 4 * (width * row + col);
      png.data[i] = byteAt(row, col, 0);
      png.data[i + 1] = byteAt(row, col, 1);
      png.data[i + 2] = byteAt(row, col, 2);
      png.data[i + 3] = 255;
    }
  }
  fs.writeFileSync(file, PNG.sync.write(png));
}

/** Build `<root>/<name>/<name>-NNN.png` frame sets plus a decoy maps/
 * subdirectory per object, mirroring the real archive's layout. The
 * object's 1-based position in `objects` seeds its pixel content. */
export function makeArchive(
  root: string,
  objects: readonly string[],
  frames = 41,
  size = 128,
): void {
  objects.forEach((name, oi) => {
    const dir = path.join(root, name);
    fs.mkdirSync(dir, { recursive: true });
    for (let f = 0; f < frames; f++) {
      writePng(
        path.join(dir, `${name}-${String(f).padStart(3, "0")}.png`),
        size,
        size,
        (row, col, c) => pixelByte(oi + 1, f, row, col, c),
      );
    }
    const maps = path.join(dir, "maps");
    fs.mkdirSync(maps, { recursive: true });
    writePng(path.join(maps, `${name}-map.png`), 8, 8, () => 0);
  });
}

export function mkdtemp(prefix: string): string {
  return fs.mkdtempSync(path.join(fs.realpathSync(os.tmpdir()), prefix));
}
