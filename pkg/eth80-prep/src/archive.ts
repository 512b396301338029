/** Locating objects inside an extracted ETH-80 archive.
 *
 * The archive is a directory tree whose leaf directories each hold the 41
 * view images of one object, named `<category><index>` ("apple1" ...
 * "tomato10"). Each object directory may carry a `maps` subdirectory of
 * segmentation masks; those are not frames and are skipped. Frame order
 * within an object is lexicographic by file name (plain code-unit
 * comparison), which for the archive's ASCII names is byte order.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { ArchiveLayoutError } from "./errors.js";

export const FRAME_COUNT = 41;

export interface ObjectRecord {
  /** Directory name, e.g. "apple3"; also the container's base name. */
  name: string;
  /** Alphabetic prefix of the name, e.g. "apple"; the class label. */
  category: string;
  /** Numeric suffix of the name (1..10 in the full archive). */
  index: number;
  /** Absolute path of the object's directory. */
  dir: string;
  /** Frame file names, lexicographically sorted. */
  frames: string[];
}

const OBJECT_NAME = /^([A-Za-z]+)(\d+)$/;
const MAPS_DIR = "maps";

function listPngs(dir: string): string[] {
  return fs
    .readdirSync(dir, { withFileTypes: true })
    .filter((e) => e.isFile() && /\.png$/i.test(e.name))
    .map((e) => e.name)
    .sort();
}

function walk(dir: string, found: ObjectRecord[]): void {
  const entries = fs.readdirSync(dir, { withFileTypes: true });
  for (const entry of entries) {
    if (!entry.isDirectory() || entry.name === MAPS_DIR) continue;
    const sub = path.join(dir, entry.name);
    const frames = listPngs(sub);
    if (frames.length > 0) {
      const m = OBJECT_NAME.exec(entry.name);
      if (!m) {
        throw new ArchiveLayoutError(
          `image directory ${sub} is not named <category><index> like "apple1"`,
        );
      }
      found.push({
        name: entry.name,
        category: m[1],
        index: parseInt(m[2], 10),
        dir: sub,
        frames,
      });
    }
    walk(sub, found);
  }
}

/** Scan an extracted archive for object directories.
 *
 * Returns the objects sorted by (category, index). Raises
 * ArchiveLayoutError when the tree holds no object directories, when
 * images sit in the root itself, or when two directories claim the same
 * object name.
 */
export function scanArchive(root: string): ObjectRecord[] {
  if (listPngs(root).length > 0) {
    throw new ArchiveLayoutError(
      `${root} holds images directly; expected one subdirectory per object`,
    );
  }
  const objects: ObjectRecord[] = [];
  walk(root, objects);
  if (objects.length === 0) {
    throw new ArchiveLayoutError(`${root} holds no object directories with PNG frames`);
  }
  const seen = new Map<string, string>();
  for (const obj of objects) {
    const prior = seen.get(obj.name);
    if (prior !== undefined) {
      throw new ArchiveLayoutError(
        `object ${obj.name} appears twice: ${prior} and ${obj.dir}`,
      );
    }
    seen.set(obj.name, obj.dir);
  }
  objects.sort((a, b) =>
    a.category === b.category ? a.index - b.index : a.category < b.category ? -1 : 1,
  );
  return objects;
}
