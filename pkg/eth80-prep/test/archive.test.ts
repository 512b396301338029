import * as fs from "node:fs";
import * as path from "node:path";

import { afterAll, describe, expect, it } from "vitest";

import { scanArchive } from "../src/archive.js";
import { ArchiveLayoutError } from "../src/errors.js";
import { makeArchive, mkdtemp, writePng } from "./helpers.js";

const roots: string[] = [];
function newRoot(): string {
  const dir = mkdtemp("eth80-scan-");
  roots.push(dir);
  return dir;
}
afterAll(() => roots.forEach((d) => fs.rmSync(d, { recursive: true, force: true })));

describe("scanArchive", () => {
  it("finds object directories, sorted by category then index", () => {
    const root = newRoot();
    makeArchive(root, ["pear2", "apple10", "apple2"], 2, 4);
    const objects = scanArchive(root);
    expect(objects.map((o) => o.name)).toEqual(["apple2", "apple10", "pear2"]);
    expect(objects.map((o) => o.category)).toEqual(["apple", "apple", "pear"]);
    expect(objects.map((o) => o.index)).toEqual([2, 10, 2]);
    for (const obj of objects) {
      expect(obj.frames).toEqual([...obj.frames].sort());
      expect(obj.frames).toHaveLength(2);
      expect(obj.frames.some((f) => f.includes("map"))).toBe(false);
    }
  });

  it("descends through wrapper directories", () => {
    const root = newRoot();
    makeArchive(path.join(root, "eth80-cropped-close128"), ["cow1"], 2, 4);
    const objects = scanArchive(root);
    expect(objects.map((o) => o.name)).toEqual(["cow1"]);
  });

  it("rejects an empty tree", () => {
    const root = newRoot();
    fs.mkdirSync(path.join(root, "only-empty-dirs"), { recursive: true });
    expect(() => scanArchive(root)).toThrow(ArchiveLayoutError);
    expect(() => scanArchive(root)).toThrow(/no object directories/);
  });

  it("rejects images sitting in the archive root", () => {
    const root = newRoot();
    writePng(path.join(root, "loose.png"), 4, 4, () => 0);
    expect(() => scanArchive(root)).toThrow(/holds images directly/);
  });

  it("rejects object directories with unparseable names", () => {
    const root = newRoot();
    makeArchive(root, ["apple1"], 2, 4);
    const weird = path.join(root, "weird-name");
    fs.mkdirSync(weird);
    writePng(path.join(weird, "frame.png"), 4, 4, () => 0);
    expect(() => scanArchive(root)).toThrow(/not named <category><index>/);
  });

  it("rejects the same object name appearing twice", () => {
    const root = newRoot();
    makeArchive(root, ["apple1"], 2, 4);
    makeArchive(path.join(root, "extra"), ["apple1"], 2, 4);
    expect(() => scanArchive(root)).toThrow(/appears twice/);
  });
});
