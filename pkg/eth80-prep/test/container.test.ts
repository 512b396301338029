import { describe, expect, it } from "vitest";

import {
  decodeContainer,
  encodeContainer,
  FORMAT_VERSION,
  stableStringify,
} from "../src/container.js";
import { ContainerFormatError } from "../src/errors.js";

function sample(): { dims: number[]; values: Float64Array } {
  const values = new Float64Array([0, 1, -1, 0.5, 1 / 3, 255 / 255, 7e-300, 1.25e300]);
  return { dims: [2, 4], values };
}

describe("encodeContainer", () => {
  it("lays out the header byte for byte", () => {
    const { dims, values } = sample();
    const buf = encodeContainer(dims, values);
    expect(buf.toString("ascii", 0, 4)).toBe("GBTD");
    expect(buf.readUInt32LE(4)).toBe(FORMAT_VERSION);
    expect(buf.readUInt8(8)).toBe(0); // float64
    expect(buf.readUInt32LE(9)).toBe(2); // order
    expect(Number(buf.readBigUInt64LE(13))).toBe(2);
    expect(Number(buf.readBigUInt64LE(21))).toBe(4);
    expect(buf.length).toBe(13 + 2 * 8 + 8 * 8);
    for (let i = 0; i < values.length; i++) {
      expect(buf.readDoubleLE(29 + 8 * i)).toBe(values[i]);
    }
  });

  it("rejects a payload that disagrees with the dims", () => {
    expect(() => encodeContainer([3, 3], new Float64Array(8))).toThrow(ContainerFormatError);
  });

  it("appends metadata as a length-prefixed JSON block", () => {
    const { dims, values } = sample();
    const buf = encodeContainer(dims, values, { b: 2, a: [1, "x"] });
    const metaOffset = 29 + 8 * 8;
    const metaLen = Number(buf.readBigUInt64LE(metaOffset));
    const text = buf.toString("utf-8", metaOffset + 8, metaOffset + 8 + metaLen);
    expect(text).toBe('{"a":[1,"x"],"b":2}');
    expect(buf.length).toBe(metaOffset + 8 + metaLen);
  });

  it("is deterministic regardless of metadata key insertion order", () => {
    const { dims, values } = sample();
    const one = encodeContainer(dims, values, { a: 1, b: { d: 4, c: 3 } });
    const two = encodeContainer(dims, values, { b: { c: 3, d: 4 }, a: 1 });
    expect(one.equals(two)).toBe(true);
  });
});

describe("decodeContainer", () => {
  it("round-trips values bit for bit and metadata structurally", () => {
    const { dims, values } = sample();
    const meta = { category: "apple", frames: ["a.png", "b.png"], object_index: 3 };
    const decoded = decodeContainer(encodeContainer(dims, values, meta));
    expect(decoded.dims).toEqual(dims);
    expect(decoded.metadata).toEqual(meta);
    expect(decoded.values.length).toBe(values.length);
    for (let i = 0; i < values.length; i++) {
      expect(Object.is(decoded.values[i], values[i])).toBe(true);
    }
  });

  it("re-encoding a decoded container reproduces the file bytes", () => {
    const { dims, values } = sample();
    const original = encodeContainer(dims, values, { scale: "intensity/255" });
    const d = decodeContainer(original);
    expect(encodeContainer(d.dims, d.values, d.metadata).equals(original)).toBe(true);
  });

  it("rejects bad magic, bad version, and truncation distinctly", () => {
    const { dims, values } = sample();
    const good = encodeContainer(dims, values, { k: 1 });
    const wrongMagic = Buffer.from(good);
    wrongMagic.write("NOPE", 0, "ascii");
    expect(() => decodeContainer(wrongMagic)).toThrow(/not a GBTD container/);
    const wrongVersion = Buffer.from(good);
    wrongVersion.writeUInt32LE(9, 4);
    expect(() => decodeContainer(wrongVersion)).toThrow(/version 9/);
    expect(() => decodeContainer(good.subarray(0, 40))).toThrow(/ends inside its payload/);
    expect(() => decodeContainer(good.subarray(0, good.length - 2))).toThrow(
      /ends inside its metadata/,
    );
  });
});

describe("stableStringify", () => {
  it("sorts keys at every depth and keeps arrays in order", () => {
    const text = stableStringify({ z: [{ b: 1, a: 2 }], m: null, a: "s" });
    expect(text).toBe('{"a":"s","m":null,"z":[{"a":2,"b":1}]}');
  });
});
