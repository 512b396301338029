/** GBTD tensor container encoding ("GBTD", little-endian throughout):
 *
 *     bytes 0..3    magic "GBTD"
 *     bytes 4..7    format version (uint32); this implementation writes 1
 *     byte  8       element type (uint8); 0 = float64
 *     bytes 9..12   tensor order d (uint32)
 *     then          d dimension sizes (uint64 each)
 *     then          prod(dims) float64 payload in column-major entry order
 *     optionally    metadata block: uint64 byte length + UTF-8 JSON
 *
 * The encoder takes the payload as a flat Float64Array already in
 * column-major linear order; building that order is the packer's job.
 * Metadata is serialized with recursively sorted keys so that re-encoding
 * the same data always yields the same bytes.
 */

import { ContainerFormatError } from "./errors.js";

export const MAGIC = "GBTD";
export const FORMAT_VERSION = 1;
const ELEM_FLOAT64 = 0;

const HEADER_BYTES = 13; // magic + version + element type + order

/** JSON.stringify with object keys sorted at every depth. */
export function stableStringify(value: unknown): string {
  if (Array.isArray(value)) {
    return "[" + value.map(stableStringify).join(",") + "]";
  }
  if (value !== null && typeof value === "object") {
    const entries = Object.keys(value as Record<string, unknown>)
      .sort()
      .map((k) => JSON.stringify(k) + ":" + stableStringify((value as Record<string, unknown>)[k]));
    return "{" + entries.join(",") + "}";
  }
  return JSON.stringify(value);
}

function payloadBytes(values: Float64Array): Buffer {
  const buf = Buffer.allocUnsafe(values.length * 8);
  for (let i = 0; i < values.length; i++) {
    buf.writeDoubleLE(values[i], i * 8);
  }
  return buf;
}

/** Encode a dense float64 tensor as container bytes. */
export function encodeContainer(
  dims: readonly number[],
  values: Float64Array,
  metadata?: unknown,
): Buffer {
  const count = dims.reduce((a, b) => a * b, 1);
  if (values.length !== count) {
    throw new ContainerFormatError(
      `payload has ${values.length} values but dims (${dims.join(", ")}) need ${count}`,
    );
  }
  const header = Buffer.allocUnsafe(HEADER_BYTES + 8 * dims.length);
  header.write(MAGIC, 0, "ascii");
  header.writeUInt32LE(FORMAT_VERSION, 4);
  header.writeUInt8(ELEM_FLOAT64, 8);
  header.writeUInt32LE(dims.length, 9);
  dims.forEach((d, i) => header.writeBigUInt64LE(BigInt(d), HEADER_BYTES + 8 * i));
  const parts = [header, payloadBytes(values)];
  if (metadata !== undefined) {
    const enc = Buffer.from(stableStringify(metadata), "utf-8");
    const len = Buffer.allocUnsafe(8);
    len.writeBigUInt64LE(BigInt(enc.length), 0);
    parts.push(len, enc);
  }
  return Buffer.concat(parts);
}

export interface DecodedContainer {
  dims: number[];
  /** Column-major linear payload, exactly as stored. */
  values: Float64Array;
  metadata: unknown | null;
}

/** Decode container bytes; the inverse of encodeContainer, used by the
 * round-trip tests and by downstream checks on freshly written files. */
export function decodeContainer(data: Buffer): DecodedContainer {
  if (data.length < 4 || data.toString("ascii", 0, 4) !== MAGIC) {
    throw new ContainerFormatError("not a GBTD container");
  }
  if (data.length < HEADER_BYTES) {
    throw new ContainerFormatError("not a GBTD container: header too short");
  }
  const version = data.readUInt32LE(4);
  if (version !== FORMAT_VERSION) {
    throw new ContainerFormatError(`unsupported container version ${version}`);
  }
  const elem = data.readUInt8(8);
  if (elem !== ELEM_FLOAT64) {
    throw new ContainerFormatError(`unsupported element type code ${elem}`);
  }
  const order = data.readUInt32LE(9);
  let offset = HEADER_BYTES;
  if (data.length < offset + 8 * order) {
    throw new ContainerFormatError("container ends inside its dimension list");
  }
  const dims: number[] = [];
  for (let i = 0; i < order; i++) {
    dims.push(Number(data.readBigUInt64LE(offset)));
    offset += 8;
  }
  const count = dims.reduce((a, b) => a * b, 1);
  if (data.length < offset + 8 * count) {
    throw new ContainerFormatError("container ends inside its payload");
  }
  const values = new Float64Array(count);
  for (let i = 0; i < count; i++) {
    values[i] = data.readDoubleLE(offset + 8 * i);
  }
  offset += 8 * count;
  let metadata: unknown | null = null;
  if (offset < data.length) {
    if (data.length < offset + 8) {
      throw new ContainerFormatError("container ends inside its metadata length");
    }
    const metaLen = Number(data.readBigUInt64LE(offset));
    offset += 8;
    if (data.length - offset < metaLen) {
      throw new ContainerFormatError("container ends inside its metadata block");
    }
    try {
      metadata = JSON.parse(data.toString("utf-8", offset, offset + metaLen));
    } catch (exc) {
      throw new ContainerFormatError(`corrupt container metadata: ${String(exc)}`);
    }
    if (data.length - offset !== metaLen) {
      throw new ContainerFormatError("container has trailing bytes after its metadata");
    }
  }
  return { dims, values, metadata };
}
