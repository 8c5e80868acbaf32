/**
 * LDAGTNSR binary tensor format (little-endian):
 *   magic "LDAGTNSR" | u32 version=1 | u8 dtype (0=f32) | u8 rank | u16 reserved
 *   | rank x u64 extents | u32 metadata length | UTF-8 JSON metadata
 *   | float32 payload, row-major.
 */

import { promises as fs } from "node:fs";
import path from "node:path";

const MAGIC = Buffer.from("LDAGTNSR", "ascii");
const VERSION = 1;
const DTYPE_F32 = 0;

export interface TensorMeta {
  kind: string;
  source: string;
  [key: string]: unknown;
}

export function encodeTensor(data: Float32Array, shape: number[], meta: TensorMeta): Buffer {
  const count = shape.reduce((a, b) => a * b, 1);
  if (count !== data.length) {
    throw new Error(`shape ${JSON.stringify(shape)} does not cover ${data.length} values`);
  }
  const metaBytes = Buffer.from(JSON.stringify(sortKeys(meta)), "utf-8");
  const header = Buffer.alloc(16 + 8 * shape.length + 4);
  MAGIC.copy(header, 0);
  header.writeUInt32LE(VERSION, 8);
  header.writeUInt8(DTYPE_F32, 12);
  header.writeUInt8(shape.length, 13);
  header.writeUInt16LE(0, 14);
  shape.forEach((extent, i) => header.writeBigUInt64LE(BigInt(extent), 16 + 8 * i));
  header.writeUInt32LE(metaBytes.length, 16 + 8 * shape.length);
  const payload = Buffer.from(data.buffer, data.byteOffset, data.byteLength);
  return Buffer.concat([header, metaBytes, payload]);
}

export async function writeTensor(
  file: string,
  data: Float32Array,
  shape: number[],
  meta: TensorMeta,
): Promise<void> {
  const tmp = `${file}.tmp.${process.pid}`;
  await fs.mkdir(path.dirname(file), { recursive: true });
  await fs.writeFile(tmp, encodeTensor(data, shape, meta));
  await fs.rename(tmp, file);
}

export interface ParsedTensor {
  data: Float32Array;
  shape: number[];
  meta: TensorMeta;
}

/** Reader used by the exporter's own round-trip tests. */
export function decodeTensor(blob: Buffer): ParsedTensor {
  if (!blob.subarray(0, 8).equals(MAGIC)) {
    throw new Error(`bad magic ${blob.subarray(0, 8).toString("latin1")}`);
  }
  const version = blob.readUInt32LE(8);
  if (version !== VERSION) throw new Error(`unsupported version ${version}`);
  if (blob.readUInt8(12) !== DTYPE_F32) throw new Error("unsupported dtype");
  const rank = blob.readUInt8(13);
  const shape: number[] = [];
  for (let i = 0; i < rank; i++) shape.push(Number(blob.readBigUInt64LE(16 + 8 * i)));
  let pos = 16 + 8 * rank;
  const metaLen = blob.readUInt32LE(pos);
  pos += 4;
  const meta = JSON.parse(blob.subarray(pos, pos + metaLen).toString("utf-8")) as TensorMeta;
  pos += metaLen;
  const count = shape.reduce((a, b) => a * b, 1);
  if (blob.length - pos !== count * 4) {
    throw new Error(`payload length mismatch: expected ${count * 4}, actual ${blob.length - pos}`);
  }
  const data = new Float32Array(count);
  for (let i = 0; i < count; i++) data[i] = blob.readFloatLE(pos + 4 * i);
  return { data, shape, meta };
}

export async function readTensor(file: string): Promise<ParsedTensor> {
  return decodeTensor(await fs.readFile(file));
}

function sortKeys<T extends Record<string, unknown>>(obj: T): T {
  return Object.fromEntries(Object.entries(obj).sort(([a], [b]) => (a < b ? -1 : 1))) as T;
}
