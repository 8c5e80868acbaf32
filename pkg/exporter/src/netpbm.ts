/** Binary netpbm I/O: P6 scene images in [0,1] floats, P5 binary masks. */

import { promises as fs } from "node:fs";

interface Header {
  width: number;
  height: number;
  offset: number;
}

function parseHeader(blob: Buffer, magic: string): Header {
  if (blob.subarray(0, 2).toString("ascii") !== magic) {
    throw new Error(`expected ${magic} header`);
  }
  let pos = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    while (pos < blob.length && /\s/.test(String.fromCharCode(blob[pos]))) pos++;
    if (blob[pos] === 0x23) {
      while (pos < blob.length && blob[pos] !== 0x0a) pos++;
      continue;
    }
    const start = pos;
    while (pos < blob.length && !/\s/.test(String.fromCharCode(blob[pos]))) pos++;
    const token = blob.subarray(start, pos).toString("ascii");
    if (!/^\d+$/.test(token)) throw new Error(`malformed header token ${token}`);
    fields.push(parseInt(token, 10));
  }
  pos++; // single whitespace after maxval
  const [width, height, maxval] = fields;
  if (maxval !== 255) throw new Error(`unsupported maxval ${maxval}`);
  return { width, height, offset: pos };
}

/** P6 -> channel-major floats in [0, 1], shape [3, height, width]. */
export async function readPpm(file: string): Promise<{ data: Float32Array; height: number; width: number }> {
  const blob = await fs.readFile(file);
  const { width, height, offset } = parseHeader(blob, "P6");
  if (blob.length - offset !== width * height * 3) {
    throw new Error(`payload length mismatch in ${file}`);
  }
  const data = new Float32Array(3 * height * width);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      for (let c = 0; c < 3; c++) {
        data[c * height * width + y * width + x] =
          blob[offset + (y * width + x) * 3 + c] / 255.0;
      }
    }
  }
  return { data, height, width };
}

export async function writePpm(
  file: string,
  data: Float32Array,
  height: number,
  width: number,
): Promise<void> {
  const header = Buffer.from(`P6\n${width} ${height}\n255\n`, "ascii");
  const body = Buffer.alloc(width * height * 3);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      for (let c = 0; c < 3; c++) {
        const v = data[c * height * width + y * width + x];
        body[(y * width + x) * 3 + c] = Math.max(0, Math.min(255, Math.round(v * 255)));
      }
    }
  }
  await fs.writeFile(file, Buffer.concat([header, body]));
}

/** P5 restricted to {0, 255} -> Uint8Array of {0, 1}. */
export async function readMask(file: string): Promise<{ data: Uint8Array; height: number; width: number }> {
  const blob = await fs.readFile(file);
  const { width, height, offset } = parseHeader(blob, "P5");
  if (blob.length - offset !== width * height) {
    throw new Error(`payload length mismatch in ${file}`);
  }
  const data = new Uint8Array(width * height);
  for (let i = 0; i < data.length; i++) {
    const v = blob[offset + i];
    if (v !== 0 && v !== 255) throw new Error(`mask pixel ${v} outside {0, 255}`);
    data[i] = v === 255 ? 1 : 0;
  }
  return { data, height, width };
}

export async function writeMask(
  file: string,
  data: Uint8Array,
  height: number,
  width: number,
): Promise<void> {
  const header = Buffer.from(`P5\n${width} ${height}\n255\n`, "ascii");
  const body = Buffer.alloc(width * height);
  for (let i = 0; i < data.length; i++) body[i] = data[i] ? 255 : 0;
  await fs.writeFile(file, Buffer.concat([header, body]));
}
