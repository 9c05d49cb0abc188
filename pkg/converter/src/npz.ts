/**
 * Minimal ZIP reader for .npz archives: central-directory walk, stored and
 * deflate entries only (what numpy's savez/savez_compressed produce).
 */

import { inflateRawSync } from "node:zlib";
import { parseNpy, NpyArray } from "./npy.js";

const EOCD_SIG = 0x06054b50;
const CENTRAL_SIG = 0x02014b50;
const LOCAL_SIG = 0x04034b50;

interface ZipEntry {
  name: string;
  method: number;
  compressedSize: number;
  localOffset: number;
}

function findEocd(view: DataView): number {
  const min = Math.max(0, view.byteLength - 65557);
  for (let pos = view.byteLength - 22; pos >= min; pos--) {
    if (view.getUint32(pos, true) === EOCD_SIG) return pos;
  }
  throw new Error("not a zip archive (no end-of-central-directory record)");
}

function readEntries(bytes: Uint8Array): ZipEntry[] {
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const eocd = findEocd(view);
  const count = view.getUint16(eocd + 10, true);
  let pos = view.getUint32(eocd + 16, true);
  const entries: ZipEntry[] = [];
  for (let i = 0; i < count; i++) {
    if (view.getUint32(pos, true) !== CENTRAL_SIG) {
      throw new Error(`corrupt central directory at offset ${pos}`);
    }
    const method = view.getUint16(pos + 10, true);
    const compressedSize = view.getUint32(pos + 20, true);
    const nameLen = view.getUint16(pos + 28, true);
    const extraLen = view.getUint16(pos + 30, true);
    const commentLen = view.getUint16(pos + 32, true);
    const localOffset = view.getUint32(pos + 42, true);
    const name = new TextDecoder("utf-8").decode(bytes.subarray(pos + 46, pos + 46 + nameLen));
    entries.push({ name, method, compressedSize, localOffset });
    pos += 46 + nameLen + extraLen + commentLen;
  }
  return entries;
}

function entryData(bytes: Uint8Array, entry: ZipEntry): Uint8Array {
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  if (view.getUint32(entry.localOffset, true) !== LOCAL_SIG) {
    throw new Error(`corrupt local header for ${entry.name}`);
  }
  const nameLen = view.getUint16(entry.localOffset + 26, true);
  const extraLen = view.getUint16(entry.localOffset + 28, true);
  const start = entry.localOffset + 30 + nameLen + extraLen;
  const raw = bytes.subarray(start, start + entry.compressedSize);
  if (entry.method === 0) return raw;
  if (entry.method === 8) return new Uint8Array(inflateRawSync(raw));
  throw new Error(`unsupported zip compression method ${entry.method} for ${entry.name}`);
}

/** Parse every .npy member of an .npz archive, keyed without the extension. */
export function parseNpz(bytes: Uint8Array): Record<string, NpyArray> {
  const out: Record<string, NpyArray> = {};
  for (const entry of readEntries(bytes)) {
    if (!entry.name.endsWith(".npy")) continue;
    out[entry.name.slice(0, -4)] = parseNpy(entryData(bytes, entry));
  }
  return out;
}
