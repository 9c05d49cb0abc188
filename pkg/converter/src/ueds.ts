/**
 * UEDS dataset container: magic "UEDS", version u16, n u32, H u16, W u16,
 * C u8, n_classes u16, then n*C*H*W pixel bytes (u8) and n label bytes (u8),
 * all little-endian.
 */

export interface UedsData {
  n: number;
  h: number;
  w: number;
  c: number;
  nClasses: number;
  /** n*C*H*W bytes, row-major. */
  pixels: Uint8Array;
  labels: Uint8Array;
}

export const UEDS_VERSION = 1;
const MAGIC = "UEDS";

export function writeUeds(data: UedsData): Buffer {
  const { n, h, w, c, nClasses, pixels, labels } = data;
  if (pixels.length !== n * c * h * w) {
    throw new Error(`pixel buffer has ${pixels.length} bytes, expected ${n * c * h * w}`);
  }
  if (labels.length !== n) {
    throw new Error(`label buffer has ${labels.length} entries, expected ${n}`);
  }
  const header = Buffer.alloc(17);
  header.write(MAGIC, 0, "ascii");
  header.writeUInt16LE(UEDS_VERSION, 4);
  header.writeUInt32LE(n, 6);
  header.writeUInt16LE(h, 10);
  header.writeUInt16LE(w, 12);
  header.writeUInt8(c, 14);
  header.writeUInt16LE(nClasses, 15);
  return Buffer.concat([header, Buffer.from(pixels), Buffer.from(labels)]);
}

export function readUeds(blob: Buffer): UedsData {
  if (blob.length < 17 || blob.toString("ascii", 0, 4) !== MAGIC) {
    throw new Error("bad UEDS magic");
  }
  const version = blob.readUInt16LE(4);
  if (version !== UEDS_VERSION) throw new Error(`unsupported UEDS version ${version}`);
  const n = blob.readUInt32LE(6);
  const h = blob.readUInt16LE(10);
  const w = blob.readUInt16LE(12);
  const c = blob.readUInt8(14);
  const nClasses = blob.readUInt16LE(15);
  const npix = n * c * h * w;
  if (blob.length !== 17 + npix + n) {
    throw new Error(`expected ${17 + npix + n} bytes, file has ${blob.length}`);
  }
  return {
    n, h, w, c, nClasses,
    pixels: new Uint8Array(blob.subarray(17, 17 + npix)),
    labels: new Uint8Array(blob.subarray(17 + npix)),
  };
}
