/**
 * Minimal parser for the numpy .npy serialization format (versions 1.0/2.0,
 * C-order, little-endian numeric dtypes).
 */

export interface NpyArray {
  shape: number[];
  dtype: string;
  /** Values flattened in C (row-major) order. */
  data: Float64Array;
  /** Raw bytes for u1 arrays, avoiding a float round trip. */
  rawU8?: Uint8Array;
}

const MAGIC = [0x93, 0x4e, 0x55, 0x4d, 0x50, 0x59]; // \x93NUMPY

function parseHeaderDict(header: string): { descr: string; fortranOrder: boolean; shape: number[] } {
  const descr = /'descr':\s*'([^']+)'/.exec(header)?.[1];
  const fortran = /'fortran_order':\s*(True|False)/.exec(header)?.[1];
  const shapeText = /'shape':\s*\(([^)]*)\)/.exec(header)?.[1];
  if (descr === undefined || fortran === undefined || shapeText === undefined) {
    throw new Error(`unparseable npy header: ${header.trim()}`);
  }
  const shape = shapeText
    .split(",")
    .map((s) => s.trim())
    .filter((s) => s.length > 0)
    .map((s) => {
      const v = Number(s);
      if (!Number.isInteger(v) || v < 0) throw new Error(`bad shape entry ${s}`);
      return v;
    });
  return { descr, fortranOrder: fortran === "True", shape };
}

export function parseNpy(bytes: Uint8Array): NpyArray {
  if (bytes.length < 10 || MAGIC.some((b, i) => bytes[i] !== b)) {
    throw new Error("not an npy array (bad magic)");
  }
  const major = bytes[6];
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  let headerLen: number;
  let dataStart: number;
  if (major === 1) {
    headerLen = view.getUint16(8, true);
    dataStart = 10 + headerLen;
  } else if (major === 2 || major === 3) {
    headerLen = view.getUint32(8, true);
    dataStart = 12 + headerLen;
  } else {
    throw new Error(`unsupported npy version ${major}`);
  }
  const header = new TextDecoder("latin1").decode(
    bytes.subarray(major === 1 ? 10 : 12, dataStart),
  );
  const { descr, fortranOrder, shape } = parseHeaderDict(header);
  if (fortranOrder) throw new Error("fortran-order arrays are not supported");

  const count = shape.reduce((a, b) => a * b, 1);
  const body = bytes.subarray(dataStart);
  const out = new Float64Array(count);
  const dv = new DataView(body.buffer, body.byteOffset, body.byteLength);

  const norm = descr.replace("|", "<");
  let rawU8: Uint8Array | undefined;
  const readers: Record<string, (i: number) => number> = {
    "<u1": (i) => body[i],
    "<i1": (i) => dv.getInt8(i),
    "<u2": (i) => dv.getUint16(2 * i, true),
    "<i2": (i) => dv.getInt16(2 * i, true),
    "<u4": (i) => dv.getUint32(4 * i, true),
    "<i4": (i) => dv.getInt32(4 * i, true),
    "<i8": (i) => Number(dv.getBigInt64(8 * i, true)),
    "<u8": (i) => Number(dv.getBigUint64(8 * i, true)),
    "<f4": (i) => dv.getFloat32(4 * i, true),
    "<f8": (i) => dv.getFloat64(8 * i, true),
  };
  const itemsize: Record<string, number> = {
    "<u1": 1, "<i1": 1, "<u2": 2, "<i2": 2, "<u4": 4, "<i4": 4,
    "<i8": 8, "<u8": 8, "<f4": 4, "<f8": 8,
  };
  const read = readers[norm];
  if (!read) throw new Error(`unsupported dtype ${descr}`);
  if (body.length < count * itemsize[norm]) {
    throw new Error(`npy body truncated: need ${count * itemsize[norm]} bytes, have ${body.length}`);
  }
  for (let i = 0; i < count; i++) out[i] = read(i);
  if (norm === "<u1") rawU8 = body.subarray(0, count);
  return { shape, dtype: norm, data: out, rawU8 };
}
