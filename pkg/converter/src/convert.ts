/**
 * Archive-to-UEDS conversion: split selection, class subsetting with dense
 * re-indexing, and optional merging of a support archive (the protected
 * classes keep the low indices; support classes follow).
 */

import { NpyArray } from "./npy.js";
import { parseNpz } from "./npz.js";
import { UedsData, writeUeds } from "./ueds.js";

export interface ArchiveSpec {
  input: Uint8Array;
  split: "train" | "test";
  classes?: number[];
  merge?: Uint8Array;
}

export interface ClassMapping {
  source: "primary" | "support";
  originalClass: number;
  newClass: number;
}

export interface ConvertResult {
  ueds: Buffer;
  manifest: {
    split: string;
    n: number;
    shape: { c: number; h: number; w: number };
    nClasses: number;
    histogram: number[];
    protectedClasses: number[];
    classMap: ClassMapping[];
  };
}

interface Loaded {
  n: number;
  h: number;
  w: number;
  c: number;
  /** per-sample CHW pixel bytes */
  pixels: Uint8Array;
  labels: number[];
}

function loadSplit(archive: Uint8Array, split: string): Loaded {
  const arrays = parseNpz(archive);
  const imagesKey = `${split}_images`;
  const labelsKey = `${split}_labels`;
  for (const key of [imagesKey, labelsKey]) {
    if (!(key in arrays)) {
      throw new Error(`archive is missing key '${key}' (has: ${Object.keys(arrays).sort().join(", ")})`);
    }
  }
  const images = arrays[imagesKey];
  const labels = arrays[labelsKey];
  if (images.dtype !== "<u1" || !images.rawU8) {
    throw new Error(`images must be uint8, got dtype ${images.dtype}`);
  }
  let n: number, h: number, w: number, c: number;
  if (images.shape.length === 3) {
    [n, h, w] = images.shape;
    c = 1;
  } else if (images.shape.length === 4) {
    [n, h, w, c] = images.shape;
  } else {
    throw new Error(`images must be (n,H,W) or (n,H,W,C), got shape (${images.shape})`);
  }

  const flatLabels = normalizeLabels(labels, n);
  const pixels = toChw(images.rawU8, n, h, w, c);
  return { n, h, w, c, pixels, labels: flatLabels };
}

function normalizeLabels(labels: NpyArray, n: number): number[] {
  const shape = labels.shape;
  const ok =
    (shape.length === 1 && shape[0] === n) ||
    (shape.length === 2 && shape[0] === n && shape[1] === 1);
  if (!ok) {
    if (shape.length === 2 && shape[0] === n && shape[1] > 1) {
      throw new Error(
        `multi-label arrays (shape (${shape})) are not supported; ` +
          "this converter handles single-label classification splits only",
      );
    }
    throw new Error(`labels must be (n,) or (n,1), got shape (${shape})`);
  }
  const out = new Array<number>(n);
  for (let i = 0; i < n; i++) {
    const v = labels.data[i];
    if (!Number.isInteger(v) || v < 0) throw new Error(`label ${v} at row ${i} is not a class index`);
    out[i] = v;
  }
  return out;
}

/** (n,H,W,C) or (n,H,W) row-major bytes -> per-sample CHW layout. */
function toChw(raw: Uint8Array, n: number, h: number, w: number, c: number): Uint8Array {
  if (c === 1) return raw.subarray(0, n * h * w);
  const out = new Uint8Array(n * c * h * w);
  const hw = h * w;
  for (let i = 0; i < n; i++) {
    const src = i * hw * c;
    const dst = i * c * hw;
    for (let p = 0; p < hw; p++) {
      for (let ch = 0; ch < c; ch++) {
        out[dst + ch * hw + p] = raw[src + p * c + ch];
      }
    }
  }
  return out;
}

function selectClasses(data: Loaded, classes: number[] | undefined): { data: Loaded; originals: number[] } {
  const present = [...new Set(data.labels)].sort((a, b) => a - b);
  const wanted = classes === undefined ? present : [...classes].sort((a, b) => a - b);
  for (const cls of wanted) {
    if (!present.includes(cls)) {
      throw new Error(`class ${cls} not present in archive (has ${present.join(", ")})`);
    }
  }
  const newIndex = new Map(wanted.map((cls, i) => [cls, i]));
  const keep: number[] = [];
  for (let i = 0; i < data.n; i++) {
    if (newIndex.has(data.labels[i])) keep.push(i);
  }
  const sampleBytes = data.c * data.h * data.w;
  const pixels = new Uint8Array(keep.length * sampleBytes);
  const labels = new Array<number>(keep.length);
  keep.forEach((row, i) => {
    pixels.set(data.pixels.subarray(row * sampleBytes, (row + 1) * sampleBytes), i * sampleBytes);
    labels[i] = newIndex.get(data.labels[row])!;
  });
  return {
    data: { ...data, n: keep.length, pixels, labels },
    originals: wanted,
  };
}

export function convert(spec: ArchiveSpec): ConvertResult {
  const primary = selectClasses(loadSplit(spec.input, spec.split), spec.classes);
  let { n, h, w, c, pixels, labels } = primary.data;
  const classMap: ClassMapping[] = primary.originals.map((cls, i) => ({
    source: "primary",
    originalClass: cls,
    newClass: i,
  }));
  let nClasses = primary.originals.length;
  const protectedClasses = classMap.map((m) => m.newClass);

  if (spec.merge) {
    const support = selectClasses(loadSplit(spec.merge, spec.split), undefined);
    const s = support.data;
    if (s.h !== h || s.w !== w || s.c !== c) {
      throw new Error(
        `support archive geometry ${s.c}x${s.h}x${s.w} does not match primary ${c}x${h}x${w}`,
      );
    }
    support.originals.forEach((cls, i) => {
      classMap.push({ source: "support", originalClass: cls, newClass: nClasses + i });
    });
    const merged = new Uint8Array(pixels.length + s.pixels.length);
    merged.set(pixels, 0);
    merged.set(s.pixels, pixels.length);
    pixels = merged;
    labels = labels.concat(s.labels.map((v) => v + nClasses));
    nClasses += support.originals.length;
    n += s.n;
  }

  if (nClasses < 2) {
    throw new Error(
      `a ${nClasses}-class dataset cannot be trained on; select more classes or --merge a support archive`,
    );
  }
  if (nClasses > 255 || labels.some((v) => v > 255)) {
    throw new Error("UEDS stores labels as u8; more than 256 classes is not supported");
  }

  const histogram = new Array<number>(nClasses).fill(0);
  for (const v of labels) histogram[v]++;

  const ueds: UedsData = {
    n, h, w, c, nClasses,
    pixels,
    labels: Uint8Array.from(labels),
  };
  return {
    ueds: writeUeds(ueds),
    manifest: {
      split: spec.split,
      n,
      shape: { c, h, w },
      nClasses,
      histogram,
      protectedClasses,
      classMap,
    },
  };
}
