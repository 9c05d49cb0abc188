#!/usr/bin/env node
/**
 * convert --in archive.npz --split train|test [--classes 0,3,7]
 *         [--merge support.npz] --out dataset.ueds
 *
 * Writes the UEDS container plus a <out>.manifest.json recording the class
 * mapping and protected-class indices, and prints n, shape, and the class
 * histogram.
 */

import { readFileSync, writeFileSync, renameSync } from "node:fs";
import { convert } from "./convert.js";

function parseArgs(argv: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith("--")) throw new Error(`unexpected argument ${arg}`);
    const value = argv[i + 1];
    if (value === undefined || value.startsWith("--")) {
      throw new Error(`flag ${arg} needs a value`);
    }
    out.set(arg.slice(2), value);
    i++;
  }
  return out;
}

export function main(argv: string[]): number {
  let args: Map<string, string>;
  try {
    args = parseArgs(argv);
    for (const flag of ["in", "split", "out"]) {
      if (!args.has(flag)) throw new Error(`missing required flag --${flag}`);
    }
    const known = new Set(["in", "split", "classes", "merge", "out"]);
    for (const key of args.keys()) {
      if (!known.has(key)) throw new Error(`unknown flag --${key}`);
    }
    const split = args.get("split")!;
    if (split !== "train" && split !== "test") {
      throw new Error(`--split must be train or test, got ${split}`);
    }
    const classes = args.get("classes")?.split(",").map((s) => {
      const v = Number(s);
      if (!Number.isInteger(v) || v < 0) throw new Error(`bad class index ${s}`);
      return v;
    });
    const result = convert({
      input: new Uint8Array(readFileSync(args.get("in")!)),
      split,
      classes,
      merge: args.has("merge") ? new Uint8Array(readFileSync(args.get("merge")!)) : undefined,
    });
    const outPath = args.get("out")!;
    const tmp = outPath + ".tmp";
    writeFileSync(tmp, result.ueds);
    renameSync(tmp, outPath);
    const manifestPath = outPath + ".manifest.json";
    writeFileSync(manifestPath, JSON.stringify(result.manifest, null, 2) + "\n");

    const m = result.manifest;
    console.log(`wrote ${outPath}: n=${m.n} shape=${m.shape.c}x${m.shape.h}x${m.shape.w} classes=${m.nClasses}`);
    console.log(`histogram: [${m.histogram.join(", ")}]`);
    if (m.classMap.some((e) => e.source === "support")) {
      console.log(`protected classes: [${m.protectedClasses.join(", ")}]`);
    }
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

if (process.argv[1] && /cli\.(ts|js)$/.test(process.argv[1])) {
  process.exit(main(process.argv.slice(2)));
}
