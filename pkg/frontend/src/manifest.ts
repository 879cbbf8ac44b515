/**
 * Manifest interchange format shared with the Python engine.
 *
 * A manifest is a JSON document next to raw little-endian float32 blobs.
 * Conv weights are stored in (out_channels, in_channels, kh, kw) row-major
 * order; dense head weights in (out_features, in_features) order.
 */

import { mkdirSync, renameSync, writeFileSync } from "node:fs";
import { dirname, join } from "node:path";

export const MANIFEST_VERSION = "1";

export interface PoolEntry {
  kind: "max" | "avg";
  size: number;
}

export interface BlockEntry {
  kind: "conv_bn_act";
  in_channels: number;
  out_channels: number;
  kernel_size: number;
  stride: number;
  padding: number;
  activation: "relu" | "sigmoid" | "identity";
  weight_blob: string;
  gamma: number[];
  beta: number[];
  eps: number;
  pool?: PoolEntry;
}

export interface HeadEntry {
  in_features: number;
  out_features: number;
  weight_blob: string;
  bias_blob: string | null;
}

export interface Manifest {
  version: string;
  input_size: [number, number];
  blocks: BlockEntry[];
  head: HeadEntry | null;
}

/** Recursively order object keys so serialization is deterministic. */
function sortKeys(value: unknown): unknown {
  if (Array.isArray(value)) {
    return value.map(sortKeys);
  }
  if (value !== null && typeof value === "object") {
    const out: Record<string, unknown> = {};
    for (const key of Object.keys(value).sort()) {
      out[key] = sortKeys((value as Record<string, unknown>)[key]);
    }
    return out;
  }
  return value;
}

function writeAtomic(path: string, data: string | Uint8Array): void {
  const tmp = `${path}.tmp`;
  writeFileSync(tmp, data);
  renameSync(tmp, path);
}

/** Write the manifest JSON plus its weight blobs into the manifest's directory. */
export function writeManifest(
  manifestPath: string,
  manifest: Manifest,
  blobs: Map<string, Float32Array>,
): void {
  const dir = dirname(manifestPath);
  mkdirSync(dir, { recursive: true });
  for (const [name, values] of blobs) {
    writeAtomic(
      join(dir, name),
      new Uint8Array(values.buffer, values.byteOffset, values.byteLength),
    );
  }
  writeAtomic(manifestPath, JSON.stringify(sortKeys(manifest), null, 2) + "\n");
}
