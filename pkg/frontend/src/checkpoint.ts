/**
 * Reader for tfjs-layers checkpoints (model.json + binary weight shards).
 *
 * Only single-branch chains are accepted: every layer feeds exactly one
 * consumer and reads exactly one producer.  Anything that merges paths is
 * rejected by name so the caller can see which layer broke the contract.
 */

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";

export class CheckpointError extends Error {}

export interface ChainLayer {
  className: string;
  name: string;
  config: Record<string, any>;
}

export interface Checkpoint {
  /** Layers in forward order, InputLayer entries excluded. */
  chain: ChainLayer[];
  /** Variable name ("layer/weight") to float32 values. */
  weights: Map<string, Float32Array>;
  /** [height, width, channels] of the expected input, if recorded. */
  inputShape: [number, number, number] | null;
}

interface WeightSpec {
  name: string;
  shape: number[];
  dtype: string;
}

function loadWeights(doc: any, modelDir: string): Map<string, Float32Array> {
  const groups = doc.weightsManifest;
  if (!Array.isArray(groups)) {
    throw new CheckpointError("checkpoint has no weightsManifest");
  }
  const weights = new Map<string, Float32Array>();
  for (const group of groups) {
    const shards: Buffer[] = group.paths.map((p: string) =>
      readFileSync(join(modelDir, p)),
    );
    const data = Buffer.concat(shards);
    let offset = 0;
    for (const spec of group.weights as WeightSpec[]) {
      if (spec.dtype !== "float32") {
        throw new CheckpointError(
          `weight '${spec.name}' has dtype ${spec.dtype}; only float32 checkpoints are supported`,
        );
      }
      const count = spec.shape.reduce((a, b) => a * b, 1);
      const bytes = count * 4;
      if (offset + bytes > data.byteLength) {
        throw new CheckpointError(
          `weight '${spec.name}' overruns shard data (${data.byteLength} bytes)`,
        );
      }
      // Copy out of the Buffer so alignment is guaranteed for Float32Array.
      const slice = new Uint8Array(bytes);
      data.copy(slice, 0, offset, offset + bytes);
      weights.set(spec.name, new Float32Array(slice.buffer));
      offset += bytes;
    }
  }
  return weights;
}

function chainFromSequential(config: any): ChainLayer[] {
  return config.layers.map((layer: any) => ({
    className: layer.class_name,
    name: layer.config.name,
    config: layer.config,
  }));
}

function chainFromGraph(config: any): ChainLayer[] {
  const byName = new Map<string, any>();
  const parentOf = new Map<string, string>();
  let root: string | null = null;

  for (const layer of config.layers) {
    const name = layer.name ?? layer.config.name;
    byName.set(name, layer);
    const inbound: any[] = (layer.inbound_nodes ?? []).flat();
    if (inbound.length === 0) {
      root = name;
    } else if (inbound.length > 1) {
      throw new CheckpointError(
        `layer '${name}' (${layer.class_name}) merges ${inbound.length} inputs; ` +
          "only single-branch chains are supported",
      );
    } else {
      parentOf.set(name, inbound[0][0]);
    }
  }
  if (root === null) {
    throw new CheckpointError("checkpoint graph has no input layer");
  }

  const childOf = new Map<string, string>();
  for (const [child, parent] of parentOf) {
    if (childOf.has(parent)) {
      throw new CheckpointError(
        `layer '${parent}' feeds both '${childOf.get(parent)}' and '${child}'; ` +
          "only single-branch chains are supported",
      );
    }
    childOf.set(parent, child);
  }

  const chain: ChainLayer[] = [];
  let cursor: string | undefined = root;
  while (cursor !== undefined) {
    const layer = byName.get(cursor);
    chain.push({
      className: layer.class_name,
      name: cursor,
      config: layer.config,
    });
    cursor = childOf.get(cursor);
  }
  if (chain.length !== byName.size) {
    throw new CheckpointError("checkpoint graph is not a single connected chain");
  }
  return chain;
}

function findInputShape(chain: ChainLayer[]): [number, number, number] | null {
  for (const layer of chain) {
    const shape = layer.config.batch_input_shape;
    if (Array.isArray(shape) && shape.length === 4) {
      return [shape[1], shape[2], shape[3]];
    }
  }
  return null;
}

export function readCheckpoint(modelJsonPath: string): Checkpoint {
  let doc: any;
  try {
    doc = JSON.parse(readFileSync(modelJsonPath, "utf8"));
  } catch (err) {
    throw new CheckpointError(`${modelJsonPath}: ${(err as Error).message}`);
  }
  const topology = doc.modelTopology;
  if (!topology || !topology.config) {
    throw new CheckpointError(`${modelJsonPath}: missing modelTopology`);
  }

  const rawChain =
    topology.class_name === "Sequential"
      ? chainFromSequential(topology.config)
      : chainFromGraph(topology.config);

  const inputShape = findInputShape(rawChain);
  const chain = rawChain.filter((l) => l.className !== "InputLayer");
  const weights = loadWeights(doc, dirname(modelJsonPath));
  return { chain, weights, inputShape };
}
