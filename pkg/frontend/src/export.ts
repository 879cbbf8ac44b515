/**
 * Conversion from a tfjs-layers checkpoint to the engine's manifest format.
 *
 * The checkpoint must be a single-branch chain of conv + batch-norm pairs,
 * each optionally followed by an activation and a pooling layer, optionally
 * ending in a flatten + dense classifier.  Batch-norm moving statistics are
 * deliberately not exported: the engine recomputes per-batch statistics, so
 * the deployed function normalizes with batch moments rather than the
 * checkpoint's running averages.
 */

import { basename } from "node:path";

import { Checkpoint, ChainLayer, readCheckpoint } from "./checkpoint.js";
import {
  BlockEntry,
  HeadEntry,
  MANIFEST_VERSION,
  Manifest,
  writeManifest,
} from "./manifest.js";

export class UnsupportedLayerError extends Error {}
export class ExportError extends Error {}

export interface ExportConfig {
  /** Path to the checkpoint's model.json. */
  checkpoint: string;
  /** Conv layer names in forward order; must match the checkpoint exactly. */
  arch: string[];
  /** Output manifest path; blobs are written next to it. */
  out: string;
}

export interface ExportSummary {
  manifest: string;
  blocks: number;
  headExported: boolean;
  blobs: string[];
}

const ACTIVATION_MAP: Record<string, "relu" | "sigmoid" | "identity"> = {
  relu: "relu",
  sigmoid: "sigmoid",
  linear: "identity",
};

interface BlockDraft {
  entry: BlockEntry;
  kernel: Float32Array;
}

function requireWeight(cp: Checkpoint, name: string): Float32Array {
  const values = cp.weights.get(name);
  if (values === undefined) {
    throw new ExportError(`weight '${name}' not found in checkpoint`);
  }
  return values;
}

/** (kh, kw, in, out) checkpoint layout to (out, in, kh, kw) row-major. */
function transposeConvKernel(
  src: Float32Array,
  k: number,
  inC: number,
  outC: number,
): Float32Array {
  const dst = new Float32Array(src.length);
  for (let o = 0; o < outC; o++) {
    for (let i = 0; i < inC; i++) {
      for (let y = 0; y < k; y++) {
        for (let x = 0; x < k; x++) {
          dst[((o * inC + i) * k + y) * k + x] = src[((y * k + x) * inC + i) * outC + o];
        }
      }
    }
  }
  return dst;
}

/**
 * Dense kernel (features, units) to (out, in) with the input features
 * re-ordered from the checkpoint's flatten layout (y, x, channel) to the
 * engine's (channel, y, x) layout.
 */
function transposeDenseKernel(
  src: Float32Array,
  height: number,
  width: number,
  channels: number,
  units: number,
): Float32Array {
  const features = height * width * channels;
  const dst = new Float32Array(src.length);
  for (let o = 0; o < units; o++) {
    for (let c = 0; c < channels; c++) {
      for (let y = 0; y < height; y++) {
        for (let x = 0; x < width; x++) {
          const spatial = y * width + x;
          dst[o * features + c * height * width + spatial] =
            src[(spatial * channels + c) * units + o];
        }
      }
    }
  }
  return dst;
}

function pair(values: number[] | number, what: string, layer: string): number {
  const arr = Array.isArray(values) ? values : [values, values];
  if (arr[0] !== arr[1]) {
    throw new UnsupportedLayerError(
      `layer '${layer}' has non-square ${what} [${arr}]; the engine only supports square ${what}`,
    );
  }
  return arr[0];
}

function convOutput(size: number, k: number, stride: number, pad: number): number {
  return Math.floor((size + 2 * pad - k) / stride) + 1;
}

export function exportModel(config: ExportConfig): ExportSummary {
  const cp = readCheckpoint(config.checkpoint);
  if (cp.inputShape === null) {
    throw new ExportError("checkpoint does not record its input shape");
  }
  let [h, w, channels] = cp.inputShape;

  const drafts: BlockDraft[] = [];
  let head: { entry: Omit<HeadEntry, "weight_blob" | "bias_blob">; kernel: Float32Array; bias: Float32Array | null } | null = null;
  const convNames: string[] = [];

  // Walk phases: "conv" wants the next conv (or flatten); "bn" demands the
  // normalization partner; "tail" accepts activation, pooling, then the next
  // conv; "dense" wants the classifier; "done" accepts nothing further.
  let phase: "conv" | "bn" | "tail" | "dense" | "done" = "conv";
  let tailSeenAct = false;

  const openConv = (layer: ChainLayer) => {
    const cfg = layer.config;
    if (cfg.data_format !== "channels_last") {
      throw new UnsupportedLayerError(
        `layer '${layer.name}' uses data_format ${cfg.data_format}; only channels_last is supported`,
      );
    }
    if (pair(cfg.dilation_rate ?? 1, "dilation", layer.name) !== 1) {
      throw new UnsupportedLayerError(`layer '${layer.name}' uses dilation; not supported`);
    }
    if ((cfg.activation ?? "linear") !== "linear") {
      throw new UnsupportedLayerError(
        `layer '${layer.name}' fuses activation '${cfg.activation}' before its ` +
          "normalization partner; move it to a separate layer after the batch norm",
      );
    }
    const k = pair(cfg.kernel_size, "kernels", layer.name);
    const stride = pair(cfg.strides, "strides", layer.name);
    let padding: number;
    if (cfg.padding === "valid") {
      padding = 0;
    } else if (cfg.padding === "same" && stride === 1 && k % 2 === 1) {
      padding = (k - 1) / 2;
    } else {
      throw new UnsupportedLayerError(
        `layer '${layer.name}' uses padding '${cfg.padding}' with kernel ${k}, ` +
          "stride " + stride + "; only 'valid', or 'same' at stride 1 with odd kernels, maps to symmetric padding",
      );
    }
    const outC = cfg.filters as number;
    const raw = requireWeight(cp, `${layer.name}/kernel`);
    if (raw.length !== k * k * channels * outC) {
      throw new ExportError(
        `weight '${layer.name}/kernel' holds ${raw.length} values, expected ${k * k * channels * outC}`,
      );
    }
    // A conv bias, if present, is dropped: the engine normalizes with batch
    // statistics, and the mean subtraction removes any per-channel constant.
    drafts.push({
      entry: {
        kind: "conv_bn_act",
        in_channels: channels,
        out_channels: outC,
        kernel_size: k,
        stride,
        padding,
        activation: "identity",
        weight_blob: "",
        gamma: [],
        beta: [],
        eps: 0,
      },
      kernel: transposeConvKernel(raw, k, channels, outC),
    });
    convNames.push(layer.name);
    h = convOutput(h, k, stride, padding);
    w = convOutput(w, k, stride, padding);
    channels = outC;
  };

  for (const layer of cp.chain) {
    if (layer.className === "Dropout") {
      continue; // stateless at deployment
    }
    switch (phase) {
      case "conv":
      case "tail": {
        if (layer.className === "Conv2D") {
          openConv(layer);
          phase = "bn";
        } else if (layer.className === "Flatten") {
          if (drafts.length === 0) {
            throw new UnsupportedLayerError(
              `layer '${layer.name}' flattens before any conv block`,
            );
          }
          phase = "dense";
        } else if (
          phase === "tail" &&
          (layer.className === "Activation" || layer.className === "ReLU") &&
          !tailSeenAct &&
          drafts[drafts.length - 1].entry.pool === undefined
        ) {
          const name = layer.className === "ReLU" ? "relu" : layer.config.activation;
          const mapped = ACTIVATION_MAP[name];
          if (mapped === undefined) {
            throw new UnsupportedLayerError(
              `layer '${layer.name}' uses activation '${name}'; only relu, sigmoid and linear are supported`,
            );
          }
          drafts[drafts.length - 1].entry.activation = mapped;
          tailSeenAct = true;
        } else if (
          phase === "tail" &&
          (layer.className === "MaxPooling2D" || layer.className === "AveragePooling2D")
        ) {
          const current = drafts[drafts.length - 1].entry;
          if (current.pool !== undefined) {
            throw new UnsupportedLayerError(
              `layer '${layer.name}' is a second pooling stage on one block; not supported`,
            );
          }
          const size = pair(layer.config.pool_size, "pools", layer.name);
          const strides = pair(layer.config.strides ?? layer.config.pool_size, "pool strides", layer.name);
          if (strides !== size || layer.config.padding !== "valid") {
            throw new UnsupportedLayerError(
              `layer '${layer.name}' pools with stride ${strides} and padding ` +
                `'${layer.config.padding}'; only valid-padded stride-matching pools are supported`,
            );
          }
          current.pool = {
            kind: layer.className === "MaxPooling2D" ? "max" : "avg",
            size,
          };
          h = Math.floor((h - size) / size) + 1;
          w = Math.floor((w - size) / size) + 1;
        } else {
          throw new UnsupportedLayerError(
            `layer '${layer.name}' (${layer.className}) is not supported at this position`,
          );
        }
        break;
      }
      case "bn": {
        if (layer.className !== "BatchNormalization") {
          throw new UnsupportedLayerError(
            `conv '${convNames[convNames.length - 1]}' is followed by ` +
              `'${layer.name}' (${layer.className}); every conv needs a batch-norm partner`,
          );
        }
        const axis = layer.config.axis ?? -1;
        if (axis !== -1 && axis !== 3) {
          throw new UnsupportedLayerError(
            `layer '${layer.name}' normalizes axis ${axis}; only the channel axis is supported`,
          );
        }
        const current = drafts[drafts.length - 1].entry;
        const c = current.out_channels;
        const gamma = layer.config.scale === false
          ? new Float32Array(c).fill(1)
          : requireWeight(cp, `${layer.name}/gamma`);
        const beta = layer.config.center === false
          ? new Float32Array(c)
          : requireWeight(cp, `${layer.name}/beta`);
        if (gamma.length !== c || beta.length !== c) {
          throw new ExportError(
            `batch-norm '${layer.name}' carries ${gamma.length} channels, conv produces ${c}`,
          );
        }
        current.gamma = Array.from(gamma);
        current.beta = Array.from(beta);
        current.eps = layer.config.epsilon ?? 1e-3;
        phase = "tail";
        tailSeenAct = false;
        break;
      }
      case "dense": {
        if (layer.className !== "Dense") {
          throw new UnsupportedLayerError(
            `layer '${layer.name}' (${layer.className}) follows flatten; expected a dense classifier`,
          );
        }
        if ((layer.config.activation ?? "linear") !== "linear") {
          throw new UnsupportedLayerError(
            `dense layer '${layer.name}' fuses activation '${layer.config.activation}'; ` +
              "the engine's head emits raw logits",
          );
        }
        const units = layer.config.units as number;
        const features = h * w * channels;
        const raw = requireWeight(cp, `${layer.name}/kernel`);
        if (raw.length !== features * units) {
          throw new ExportError(
            `weight '${layer.name}/kernel' holds ${raw.length} values, ` +
              `expected ${features} x ${units} after the conv chain`,
          );
        }
        const bias =
          layer.config.use_bias === false
            ? null
            : requireWeight(cp, `${layer.name}/bias`);
        head = {
          entry: { in_features: features, out_features: units },
          kernel: transposeDenseKernel(raw, h, w, channels, units),
          bias,
        };
        phase = "done";
        break;
      }
      case "done":
        throw new UnsupportedLayerError(
          `layer '${layer.name}' (${layer.className}) appears after the classifier; ` +
            "nothing may follow the dense head",
        );
    }
  }

  if (phase === "bn") {
    throw new UnsupportedLayerError(
      `conv '${convNames[convNames.length - 1]}' has no batch-norm partner`,
    );
  }
  if (phase === "dense") {
    throw new UnsupportedLayerError("flatten layer is not followed by a dense classifier");
  }
  if (drafts.length === 0) {
    throw new ExportError("checkpoint contains no conv blocks");
  }
  if (
    convNames.length !== config.arch.length ||
    convNames.some((name, i) => name !== config.arch[i])
  ) {
    throw new ExportError(
      `architecture descriptor [${config.arch}] does not match the checkpoint's ` +
        `conv chain [${convNames}]`,
    );
  }

  const stem = basename(config.out).replace(/\.[^.]*$/, "");
  const blobs = new Map<string, Float32Array>();
  const blocks: BlockEntry[] = drafts.map((draft, i) => {
    const blob = `${stem}_block${i}.bin`;
    blobs.set(blob, draft.kernel);
    return { ...draft.entry, weight_blob: blob };
  });

  let headEntry: HeadEntry | null = null;
  if (head !== null) {
    const blob = `${stem}_head.bin`;
    blobs.set(blob, head.kernel);
    let biasBlob: string | null = null;
    if (head.bias !== null) {
      biasBlob = `${stem}_head_bias.bin`;
      blobs.set(biasBlob, head.bias);
    }
    headEntry = { ...head.entry, weight_blob: blob, bias_blob: biasBlob };
  }

  const manifest: Manifest = {
    version: MANIFEST_VERSION,
    input_size: [cp.inputShape[0], cp.inputShape[1]],
    blocks,
    head: headEntry,
  };
  writeManifest(config.out, manifest, blobs);
  return {
    manifest: config.out,
    blocks: blocks.length,
    headExported: headEntry !== null,
    blobs: Array.from(blobs.keys()),
  };
}
