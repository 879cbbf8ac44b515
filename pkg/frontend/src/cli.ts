#!/usr/bin/env node
/**
 * Command-line front end.
 *
 * Usage:
 *   simprune-export export --checkpoint <model.json> --arch <conv0,conv1,...> --out <manifest.json>
 */

import { exportModel } from "./export.js";

const USAGE =
  "usage: simprune-export export --checkpoint <model.json> " +
  "--arch <name,name,...> --out <manifest.json>";

interface Args {
  checkpoint?: string;
  arch?: string;
  out?: string;
}

export function runCli(argv: string[]): number {
  if (argv[0] === "--help" || argv[0] === "-h") {
    console.log(USAGE);
    return 0;
  }
  if (argv[0] !== "export") {
    console.error(`unknown command '${argv[0] ?? ""}'\n${USAGE}`);
    return 1;
  }

  const args: Args = {};
  for (let i = 1; i < argv.length; i++) {
    switch (argv[i]) {
      case "--checkpoint":
        args.checkpoint = argv[++i];
        break;
      case "--arch":
        args.arch = argv[++i];
        break;
      case "--out":
        args.out = argv[++i];
        break;
      default:
        console.error(`unknown argument '${argv[i]}'\n${USAGE}`);
        return 1;
    }
  }
  if (!args.checkpoint || !args.arch || !args.out) {
    console.error(`--checkpoint, --arch and --out are all required\n${USAGE}`);
    return 1;
  }

  try {
    const summary = exportModel({
      checkpoint: args.checkpoint,
      arch: args.arch.split(",").map((s) => s.trim()).filter((s) => s.length > 0),
      out: args.out,
    });
    const headNote = summary.headExported ? " and a dense head" : "";
    console.log(
      `exported ${summary.blocks} conv blocks${headNote} to ${summary.manifest}`,
    );
    return 0;
  } catch (err) {
    console.error(`export failed: ${(err as Error).message}`);
    return 1;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url.endsWith(process.argv[1].split("/").pop() ?? "");
if (invokedDirectly) {
  process.exit(runCli(process.argv.slice(2)));
}
