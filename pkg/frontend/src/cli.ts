/**
 * locus-plots <command> --in file.json --out figure.svg [--elev 22] [--azim -55]
 *
 * Commands:
 *   locus2d   Fig.2-style curve plot of a 2-D-chart diagram
 *   locus3d   Fig.3/4-style sheet plot (--mode locus|preimage)
 *   compare   side-by-side panels from a compare JSON (--mode locus|preimage)
 */
import * as fs from "node:fs";
import { parseCompare, parseDiagram } from "./schema.js";
import { plotComparePanels, plotLocus2D, plotLocus3D } from "./plots.js";

interface Args {
  command: string;
  infile: string;
  outfile: string;
  elev: number;
  azim: number;
  mode: "locus" | "preimage";
}

function parseArgs(argv: string[]): Args {
  const [command, ...rest] = argv;
  if (!command || !["locus2d", "locus3d", "compare"].includes(command)) {
    throw new Error(`usage: locus-plots locus2d|locus3d|compare --in <json> --out <svg> [--elev E] [--azim A] [--mode locus|preimage]`);
  }
  const args: Args = { command, infile: "", outfile: "", elev: 22, azim: -55, mode: "locus" };
  for (let i = 0; i < rest.length; i += 2) {
    const key = rest[i];
    const val = rest[i + 1];
    if (val === undefined) throw new Error(`missing value for ${key}`);
    switch (key) {
      case "--in":
        args.infile = val;
        break;
      case "--out":
        args.outfile = val;
        break;
      case "--elev":
        args.elev = Number(val);
        break;
      case "--azim":
        args.azim = Number(val);
        break;
      case "--mode":
        if (val !== "locus" && val !== "preimage") throw new Error(`--mode must be locus or preimage`);
        args.mode = val;
        break;
      default:
        throw new Error(`unknown flag ${key}`);
    }
  }
  if (!args.infile || !args.outfile) throw new Error("--in and --out are required");
  if (!Number.isFinite(args.elev) || !Number.isFinite(args.azim)) throw new Error("--elev/--azim must be numbers");
  return args;
}

export function main(argv: string[]): number {
  let args: Args;
  try {
    args = parseArgs(argv);
  } catch (err) {
    console.error((err as Error).message);
    return 64;
  }
  try {
    const text = fs.readFileSync(args.infile, "utf-8");
    const view = { elev: args.elev, azim: args.azim };
    let svg: string;
    if (args.command === "locus2d") {
      svg = plotLocus2D(parseDiagram(text), view).svg;
    } else if (args.command === "locus3d") {
      svg = plotLocus3D(parseDiagram(text), view, args.mode).svg;
    } else {
      const cmp = parseCompare(text);
      svg = plotComparePanels(
        [cmp.diagrams[0], cmp.diagrams[1]],
        [cmp.schemes[0], cmp.schemes[1]],
        view,
        args.mode
      ).svg;
    }
    fs.writeFileSync(args.outfile, svg);
    return 0;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

const isMain = process.argv[1] && process.argv[1].endsWith("cli.js");
if (isMain) {
  process.exit(main(process.argv.slice(2)));
}
