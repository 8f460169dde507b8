#!/usr/bin/env node
import * as fs from "node:fs";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { ParseError, SchemaError, TrajectoryFile, parseTrajectoryCsv } from "./csv";
import { RenderOptions, renderMinDistance, renderRgCompare, renderTrajectory } from "./figures";

const KINDS = ["trajectory", "min-distance", "rg-compare"] as const;
type Kind = (typeof KINDS)[number];

/** Bad invocation (flags, arity); distinct from bad input data only in message. */
class UsageError extends Error {}

const checkArity = (kind: Kind, count: number): void => {
  if (kind === "trajectory" && count !== 1) {
    throw new UsageError(`--kind trajectory takes exactly one --in path, got ${count}`);
  }
  if (kind === "rg-compare" && count < 2) {
    throw new UsageError(`--kind rg-compare needs at least two --in paths, got ${count}`);
  }
  if (count === 0) {
    throw new UsageError("at least one --in path is required");
  }
};

const renderKind = (kind: Kind, files: TrajectoryFile[], options: RenderOptions): string => {
  switch (kind) {
    case "trajectory":
      return renderTrajectory(files[0], options);
    case "min-distance":
      return renderMinDistance(files, options);
    case "rg-compare":
      return renderRgCompare(files, options);
  }
};

export function main(argv: string[]): number {
  let args;
  try {
    args = yargs(argv)
      .scriptName("koopnav-render")
      .command("render", "draw an SVG figure from trajectory CSV logs", (y) =>
        y
          .option("kind", {
            choices: KINDS,
            demandOption: true,
            describe: "figure type",
          })
          .option("in", {
            type: "string",
            array: true,
            demandOption: true,
            describe: "input trajectory CSV paths",
          })
          .option("out", {
            type: "string",
            demandOption: true,
            describe: "output SVG path",
          })
          .option("title", { type: "string", describe: "override the figure title" })
          .option("labels", {
            type: "string",
            array: true,
            describe: "legend labels, one per input",
          }),
      )
      .demandCommand(1, "expected the render command")
      .strict()
      .exitProcess(false)
      .fail((msg, err) => {
        throw new UsageError(msg ?? (err ? err.message : "invalid arguments"));
      })
      .parseSync();
  } catch (e) {
    process.stderr.write(`${(e as Error).message}\n`);
    return 2;
  }

  const kind = args.kind as Kind;
  const inputs = args.in as string[];
  const out = args.out as string;
  const options: RenderOptions = { title: args.title as string | undefined, labels: args.labels as string[] | undefined };

  try {
    checkArity(kind, inputs.length);
  } catch (e) {
    process.stderr.write(`${(e as Error).message}\n`);
    return 2;
  }

  const texts: string[] = [];
  for (const path of inputs) {
    try {
      texts.push(fs.readFileSync(path, "utf8"));
    } catch (e) {
      process.stderr.write(`cannot read ${path}: ${(e as NodeJS.ErrnoException).message}\n`);
      return 1;
    }
  }

  let svg: string;
  try {
    const files = texts.map((text) => parseTrajectoryCsv(text));
    svg = renderKind(kind, files, options);
  } catch (e) {
    if (e instanceof SchemaError || e instanceof ParseError) {
      process.stderr.write(`${e.message}\n`);
      return 2;
    }
    throw e;
  }

  try {
    fs.writeFileSync(out, svg, "utf8");
  } catch (e) {
    process.stderr.write(`cannot write ${out}: ${(e as NodeJS.ErrnoException).message}\n`);
    return 1;
  }
  process.stdout.write(`wrote ${out} (${kind}, ${inputs.length} input${inputs.length === 1 ? "" : "s"})\n`);
  return 0;
}

if (require.main === module) {
  process.exitCode = main(hideBin(process.argv));
}
