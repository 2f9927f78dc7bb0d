#!/usr/bin/env node
/** CLI: render the four benchmark panels and the summary table.
 *
 *   report --power a.csv --time b.csv --ber-static c.csv \
 *          --ber-dynamic d.csv --out dir
 */

import { mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { readRecords } from "./csv.js";
import { berPanel, powerPanel, timePanel } from "./figures.js";
import { summarize, summaryMarkdown } from "./summary.js";

export interface ReportArgs {
  power: string;
  time: string;
  berStatic: string;
  berDynamic: string;
  out: string;
}

/** Pure render step: CSV paths in, files written to the output dir. */
export function runReport(args: ReportArgs): string[] {
  const power = readRecords(args.power);
  const timing = readRecords(args.time);
  const berStatic = readRecords(args.berStatic);
  const berDynamic = readRecords(args.berDynamic);
  mkdirSync(args.out, { recursive: true });

  const outputs: Array<[string, string]> = [
    ["panel_a_power.svg", powerPanel(power)],
    ["panel_b_time.svg", timePanel(timing)],
    ["panel_c_ber_static.svg", berPanel(berStatic, "c) BER, static channel")],
    [
      "panel_d_ber_dynamic.svg",
      berPanel(berDynamic, "d) BER, time-varying channel"),
    ],
    [
      "summary.md",
      summaryMarkdown(
        summarize([
          { name: "power", records: power },
          { name: "time", records: timing },
          { name: "ber-static", records: berStatic },
          { name: "ber-dynamic", records: berDynamic },
        ]),
      ),
    ],
  ];
  const written: string[] = [];
  for (const [name, content] of outputs) {
    const path = join(args.out, name);
    writeFileSync(path, content, "utf8");
    written.push(path);
  }
  return written;
}

export function main(argv: string[]): number {
  const args = yargs(argv)
    .option("power", { type: "string", demandOption: true,
                      describe: "power benchmark CSV" })
    .option("time", { type: "string", demandOption: true,
                     describe: "timing benchmark CSV" })
    .option("ber-static", { type: "string", demandOption: true,
                            describe: "static-channel BER CSV" })
    .option("ber-dynamic", { type: "string", demandOption: true,
                             describe: "dynamic-channel BER CSV" })
    .option("out", { type: "string", demandOption: true,
                    describe: "output directory" })
    .strict()
    .parseSync();
  try {
    const written = runReport({
      power: args.power,
      time: args.time,
      berStatic: args["ber-static"],
      berDynamic: args["ber-dynamic"],
      out: args.out,
    });
    for (const path of written) console.log(`wrote ${path}`);
    return 0;
  } catch (err) {
    console.error(err instanceof Error ? err.message : String(err));
    return 1;
  }
}

if (process.argv[1] !== undefined &&
    (process.argv[1].endsWith("cli.js") || process.argv[1].endsWith("report"))) {
  process.exit(main(hideBin(process.argv)));
}
