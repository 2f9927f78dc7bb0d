/** Summary table: feasibility rates and mean timings per method. */

import { BenchRecord, mean, orderedMethods } from "./csv.js";

export interface SummaryRow {
  source: string;
  method: string;
  records: number;
  feasibleRate: number;
  meanMetric: number;
  meanWallTimeS: number;
}

export function summarize(
  sources: Array<{ name: string; records: BenchRecord[] }>,
): SummaryRow[] {
  const rows: SummaryRow[] = [];
  for (const { name, records } of sources) {
    for (const m of orderedMethods(records)) {
      const rs = records.filter((r) => r.method === m);
      rows.push({
        source: name,
        method: m,
        records: rs.length,
        feasibleRate: mean(rs.map((r) => (r.feasible ? 1 : 0))),
        meanMetric: mean(
          rs.filter((r) => Number.isFinite(r.metricValue))
            .map((r) => r.metricValue),
        ),
        meanWallTimeS: mean(rs.map((r) => r.wallTimeS)),
      });
    }
  }
  return rows;
}

export function summaryMarkdown(rows: SummaryRow[]): string {
  const lines = [
    "# Benchmark summary",
    "",
    "| source | method | records | feasible | mean metric | mean time [ms] |",
    "| --- | --- | ---: | ---: | ---: | ---: |",
  ];
  for (const r of rows) {
    lines.push(
      `| ${r.source} | ${r.method} | ${r.records} | ` +
        `${(r.feasibleRate * 100).toFixed(1)}% | ` +
        `${r.meanMetric.toPrecision(5)} | ` +
        `${(r.meanWallTimeS * 1e3).toFixed(3)} |`,
    );
  }
  lines.push("");
  return lines.join("\n");
}
